// SPDX-License-Identifier: Apache-2.0
//
// The retrieve -> generate -> post-rerank pipeline.
//
//   q ──► coarse_retrieve ──► rank_candidates ──► r* ─┐
//   │                                                 ├─► post_rerank ──► reply
//   └──────────────► generate(q, r*) ───────────► r⁺ ─┘
//
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "duet/corpus.hpp"
#include "duet/gen/checkpoint.hpp"
#include "duet/gen/decode.hpp"
#include "duet/matcher.hpp"
#include "duet/retrieval.hpp"

namespace duet {

enum class Provenance { kRetrieved, kGenerated, kFallback };
enum class Mode { kEnsemble, kRetrievalOnly, kGenerationOnly };

std::string_view to_string(Provenance p);
std::string_view to_string(Mode m);
/// Throws Error on unknown names.
Mode parse_mode(std::string_view name);
Provenance parse_provenance(std::string_view name);

struct Candidate {
  TokenSeq reply;
  Provenance provenance = Provenance::kRetrieved;
  std::optional<PairId> source_pair_id;  // retrieved only
  TokenSeq matched_query;                // q* of the source pair, retrieved only
  std::optional<double> score;
};

struct Timings {
  double retrieve_ms = 0.0;
  double generate_ms = 0.0;
  double rerank_ms = 0.0;
  double total_ms = 0.0;
};

struct ChatResponse {
  TokenSeq reply;
  Provenance provenance = Provenance::kRetrieved;
  /// The candidates the reply was chosen from (one or two).
  std::vector<Candidate> candidates;
  Timings timings;
};

/// The retrieval side: pair database, its index, the matcher and the
/// embedding table the matcher was trained with.
struct KnowledgeBase {
  std::vector<QueryReplyPair> pairs;
  InvertedIndex index;
  MatcherModel matcher;
  EmbeddingTable embeddings;
};

/// Coarse retrieval followed by matcher ranking. nullopt when the coarse
/// step finds nothing.
std::optional<Candidate> retrieve_best(std::span<const std::string> q, const KnowledgeBase& kb,
                                       std::size_t k = kDefaultCoarseK);

/// Scores the candidates with the q-r matcher (q* features for the
/// retrieved one, zeroed for the generated one) and picks the higher score,
/// the retrieved candidate winning exact ties. Generated candidates that
/// are empty or consist only of unknown tokens are dropped before scoring.
/// Throws if no candidate remains.
ChatResponse post_rerank(std::span<const std::string> q, std::optional<Candidate> retrieved,
                         std::optional<Candidate> generated, const KnowledgeBase& kb);

/// Matcher score of one candidate against q.
double score_candidate(std::span<const std::string> q, const Candidate& candidate, const KnowledgeBase& kb);

struct SelectionStats {
  double retrieved = 0.0;
  double generated = 0.0;
  std::size_t counted = 0;  // responses with retrieved/generated provenance
};

/// Proportions over responses whose provenance is retrieved or generated;
/// fallback responses are not counted. Throws when nothing is countable.
SelectionStats selection_stats(std::span<const ChatResponse> responses);

inline constexpr std::string_view kDefaultApology = "Sorry, I have nothing to say about that.";

struct EnsembleOptions {
  Mode mode = Mode::kEnsemble;
  std::size_t k = kDefaultCoarseK;
  gen::DecodeConfig decode;
  std::string apology = std::string(kDefaultApology);
  TokenizerOptions tokenizer;
};

/// Per-request overrides.
struct RequestOptions {
  std::optional<Mode> mode;
  std::optional<std::size_t> max_len;
  std::optional<std::size_t> beam_width;
};

/// Immutable once built; respond() is safe to call concurrently.
class Ensemble {
 public:
  Ensemble(std::shared_ptr<const KnowledgeBase> kb, std::shared_ptr<const gen::Generator> generator,
           EnsembleOptions options);

  /// Tokenizes `text` and runs the pipeline for the effective mode. When the
  /// pipeline has no candidate to offer (nothing retrieved and no generation
  /// possible) the reply is the configured apology with provenance fallback.
  /// Throws Error for an empty query or a mode that needs a missing
  /// generator.
  ChatResponse respond(std::string_view text, const RequestOptions& request = {}) const;
  ChatResponse respond_tokens(std::span<const std::string> q, const RequestOptions& request = {}) const;

  const KnowledgeBase& knowledge_base() const noexcept { return *kb_; }
  const gen::Generator* generator() const noexcept { return generator_.get(); }
  const EnsembleOptions& options() const noexcept { return options_; }

 private:
  ChatResponse fallback() const;

  std::shared_ptr<const KnowledgeBase> kb_;
  std::shared_ptr<const gen::Generator> generator_;
  EnsembleOptions options_;
};

struct ArtifactPaths {
  std::filesystem::path database;   // corpus file (tsv or jsonl)
  std::filesystem::path index;
  std::filesystem::path matcher;
  std::filesystem::path generator;  // checkpoint dir or manifest; optional for retrieval_only
};

/// Loads the database, index and matcher, and rebuilds the matcher's
/// embedding table (`generator` is used when the matcher was trained on
/// generator embeddings). Throws ArtifactError naming the failing artifact.
std::shared_ptr<const KnowledgeBase> load_knowledge_base(const ArtifactPaths& paths,
                                                         const TokenizerOptions& tokenizer,
                                                         const gen::Generator* generator = nullptr);

/// Embedding table described by `source`; kGenerator reads the query
/// encoder's table from `generator`.
EmbeddingTable make_embeddings(const EmbeddingSource& source, const gen::Generator* generator);

/// Loads everything `paths` names and checks that the mode has what it needs.
Ensemble load_ensemble(const ArtifactPaths& paths, const EnsembleOptions& options);

}  // namespace duet
