// SPDX-License-Identifier: Apache-2.0
#include "duet/ensemble.hpp"

#include <algorithm>
#include <chrono>

#include "duet/error.hpp"

namespace duet {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

bool degenerate(const TokenSeq& reply) {
  return std::all_of(reply.begin(), reply.end(), [](const std::string& t) { return t == kUnkToken; });
}

}  // namespace

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kRetrieved: return "retrieved";
    case Provenance::kGenerated: return "generated";
    case Provenance::kFallback: return "fallback";
  }
  return "?";
}

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kEnsemble: return "ensemble";
    case Mode::kRetrievalOnly: return "retrieval_only";
    case Mode::kGenerationOnly: return "generation_only";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  if (name == "ensemble") return Mode::kEnsemble;
  if (name == "retrieval_only") return Mode::kRetrievalOnly;
  if (name == "generation_only") return Mode::kGenerationOnly;
  throw Error("unknown mode '" + std::string(name) + "' (expected ensemble, retrieval_only or generation_only)");
}

Provenance parse_provenance(std::string_view name) {
  if (name == "retrieved") return Provenance::kRetrieved;
  if (name == "generated") return Provenance::kGenerated;
  if (name == "fallback") return Provenance::kFallback;
  throw Error("unknown provenance '" + std::string(name) + "'");
}

std::optional<Candidate> retrieve_best(std::span<const std::string> q, const KnowledgeBase& kb, std::size_t k) {
  const CandidateSet coarse = coarse_retrieve(kb.index, q, k);
  const auto best = rank_candidates(q, coarse, kb.pairs, kb.matcher, kb.index, kb.embeddings);
  if (!best) return std::nullopt;
  const auto& pair = kb.pairs.at(static_cast<std::size_t>(best->id));
  return Candidate{pair.reply, Provenance::kRetrieved, pair.id, pair.query, best->score};
}

double score_candidate(std::span<const std::string> q, const Candidate& candidate, const KnowledgeBase& kb) {
  const TokenSeq* q_star = candidate.provenance == Provenance::kRetrieved ? &candidate.matched_query : nullptr;
  return score(kb.matcher, extract_features(q, q_star, candidate.reply, kb.index, kb.embeddings));
}

ChatResponse post_rerank(std::span<const std::string> q, std::optional<Candidate> retrieved,
                         std::optional<Candidate> generated, const KnowledgeBase& kb) {
  if (generated && degenerate(generated->reply)) generated.reset();
  if (!retrieved && !generated) throw Error("post_rerank: no candidate to choose from");

  ChatResponse response;
  if (retrieved) {
    retrieved->score = score_candidate(q, *retrieved, kb);
    response.candidates.push_back(std::move(*retrieved));
  }
  if (generated) {
    generated->score = score_candidate(q, *generated, kb);
    response.candidates.push_back(std::move(*generated));
  }
  // Retrieved comes first, so strict > keeps it on ties.
  std::size_t winner = 0;
  for (std::size_t i = 1; i < response.candidates.size(); ++i) {
    if (*response.candidates[i].score > *response.candidates[winner].score) winner = i;
  }
  response.reply = response.candidates[winner].reply;
  response.provenance = response.candidates[winner].provenance;
  return response;
}

SelectionStats selection_stats(std::span<const ChatResponse> responses) {
  SelectionStats stats;
  std::size_t retrieved = 0;
  for (const auto& r : responses) {
    if (r.provenance == Provenance::kFallback) continue;
    ++stats.counted;
    if (r.provenance == Provenance::kRetrieved) ++retrieved;
  }
  if (stats.counted == 0) throw Error("selection_stats: no retrieved or generated responses");
  stats.retrieved = static_cast<double>(retrieved) / static_cast<double>(stats.counted);
  stats.generated = 1.0 - stats.retrieved;
  return stats;
}

Ensemble::Ensemble(std::shared_ptr<const KnowledgeBase> kb, std::shared_ptr<const gen::Generator> generator,
                   EnsembleOptions options)
    : kb_(std::move(kb)), generator_(std::move(generator)), options_(std::move(options)) {
  if (!kb_) throw Error("Ensemble: knowledge base is required");
  if (options_.k == 0) throw Error("Ensemble: k must be at least 1");
  if (options_.mode != Mode::kRetrievalOnly && !generator_) {
    throw Error("Ensemble: mode " + std::string(to_string(options_.mode)) + " needs a generator");
  }
}

ChatResponse Ensemble::fallback() const {
  ChatResponse response;
  response.reply = tokenize(options_.apology, TokenizerOptions{.lowercase = false});
  response.provenance = Provenance::kFallback;
  response.candidates.push_back(Candidate{response.reply, Provenance::kFallback, std::nullopt, {}, std::nullopt});
  return response;
}

ChatResponse Ensemble::respond(std::string_view text, const RequestOptions& request) const {
  return respond_tokens(tokenize(text, options_.tokenizer), request);
}

ChatResponse Ensemble::respond_tokens(std::span<const std::string> q, const RequestOptions& request) const {
  if (q.empty()) throw Error("empty query");
  const Mode mode = request.mode.value_or(options_.mode);
  if (mode != Mode::kRetrievalOnly && !generator_) {
    throw Error("mode " + std::string(to_string(mode)) + " needs a generator, none is loaded");
  }
  gen::DecodeConfig decode = options_.decode;
  if (request.max_len) decode.max_len = *request.max_len;
  if (request.beam_width) decode.beam_width = *request.beam_width;

  const auto start = Clock::now();
  Timings timings;

  const bool biseq = generator_ && generator_->params.arch == gen::Architecture::kBiSeq2Seq;
  std::optional<Candidate> retrieved;
  if (mode != Mode::kGenerationOnly || biseq) {
    const auto t = Clock::now();
    retrieved = retrieve_best(q, *kb_, options_.k);
    timings.retrieve_ms = ms_since(t);
  }

  ChatResponse response;
  if (mode == Mode::kRetrievalOnly) {
    if (!retrieved) {
      response = fallback();
    } else {
      const auto t = Clock::now();
      response = post_rerank(q, std::move(retrieved), std::nullopt, *kb_);
      timings.rerank_ms = ms_since(t);
    }
  } else {
    std::optional<Candidate> generated;
    if (retrieved || !biseq) {
      const auto t = Clock::now();
      const auto q_ids = encode(q, generator_->enc_vocab, false);
      std::vector<TokenId> r_ids;
      if (biseq) r_ids = encode(retrieved->reply, generator_->enc_vocab, false);
      if (biseq && r_ids.empty()) r_ids.push_back(reserved::kUnk);
      const auto out = gen::generate(generator_->params, q_ids, r_ids, decode);
      generated = Candidate{decode_ids(out, generator_->dec_vocab), Provenance::kGenerated, std::nullopt, {}, std::nullopt};
      timings.generate_ms = ms_since(t);
    }

    if (mode == Mode::kGenerationOnly) {
      if (!generated) {
        response = fallback();
      } else {
        // Generation-only returns the decoder output as is, even when empty.
        generated->score = score_candidate(q, *generated, *kb_);
        response.reply = generated->reply;
        response.provenance = Provenance::kGenerated;
        response.candidates.push_back(std::move(*generated));
      }
    } else {
      if (generated && degenerate(generated->reply)) generated.reset();
      if (!retrieved && !generated) {
        response = fallback();
      } else {
        const auto t = Clock::now();
        response = post_rerank(q, std::move(retrieved), std::move(generated), *kb_);
        timings.rerank_ms = ms_since(t);
      }
    }
  }
  timings.total_ms = ms_since(start);
  response.timings = timings;
  return response;
}

EmbeddingTable make_embeddings(const EmbeddingSource& source, const gen::Generator* generator) {
  switch (source.kind) {
    case EmbeddingSource::Kind::kNone: return {};
    case EmbeddingSource::Kind::kRandom: return EmbeddingTable::random(source.seed, source.dim);
    case EmbeddingSource::Kind::kGenerator:
      if (!generator) throw Error("matcher was trained with generator embeddings but no generator is available");
      return EmbeddingTable::from_matrix(generator->enc_vocab, generator->params.enc_q.embedding, source.generator);
  }
  return {};
}

std::shared_ptr<const KnowledgeBase> load_knowledge_base(const ArtifactPaths& paths,
                                                         const TokenizerOptions& tokenizer,
                                                         const gen::Generator* generator) {
  auto kb = std::make_shared<KnowledgeBase>();
  try {
    kb->pairs = load_pairs(paths.database, corpus_format_for(paths.database), LoadOptions{tokenizer, 1}).pairs;
  } catch (const ArtifactError&) {
    throw;
  } catch (const std::exception& e) {
    throw ArtifactError("database " + paths.database.string(), e.what());
  }
  try {
    kb->index = InvertedIndex::load(paths.index);
  } catch (const ArtifactError&) {
    throw;
  } catch (const std::exception& e) {
    throw ArtifactError("index " + paths.index.string(), e.what());
  }
  if (kb->index.n_docs() != kb->pairs.size()) {
    throw ArtifactError("index " + paths.index.string(),
                        "indexes " + std::to_string(kb->index.n_docs()) + " documents but the database has " +
                            std::to_string(kb->pairs.size()) + " pairs");
  }
  try {
    kb->matcher = MatcherModel::load(paths.matcher);
  } catch (const ArtifactError&) {
    throw;
  } catch (const std::exception& e) {
    throw ArtifactError("matcher " + paths.matcher.string(), e.what());
  }

  const auto& source = kb->matcher.metadata.embeddings;
  std::optional<gen::Generator> own;
  if (source.kind == EmbeddingSource::Kind::kGenerator) {
    namespace fs = std::filesystem;
    const std::string matcher_name = "matcher " + paths.matcher.string();
    const fs::path recorded = source.generator;
    if (!recorded.empty()) {
      // The checkpoint the matcher was trained against, reusing the
      // configured generator when it is the same one.
      if (!fs::exists(recorded)) throw ArtifactError(matcher_name, "embedding checkpoint " + recorded.string() + " is missing");
      const bool same = generator && !paths.generator.empty() && fs::exists(paths.generator) &&
                        fs::equivalent(gen::manifest_path(recorded), gen::manifest_path(paths.generator));
      if (!same) {
        own = gen::load_checkpoint(recorded);
        generator = &*own;
      }
    } else if (!generator && !paths.generator.empty()) {
      own = gen::load_checkpoint(paths.generator);
      generator = &*own;
    }
    if (!generator) throw ArtifactError(matcher_name, "needs generator embeddings; no generator available");
  }
  try {
    kb->embeddings = make_embeddings(source, generator);
  } catch (const std::exception& e) {
    throw ArtifactError("matcher " + paths.matcher.string(), e.what());
  }
  return kb;
}

Ensemble load_ensemble(const ArtifactPaths& paths, const EnsembleOptions& options) {
  std::shared_ptr<const gen::Generator> generator;
  if (!paths.generator.empty()) {
    generator = std::make_shared<const gen::Generator>(gen::load_checkpoint(paths.generator));
  } else if (options.mode != Mode::kRetrievalOnly) {
    throw ArtifactError("generator", "mode " + std::string(to_string(options.mode)) + " needs a generator checkpoint");
  }
  auto kb = load_knowledge_base(paths, options.tokenizer, generator.get());
  return Ensemble(std::move(kb), std::move(generator), options);
}

}  // namespace duet
