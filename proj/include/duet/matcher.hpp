// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "duet/corpus.hpp"
#include "duet/retrieval.hpp"

namespace duet {

/// Where word vectors for the embedding-cosine features come from.
struct EmbeddingSource {
  enum class Kind { kNone, kRandom, kGenerator };
  Kind kind = Kind::kNone;
  std::uint64_t seed = 0;  // kRandom
  std::size_t dim = 0;     // kRandom
  std::string generator;   // kGenerator: checkpoint manifest path, informational

  bool operator==(const EmbeddingSource&) const = default;
};

std::string_view to_string(EmbeddingSource::Kind kind);
EmbeddingSource::Kind parse_embedding_kind(std::string_view name);

/// Token -> vector lookup used for sentence-level embedding cosines.
///
/// The random variant derives each token's vector from a hash of the token
/// text and the seed, so it needs no vocabulary and is identical across
/// runs. The matrix variant looks tokens up through a vocabulary; reserved
/// ids and unknown tokens have no vector.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  static EmbeddingTable random(std::uint64_t seed, std::size_t dim);
  static EmbeddingTable from_matrix(Vocabulary vocab, Eigen::MatrixXd rows,
                                    std::string generator_path = {});

  bool enabled() const noexcept { return source_.kind != EmbeddingSource::Kind::kNone; }
  const EmbeddingSource& source() const noexcept { return source_; }
  std::size_t dim() const noexcept;

  std::optional<Eigen::VectorXd> lookup(std::string_view token) const;

  /// Mean of the vectors of tokens that have one; zero vector otherwise.
  Eigen::VectorXd sentence_vector(std::span<const std::string> tokens) const;

 private:
  struct Table {
    Vocabulary vocab;
    Eigen::MatrixXd rows;
  };

  EmbeddingSource source_;
  std::shared_ptr<const Table> table_;
};

inline constexpr std::size_t kFeatureCount = 8;
inline constexpr int kFeatureVersion = 1;

/// Fixed feature order (versioned by kFeatureVersion).
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "overlap_qq",   "overlap_qr",   "tfidf_cos_qq", "tfidf_cos_qr",
    "emb_cos_qq",   "emb_cos_qr",   "len_ratio",    "bias"};

namespace feature {
inline constexpr std::size_t kOverlapQQ = 0;
inline constexpr std::size_t kOverlapQR = 1;
inline constexpr std::size_t kTfidfQQ = 2;
inline constexpr std::size_t kTfidfQR = 3;
inline constexpr std::size_t kEmbQQ = 4;
inline constexpr std::size_t kEmbQR = 5;
inline constexpr std::size_t kLenRatio = 6;
inline constexpr std::size_t kBias = 7;
}  // namespace feature

using FeatureVector = std::array<double, kFeatureCount>;

/// Jaccard index of the token sets; 0 when both are empty.
double jaccard(std::span<const std::string> a, std::span<const std::string> b);

/// q*-dependent features are 0 when q_star is null (the generated-reply
/// case); embedding features are 0 when the table is disabled.
FeatureVector extract_features(std::span<const std::string> q, const TokenSeq* q_star,
                               std::span<const std::string> r_star, const InvertedIndex& index,
                               const EmbeddingTable& embeddings);

struct MatcherMetadata {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double learning_rate = 0.0;
  double l2 = 0.0;
  double final_loss = 0.0;
  std::vector<double> loss_history;
  std::size_t n_examples = 0;
  EmbeddingSource embeddings;
};

struct MatcherModel {
  std::vector<double> weights = std::vector<double>(kFeatureCount, 0.0);
  MatcherMetadata metadata;

  /// JSON {version, feature_names, weights, metadata}.
  std::string to_json() const;
  static MatcherModel from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static MatcherModel load(const std::filesystem::path& path);
};

double sigmoid(double x);

/// sigmoid(w . f), in (0, 1).
double score(const MatcherModel& model, const FeatureVector& features);

/// A ⟨q, q*, r*⟩ triple named by pair ids, with its match label.
struct MatchSample {
  PairId query = 0;
  PairId source = 0;  // pair supplying q* and r*
  int label = 0;
};

/// One positive (q, q, r) per pair, followed by `ratio` negatives whose q*
/// and r* come from a uniformly sampled different pair.
std::vector<MatchSample> generate_negatives(std::span<const QueryReplyPair> pairs, std::size_t ratio,
                                            std::uint64_t seed);

struct LabeledExample {
  FeatureVector features{};
  int label = 0;
};

std::vector<LabeledExample> featurize(std::span<const MatchSample> samples,
                                      std::span<const QueryReplyPair> pairs,
                                      const InvertedIndex& index, const EmbeddingTable& embeddings);

/// Mean logistic cross-entropy plus (l2 / 2) * |w|^2, with its gradient.
/// Dimension-generic: every row must have weights.size() entries.
struct LogisticObjective {
  double loss = 0.0;
  std::vector<double> gradient;
};

LogisticObjective logistic_objective(std::span<const double> weights,
                                     std::span<const std::vector<double>> rows,
                                     std::span<const int> labels, double l2);

struct MatcherTrainOptions {
  std::size_t epochs = 500;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

/// Full-batch gradient descent from zero weights. Throws unless both labels
/// are present. loss_history[e] is the objective before epoch e's update,
/// and final_loss the objective after the last one.
MatcherModel train_matcher(std::span<const LabeledExample> examples,
                           const MatcherTrainOptions& options = {});

double accuracy(const MatcherModel& model, std::span<const LabeledExample> examples);

struct RankedCandidate {
  PairId id = 0;
  double score = 0.0;
  std::size_t coarse_rank = 0;
};

/// Fine step: scores every candidate with the matcher using q-q* and q-r*
/// features and returns the best, earlier coarse rank winning exact ties.
/// Empty candidates give nullopt.
std::optional<RankedCandidate> rank_candidates(std::span<const std::string> q,
                                               const CandidateSet& candidates,
                                               std::span<const QueryReplyPair> pairs,
                                               const MatcherModel& model, const InvertedIndex& index,
                                               const EmbeddingTable& embeddings);

}  // namespace duet
