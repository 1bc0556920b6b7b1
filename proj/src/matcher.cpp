// SPDX-License-Identifier: Apache-2.0
#include "duet/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "duet/error.hpp"

namespace duet {
namespace {

constexpr int kMatcherVersion = 1;

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double dense_cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

nlohmann::ordered_json to_json(const EmbeddingSource& source) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(source.kind);
  if (source.kind == EmbeddingSource::Kind::kRandom) {
    j["seed"] = source.seed;
    j["dim"] = source.dim;
  }
  if (source.kind == EmbeddingSource::Kind::kGenerator) j["generator"] = source.generator;
  return j;
}

EmbeddingSource embedding_source_from_json(const nlohmann::json& j) {
  EmbeddingSource source;
  source.kind = parse_embedding_kind(j.at("kind").get<std::string>());
  source.seed = j.value("seed", std::uint64_t{0});
  source.dim = j.value("dim", std::size_t{0});
  source.generator = j.value("generator", std::string{});
  return source;
}

}  // namespace

std::string_view to_string(EmbeddingSource::Kind kind) {
  switch (kind) {
    case EmbeddingSource::Kind::kNone:
      return "none";
    case EmbeddingSource::Kind::kRandom:
      return "random";
    case EmbeddingSource::Kind::kGenerator:
      return "generator";
  }
  return "none";
}

EmbeddingSource::Kind parse_embedding_kind(std::string_view name) {
  if (name == "none") return EmbeddingSource::Kind::kNone;
  if (name == "random") return EmbeddingSource::Kind::kRandom;
  if (name == "generator") return EmbeddingSource::Kind::kGenerator;
  throw Error("unknown embedding source '" + std::string(name) + "' (expected none, random or generator)");
}

EmbeddingTable EmbeddingTable::random(std::uint64_t seed, std::size_t dim) {
  if (dim == 0) throw Error("random embeddings need a positive dimension");
  EmbeddingTable table;
  table.source_ = {EmbeddingSource::Kind::kRandom, seed, dim, {}};
  return table;
}

EmbeddingTable EmbeddingTable::from_matrix(Vocabulary vocab, Eigen::MatrixXd rows,
                                           std::string generator_path) {
  if (static_cast<std::size_t>(rows.rows()) != vocab.size()) {
    throw Error("embedding matrix has " + std::to_string(rows.rows()) + " rows for a vocabulary of " +
                std::to_string(vocab.size()));
  }
  EmbeddingTable table;
  table.source_ = {EmbeddingSource::Kind::kGenerator, 0, static_cast<std::size_t>(rows.cols()),
                   std::move(generator_path)};
  table.table_ = std::make_shared<const Table>(Table{std::move(vocab), std::move(rows)});
  return table;
}

std::size_t EmbeddingTable::dim() const noexcept { return source_.dim; }

std::optional<Eigen::VectorXd> EmbeddingTable::lookup(std::string_view token) const {
  switch (source_.kind) {
    case EmbeddingSource::Kind::kNone:
      return std::nullopt;
    case EmbeddingSource::Kind::kRandom: {
      std::mt19937_64 rng(fnv1a(token) ^ (source_.seed * 0x9e3779b97f4a7c15ULL));
      Eigen::VectorXd v(static_cast<Eigen::Index>(source_.dim));
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        v[i] = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
      }
      return v;
    }
    case EmbeddingSource::Kind::kGenerator: {
      const TokenId id = table_->vocab.id(token);
      if (id < reserved::kCount) return std::nullopt;
      return Eigen::VectorXd(table_->rows.row(id).transpose());
    }
  }
  return std::nullopt;
}

Eigen::VectorXd EmbeddingTable::sentence_vector(std::span<const std::string> tokens) const {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  std::size_t found = 0;
  for (const auto& token : tokens) {
    if (auto v = lookup(token)) {
      sum += *v;
      ++found;
    }
  }
  if (found) sum /= static_cast<double>(found);
  return sum;
}

double jaccard(std::span<const std::string> a, std::span<const std::string> b) {
  const std::set<std::string_view> sa(a.begin(), a.end());
  const std::set<std::string_view> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : sa) common += sb.count(t);
  return static_cast<double>(common) / static_cast<double>(sa.size() + sb.size() - common);
}

FeatureVector extract_features(std::span<const std::string> q, const TokenSeq* q_star,
                               std::span<const std::string> r_star, const InvertedIndex& index,
                               const EmbeddingTable& embeddings) {
  FeatureVector f{};
  const SparseVector q_tfidf = tfidf_vector(q, index);
  f[feature::kOverlapQR] = jaccard(q, r_star);
  f[feature::kTfidfQR] = cosine(q_tfidf, tfidf_vector(r_star, index));

  std::optional<Eigen::VectorXd> q_emb;
  if (embeddings.enabled()) {
    q_emb = embeddings.sentence_vector(q);
    f[feature::kEmbQR] = dense_cosine(*q_emb, embeddings.sentence_vector(r_star));
  }

  if (q_star != nullptr) {
    f[feature::kOverlapQQ] = jaccard(q, *q_star);
    f[feature::kTfidfQQ] = cosine(q_tfidf, tfidf_vector(*q_star, index));
    if (q_emb) f[feature::kEmbQQ] = dense_cosine(*q_emb, embeddings.sentence_vector(*q_star));
    const auto lq = static_cast<double>(q.size());
    const auto ls = static_cast<double>(q_star->size());
    if (lq > 0 && ls > 0) f[feature::kLenRatio] = std::min(lq, ls) / std::max(lq, ls);
  }
  f[feature::kBias] = 1.0;
  return f;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double score(const MatcherModel& model, const FeatureVector& features) {
  double z = 0.0;
  for (std::size_t i = 0; i < kFeatureCount; ++i) z += model.weights[i] * features[i];
  return sigmoid(z);
}

std::vector<MatchSample> generate_negatives(std::span<const QueryReplyPair> pairs, std::size_t ratio,
                                            std::uint64_t seed) {
  if (pairs.size() < 2) throw Error("generate_negatives: need at least 2 pairs");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> other(0, pairs.size() - 2);
  std::vector<MatchSample> out;
  out.reserve(pairs.size() * (1 + ratio));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.push_back({pairs[i].id, pairs[i].id, 1});
    for (std::size_t k = 0; k < ratio; ++k) {
      std::size_t j = other(rng);
      if (j >= i) ++j;
      out.push_back({pairs[i].id, pairs[j].id, 0});
    }
  }
  return out;
}

std::vector<LabeledExample> featurize(std::span<const MatchSample> samples,
                                      std::span<const QueryReplyPair> pairs,
                                      const InvertedIndex& index, const EmbeddingTable& embeddings) {
  std::vector<LabeledExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto& query = pairs[static_cast<std::size_t>(s.query)];
    const auto& source = pairs[static_cast<std::size_t>(s.source)];
    out.push_back({extract_features(query.query, &source.query, source.reply, index, embeddings), s.label});
  }
  return out;
}

LogisticObjective logistic_objective(std::span<const double> weights,
                                     std::span<const std::vector<double>> rows,
                                     std::span<const int> labels, double l2) {
  if (rows.size() != labels.size() || rows.empty()) {
    throw Error("logistic_objective: rows and labels must be non-empty and aligned");
  }
  const std::size_t dim = weights.size();
  LogisticObjective out;
  out.gradient.assign(dim, 0.0);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    const auto& x = rows[n];
    if (x.size() != dim) throw Error("logistic_objective: row dimension mismatch");
    double z = 0.0;
    for (std::size_t i = 0; i < dim; ++i) z += weights[i] * x[i];
    // log(1 + e^z) - y z, written to avoid overflow for large |z|.
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    out.loss += softplus - labels[n] * z;
    const double residual = sigmoid(z) - labels[n];
    for (std::size_t i = 0; i < dim; ++i) out.gradient[i] += residual * x[i];
  }
  const auto count = static_cast<double>(rows.size());
  out.loss /= count;
  double sq = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    out.gradient[i] = out.gradient[i] / count + l2 * weights[i];
    sq += weights[i] * weights[i];
  }
  out.loss += 0.5 * l2 * sq;
  return out;
}

MatcherModel train_matcher(std::span<const LabeledExample> examples, const MatcherTrainOptions& options) {
  bool has_pos = false;
  bool has_neg = false;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  rows.reserve(examples.size());
  labels.reserve(examples.size());
  for (const auto& e : examples) {
    if (e.label != 0 && e.label != 1) throw Error("train_matcher: labels must be 0 or 1");
    has_pos |= e.label == 1;
    has_neg |= e.label == 0;
    rows.emplace_back(e.features.begin(), e.features.end());
    labels.push_back(e.label);
  }
  if (!has_pos || !has_neg) throw Error("train_matcher: examples must contain both labels");

  MatcherModel model;
  model.metadata.seed = options.seed;
  model.metadata.epochs = options.epochs;
  model.metadata.learning_rate = options.learning_rate;
  model.metadata.l2 = options.l2;
  model.metadata.n_examples = examples.size();
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto objective = logistic_objective(model.weights, rows, labels, options.l2);
    model.metadata.loss_history.push_back(objective.loss);
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      model.weights[i] -= options.learning_rate * objective.gradient[i];
    }
  }
  model.metadata.final_loss = logistic_objective(model.weights, rows, labels, options.l2).loss;
  return model;
}

double accuracy(const MatcherModel& model, std::span<const LabeledExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& e : examples) correct += (score(model, e.features) >= 0.5) == (e.label == 1);
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

std::optional<RankedCandidate> rank_candidates(std::span<const std::string> q,
                                               const CandidateSet& candidates,
                                               std::span<const QueryReplyPair> pairs,
                                               const MatcherModel& model, const InvertedIndex& index,
                                               const EmbeddingTable& embeddings) {
  std::optional<RankedCandidate> best;
  for (std::size_t rank = 0; rank < candidates.entries.size(); ++rank) {
    const PairId id = candidates.entries[rank].id;
    if (id < 0 || static_cast<std::size_t>(id) >= pairs.size()) {
      throw Error("rank_candidates: candidate id " + std::to_string(id) + " outside the pair database");
    }
    const auto& pair = pairs[static_cast<std::size_t>(id)];
    const double s = score(model, extract_features(q, &pair.query, pair.reply, index, embeddings));
    if (!best || s > best->score) best = RankedCandidate{id, s, rank};
  }
  return best;
}

std::string MatcherModel::to_json() const {
  nlohmann::ordered_json doc;
  doc["version"] = kMatcherVersion;
  doc["feature_version"] = kFeatureVersion;
  std::vector<std::string> names(kFeatureNames.begin(), kFeatureNames.end());
  doc["feature_names"] = names;
  doc["weights"] = weights;
  nlohmann::ordered_json meta;
  meta["seed"] = metadata.seed;
  meta["epochs"] = metadata.epochs;
  meta["learning_rate"] = metadata.learning_rate;
  meta["l2"] = metadata.l2;
  meta["final_loss"] = metadata.final_loss;
  meta["n_examples"] = metadata.n_examples;
  meta["loss_history"] = metadata.loss_history;
  meta["embeddings"] = duet::to_json(metadata.embeddings);
  doc["metadata"] = meta;
  return doc.dump(1) + "\n";
}

MatcherModel MatcherModel::from_json(std::string_view text) {
  const auto doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ArtifactError("matcher", "not a JSON object");
  if (doc.value("version", 0) != kMatcherVersion) throw ArtifactError("matcher", "unsupported version");
  if (doc.value("feature_version", 0) != kFeatureVersion) {
    throw ArtifactError("matcher", "feature set version mismatch");
  }
  const auto names = doc.at("feature_names").get<std::vector<std::string>>();
  if (names.size() != kFeatureCount || !std::equal(names.begin(), names.end(), kFeatureNames.begin())) {
    throw ArtifactError("matcher", "feature names do not match this build");
  }
  MatcherModel model;
  model.weights = doc.at("weights").get<std::vector<double>>();
  if (model.weights.size() != kFeatureCount) throw ArtifactError("matcher", "weight vector length mismatch");
  const auto& meta = doc.at("metadata");
  model.metadata.seed = meta.value("seed", std::uint64_t{0});
  model.metadata.epochs = meta.value("epochs", std::size_t{0});
  model.metadata.learning_rate = meta.value("learning_rate", 0.0);
  model.metadata.l2 = meta.value("l2", 0.0);
  model.metadata.final_loss = meta.value("final_loss", 0.0);
  model.metadata.n_examples = meta.value("n_examples", std::size_t{0});
  model.metadata.loss_history = meta.value("loss_history", std::vector<double>{});
  if (meta.contains("embeddings")) model.metadata.embeddings = embedding_source_from_json(meta["embeddings"]);
  return model;
}

void MatcherModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json();
}

MatcherModel MatcherModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(path.string(), "cannot open");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return from_json(buffer.str());
  } catch (const std::exception& e) {
    throw ArtifactError(path.string(), e.what());
  }
}

}  // namespace duet
