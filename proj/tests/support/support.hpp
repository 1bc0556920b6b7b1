// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit and acceptance tests.
#pragma once

#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "duet/corpus.hpp"
#include "duet/ensemble.hpp"
#include "duet/gen/model.hpp"
#include "duet/gen/train.hpp"

namespace duet::testing {

/// Unique directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "duet");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

/// Pairs from raw strings, ids in order.
std::vector<QueryReplyPair> make_pairs(std::initializer_list<std::pair<const char*, const char*>> raw);

struct DeskOptions {
  std::size_t pairs = 200;
  std::uint64_t seed = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t max_epochs = 15;
  std::size_t batch_size = 16;
  bool train_seq2seq = false;  // also train a seq2seq checkpoint
};

/// Artifacts for the full pipeline on a synthetic corpus: split, index and
/// matcher over the training split, a biseq2seq checkpoint (and optionally a
/// seq2seq one). The training split is the retrieval database.
struct Desk {
  std::vector<QueryReplyPair> train, validation, test;
  ArtifactPaths paths;
  std::filesystem::path seq2seq;
  gen::TrainHistory history;
};

Desk build_desk(const std::filesystem::path& dir, const DeskOptions& options = {});

/// A small random generator for gradient and identity checks.
gen::GeneratorParams random_params(gen::Architecture arch, const gen::ModelDims& dims, std::uint64_t seed,
                                   double scale = 0.5);

/// Random triples with token ids in [4, vocab) and lengths 1..max_len.
std::vector<gen::Triple> random_triples(gen::Architecture arch, const gen::ModelDims& dims, std::size_t count,
                                        std::size_t max_len, std::uint64_t seed);

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::vector<std::string> tensors_seen;  // tensors with at least one entry checked
};

/// Compares backward() on one batch of `samples` with central differences
/// of the summed single-sample losses, entry by entry over every tensor.
/// rel = |a - n| / max(|a|, |n|, floor). With h = 1e-5 and summed losses
/// around 25, roundoff alone puts ~5e-10 of noise on each difference, so
/// entries below ~1e-5 are compared in absolute terms.
GradCheck check_gradients(const gen::GeneratorParams& params, std::span<const gen::Triple> samples,
                          double h = 1e-5, double floor = 1e-5);

/// Empty when `body` is a valid /chat response: reply, provenance,
/// 1-2 candidates {text, provenance, score (null or in (0,1)),
/// source_pair_id?, selected}, exactly one selected and matching the reply,
/// timings_ms and model_versions. Otherwise the first violation.
std::string check_chat_wire(const nlohmann::json& body);

}  // namespace duet::testing
