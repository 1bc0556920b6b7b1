// SPDX-License-Identifier: Apache-2.0
//
// Settings shared by the CLI and the service. Precedence: command-line
// flags > config file > the defaults below.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "duet/ensemble.hpp"
#include "duet/eval.hpp"
#include "duet/pipeline.hpp"

namespace duet {

struct ServiceSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  bool cors = true;
  std::size_t threads = 4;
};

struct IndexSettings {
  std::size_t stopword_count = 25;
  std::filesystem::path stopwords_file;  // overrides stopword_count when set
};

struct EvalSettings {
  double alpha = 1.0;
  EntropyDenominator denominator = EntropyDenominator::kPerToken;
};

/// Random 16-d embeddings: usable before any generator exists.
inline MatcherRecipe default_matcher_recipe() {
  MatcherRecipe r;
  r.embeddings.kind = EmbeddingSource::Kind::kRandom;
  r.embeddings.dim = 16;
  return r;
}

struct AppConfig {
  std::uint64_t seed = 0;
  ArtifactPaths artifacts;
  EnsembleOptions ensemble;
  ServiceSettings service;
  IndexSettings index;
  MatcherRecipe matcher = default_matcher_recipe();
  GeneratorRecipe generator;
  EvalSettings eval;
};

/// Parses a JSON config. Unknown keys and wrong types are errors (ParseError
/// with the file path). Relative artifact paths resolve against the config
/// file's directory.
AppConfig load_config(const std::filesystem::path& path);
AppConfig parse_config(std::string_view text, const std::filesystem::path& origin = {},
                       AppConfig base = {});

/// The effective configuration as JSON, in the same shape load_config reads.
std::string config_to_json(const AppConfig& config);

/// Hex SHA-256 of a file, or of every regular file below a directory
/// (relative path and content, in sorted path order).
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view data);

}  // namespace duet
