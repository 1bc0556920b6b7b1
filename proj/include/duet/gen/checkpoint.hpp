// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "duet/corpus.hpp"
#include "duet/gen/model.hpp"

namespace duet::gen {

/// A trained generator with the vocabularies its embedding tables index.
struct Generator {
  GeneratorParams params;
  Vocabulary enc_vocab;
  Vocabulary dec_vocab;
  std::uint64_t seed = 0;
};

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kPayloadName = "params.bin";
inline constexpr const char* kEncVocabName = "enc_vocab.json";
inline constexpr const char* kDecVocabName = "dec_vocab.json";

/// Writes `dir`/manifest.json, params.bin, enc_vocab.json and
/// dec_vocab.json. The manifest holds the architecture tag, dimensions,
/// vocabulary file names and a tensor catalog {name, shape, offset};
/// params.bin is the catalog's tensors as row-major little-endian float32,
/// offsets in bytes.
void save_checkpoint(const std::filesystem::path& dir, const Generator& generator);

/// Accepts the checkpoint directory or its manifest path. Throws
/// ArtifactError on version, shape or size mismatches.
Generator load_checkpoint(const std::filesystem::path& path);

/// Resolves a directory to its manifest path (identity for files).
std::filesystem::path manifest_path(const std::filesystem::path& path);

/// Rounds every parameter through float32, matching what a save/load
/// round trip produces.
void quantize_to_float32(GeneratorParams& params);

}  // namespace duet::gen
