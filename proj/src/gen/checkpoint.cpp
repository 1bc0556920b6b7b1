// SPDX-License-Identifier: Apache-2.0
#include "duet/gen/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "duet/error.hpp"

namespace duet::gen {
namespace {

void put_f32_le(std::string& out, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::string read_all(const std::filesystem::path& path, const std::string& artifact) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(artifact, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

std::filesystem::path manifest_path(const std::filesystem::path& path) {
  return std::filesystem::is_directory(path) ? path / kManifestName : path;
}

void quantize_to_float32(GeneratorParams& params) {
  for (auto& t : tensors(params)) {
    for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  }
}

void save_checkpoint(const std::filesystem::path& dir, const Generator& generator) {
  std::filesystem::create_directories(dir);
  const auto& params = generator.params;
  const ModelDims dims = params.dims();
  if (dims.enc_vocab_size != generator.enc_vocab.size() || dims.dec_vocab_size != generator.dec_vocab.size()) {
    throw Error("save_checkpoint: vocabulary sizes do not match the embedding tables");
  }

  std::string payload;
  payload.reserve(parameter_count(params) * 4);
  nlohmann::ordered_json catalog = nlohmann::ordered_json::array();
  for (const auto& t : tensors(params)) {
    nlohmann::ordered_json entry;
    entry["name"] = t.name;
    entry["shape"] = t.is_vector ? std::vector<Eigen::Index>{t.rows} : std::vector<Eigen::Index>{t.rows, t.cols};
    entry["offset"] = payload.size();
    catalog.push_back(entry);
    // Eigen storage is column-major; the payload is row-major.
    for (Eigen::Index r = 0; r < t.rows; ++r) {
      for (Eigen::Index c = 0; c < t.cols; ++c) put_f32_le(payload, t.data[c * t.rows + r]);
    }
  }

  nlohmann::ordered_json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["architecture"] = std::string(to_string(params.arch));
  manifest["dims"] = {{"embed_dim", dims.embed_dim},
                      {"hidden_dim", dims.hidden_dim},
                      {"enc_vocab_size", dims.enc_vocab_size},
                      {"dec_vocab_size", dims.dec_vocab_size}};
  manifest["seed"] = generator.seed;
  manifest["vocab"] = {{"encoder", kEncVocabName}, {"decoder", kDecVocabName}};
  manifest["payload"] = {{"file", kPayloadName},
                         {"dtype", "float32"},
                         {"byte_order", "little"},
                         {"layout", "row-major"},
                         {"bytes", payload.size()}};
  manifest["tensors"] = catalog;

  generator.enc_vocab.save(dir / kEncVocabName);
  generator.dec_vocab.save(dir / kDecVocabName);
  std::ofstream(dir / kPayloadName, std::ios::binary) << payload;
  std::ofstream(dir / kManifestName, std::ios::binary) << manifest.dump(1) << "\n";
}

Generator load_checkpoint(const std::filesystem::path& path) {
  const auto manifest_file = manifest_path(path);
  const std::string artifact = manifest_file.string();
  const auto dir = manifest_file.parent_path();

  const auto manifest = nlohmann::json::parse(read_all(manifest_file, artifact), nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object()) throw ArtifactError(artifact, "manifest is not JSON");
  if (manifest.value("version", 0) != kCheckpointVersion) throw ArtifactError(artifact, "unsupported version");

  Generator generator;
  try {
    const Architecture arch = parse_architecture(manifest.at("architecture").get<std::string>());
    const auto& d = manifest.at("dims");
    const ModelDims dims{d.at("embed_dim").get<std::size_t>(), d.at("hidden_dim").get<std::size_t>(),
                         d.at("enc_vocab_size").get<std::size_t>(), d.at("dec_vocab_size").get<std::size_t>()};
    generator.params = GeneratorParams::zeros(arch, dims);
    generator.seed = manifest.value("seed", std::uint64_t{0});
    generator.enc_vocab = Vocabulary::load(dir / manifest.at("vocab").at("encoder").get<std::string>());
    generator.dec_vocab = Vocabulary::load(dir / manifest.at("vocab").at("decoder").get<std::string>());
    if (generator.enc_vocab.size() != dims.enc_vocab_size || generator.dec_vocab.size() != dims.dec_vocab_size) {
      throw ArtifactError(artifact, "vocabulary sizes do not match manifest dims");
    }

    const auto& payload_info = manifest.at("payload");
    if (payload_info.value("dtype", "") != "float32" || payload_info.value("byte_order", "") != "little" ||
        payload_info.value("layout", "") != "row-major") {
      throw ArtifactError(artifact, "unsupported payload encoding");
    }
    const std::string payload = read_all(dir / payload_info.at("file").get<std::string>(), artifact);
    const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());

    auto views = tensors(generator.params);
    const auto& catalog = manifest.at("tensors");
    if (catalog.size() != views.size()) throw ArtifactError(artifact, "tensor catalog does not match architecture");
    std::size_t expected_offset = 0;
    for (std::size_t k = 0; k < views.size(); ++k) {
      auto& t = views[k];
      const auto& entry = catalog[k];
      if (entry.at("name").get<std::string>() != t.name) {
        throw ArtifactError(artifact, "tensor " + std::to_string(k) + " is '" + entry.at("name").get<std::string>() +
                                          "', expected '" + t.name + "'");
      }
      const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
      const std::vector<Eigen::Index> want = t.is_vector ? std::vector<Eigen::Index>{t.rows}
                                                         : std::vector<Eigen::Index>{t.rows, t.cols};
      if (shape != want) throw ArtifactError(artifact, "shape mismatch for " + t.name);
      const auto offset = entry.at("offset").get<std::size_t>();
      if (offset != expected_offset || offset + t.size() * 4 > payload.size()) {
        throw ArtifactError(artifact, "bad payload offset for " + t.name);
      }
      const unsigned char* p = bytes + offset;
      for (Eigen::Index r = 0; r < t.rows; ++r) {
        for (Eigen::Index c = 0; c < t.cols; ++c, p += 4) t.data[c * t.rows + r] = get_f32_le(p);
      }
      expected_offset = offset + t.size() * 4;
    }
    if (expected_offset != payload.size()) throw ArtifactError(artifact, "payload size does not match catalog");
  } catch (const ArtifactError&) {
    throw;
  } catch (const std::exception& e) {
    throw ArtifactError(artifact, e.what());
  }
  return generator;
}

}  // namespace duet::gen
