// SPDX-License-Identifier: Apache-2.0
#include "duet/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "duet/error.hpp"

namespace duet {
namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

Json to_json(const AppConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["artifacts"] = {{"database", c.artifacts.database.string()},
                    {"index", c.artifacts.index.string()},
                    {"matcher", c.artifacts.matcher.string()},
                    {"generator", c.artifacts.generator.string()}};
  j["ensemble"] = {{"mode", std::string(to_string(c.ensemble.mode))},
                   {"k", c.ensemble.k},
                   {"apology", c.ensemble.apology},
                   {"lowercase", c.ensemble.tokenizer.lowercase}};
  j["decode"] = {{"max_len", c.ensemble.decode.max_len}, {"beam_width", c.ensemble.decode.beam_width}};
  j["service"] = {{"host", c.service.host},
                  {"port", c.service.port},
                  {"cors", c.service.cors},
                  {"threads", c.service.threads}};
  j["index"] = {{"stopword_count", c.index.stopword_count},
                {"stopwords_file", c.index.stopwords_file.string()}};
  j["matcher"] = {{"negatives", c.matcher.negatives},
                  {"epochs", c.matcher.train.epochs},
                  {"learning_rate", c.matcher.train.learning_rate},
                  {"l2", c.matcher.train.l2},
                  {"embeddings", std::string(to_string(c.matcher.embeddings.kind))},
                  {"embedding_dim", c.matcher.embeddings.dim}};
  const auto& g = c.generator;
  j["generator"] = {{"arch", std::string(to_string(g.arch))},
                    {"embed_dim", g.embed_dim},
                    {"hidden_dim", g.hidden_dim},
                    {"vocab_size", g.vocab_size},
                    {"min_count", g.min_count},
                    {"k", g.k},
                    {"batch_size", g.train.batch_size},
                    {"max_epochs", g.train.max_epochs},
                    {"patience", g.train.patience},
                    {"rho", g.train.adadelta.rho},
                    {"epsilon", g.train.adadelta.epsilon}};
  j["eval"] = {{"alpha", c.eval.alpha}, {"entropy", std::string(to_string(c.eval.denominator))}};
  return j;
}

bool same_kind(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) {
    // Integers must stay integers; floats accept either.
    return a.is_number_float() || !b.is_number_float();
  }
  return a.type() == b.type();
}

void check_shape(const Json& defaults, const Json& given, const std::string& where) {
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!defaults.contains(key)) throw Error("unknown config key '" + path + "'");
    const auto& want = defaults.at(key);
    if (want.is_object()) {
      if (!value.is_object()) throw Error("config key '" + path + "' must be an object");
      check_shape(want, value, path);
    } else if (!same_kind(want, value)) {
      throw Error("config key '" + path + "' has the wrong type (expected " + std::string(want.type_name()) + ")");
    } else if (want.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0) {
      throw Error("config key '" + path + "' must be non-negative");
    }
  }
}

fs::path resolve(const std::string& p, const fs::path& base) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

AppConfig from_json(const Json& j) {
  AppConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto& a = j.at("artifacts");
  c.artifacts.database = fs::path(a.at("database").get<std::string>());
  c.artifacts.index = fs::path(a.at("index").get<std::string>());
  c.artifacts.matcher = fs::path(a.at("matcher").get<std::string>());
  c.artifacts.generator = fs::path(a.at("generator").get<std::string>());
  const auto& e = j.at("ensemble");
  c.ensemble.mode = parse_mode(e.at("mode").get<std::string>());
  c.ensemble.k = e.at("k").get<std::size_t>();
  c.ensemble.apology = e.at("apology").get<std::string>();
  c.ensemble.tokenizer.lowercase = e.at("lowercase").get<bool>();
  c.ensemble.decode.max_len = j.at("decode").at("max_len").get<std::size_t>();
  c.ensemble.decode.beam_width = j.at("decode").at("beam_width").get<std::size_t>();
  const auto& s = j.at("service");
  c.service.host = s.at("host").get<std::string>();
  c.service.port = s.at("port").get<int>();
  c.service.cors = s.at("cors").get<bool>();
  c.service.threads = s.at("threads").get<std::size_t>();
  c.index.stopword_count = j.at("index").at("stopword_count").get<std::size_t>();
  c.index.stopwords_file = fs::path(j.at("index").at("stopwords_file").get<std::string>());
  const auto& m = j.at("matcher");
  c.matcher.negatives = m.at("negatives").get<std::size_t>();
  c.matcher.train.epochs = m.at("epochs").get<std::size_t>();
  c.matcher.train.learning_rate = m.at("learning_rate").get<double>();
  c.matcher.train.l2 = m.at("l2").get<double>();
  c.matcher.embeddings.kind = parse_embedding_kind(m.at("embeddings").get<std::string>());
  c.matcher.embeddings.dim = m.at("embedding_dim").get<std::size_t>();
  const auto& g = j.at("generator");
  c.generator.arch = gen::parse_architecture(g.at("arch").get<std::string>());
  c.generator.embed_dim = g.at("embed_dim").get<std::size_t>();
  c.generator.hidden_dim = g.at("hidden_dim").get<std::size_t>();
  c.generator.vocab_size = g.at("vocab_size").get<std::size_t>();
  c.generator.min_count = g.at("min_count").get<std::size_t>();
  c.generator.k = g.at("k").get<std::size_t>();
  c.generator.train.batch_size = g.at("batch_size").get<std::size_t>();
  c.generator.train.max_epochs = g.at("max_epochs").get<std::size_t>();
  c.generator.train.patience = g.at("patience").get<std::size_t>();
  c.generator.train.adadelta.rho = g.at("rho").get<double>();
  c.generator.train.adadelta.epsilon = g.at("epsilon").get<double>();
  c.eval.alpha = j.at("eval").at("alpha").get<double>();
  c.eval.denominator = parse_entropy_denominator(j.at("eval").at("entropy").get<std::string>());

  if (c.service.port < 0 || c.service.port > 65535) throw Error("service.port out of range");
  if (c.ensemble.k == 0) throw Error("ensemble.k must be at least 1");
  if (c.ensemble.decode.max_len == 0 || c.ensemble.decode.beam_width == 0) {
    throw Error("decode.max_len and decode.beam_width must be at least 1");
  }
  // One seed drives every stochastic step.
  c.matcher.train.seed = c.seed;
  c.matcher.embeddings.seed = c.seed;
  c.generator.train.seed = c.seed;
  return c;
}

}  // namespace

AppConfig parse_config(std::string_view text, const fs::path& origin, AppConfig base) {
  const std::string where = origin.empty() ? "<config>" : origin.string();
  Json given;
  try {
    given = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(where, 0, std::string("invalid JSON: ") + e.what());
  }
  if (!given.is_object()) throw ParseError(where, 0, "config must be a JSON object");
  // Paths in `base` are already resolved, so serialize them as they are.
  Json merged = to_json(base);
  try {
    check_shape(merged, given, "");
    merged.merge_patch(given);
    const fs::path dir = origin.empty() ? fs::path() : origin.parent_path();
    // Only paths that came from the file resolve against its directory.
    AppConfig out = from_json(merged);
    if (given.contains("artifacts")) {
      const auto& a = given["artifacts"];
      if (a.contains("database")) out.artifacts.database = resolve(a["database"].get<std::string>(), dir);
      if (a.contains("index")) out.artifacts.index = resolve(a["index"].get<std::string>(), dir);
      if (a.contains("matcher")) out.artifacts.matcher = resolve(a["matcher"].get<std::string>(), dir);
      if (a.contains("generator")) out.artifacts.generator = resolve(a["generator"].get<std::string>(), dir);
    }
    if (given.contains("index") && given["index"].contains("stopwords_file")) {
      out.index.stopwords_file = resolve(given["index"]["stopwords_file"].get<std::string>(), dir);
    }
    return out;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(where, 0, e.what());
  }
}

AppConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("config " + path.string(), "cannot open");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path);
}

std::string config_to_json(const AppConfig& config) { return to_json(config).dump(2) + "\n"; }

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view data) {
    if (EVP_DigestUpdate(ctx_, data.data(), data.size()) != 1) throw Error("sha256: update failed");
  }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md.data(), &len) != 1) throw Error("sha256: final failed");
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kDigits[md[i] >> 4]);
      out.push_back(kDigits[md[i] & 0xF]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

void hash_file(Sha256& h, const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(path.string(), "cannot open for hashing");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data);
  return h.hex();
}

std::string sha256_file(const fs::path& path) {
  Sha256 h;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string rel = fs::relative(f, path).generic_string();
      h.update(rel);
      h.update(std::string_view("\0", 1));
      hash_file(h, f);
    }
  } else {
    hash_file(h, path);
  }
  return h.hex();
}

}  // namespace duet
