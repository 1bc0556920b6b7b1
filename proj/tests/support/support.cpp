// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "duet/error.hpp"
#include "duet/gen/checkpoint.hpp"
#include "duet/pipeline.hpp"

namespace duet::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& prefix) {
  static std::atomic<unsigned> counter{0};
  std::random_device rd;
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto candidate = fs::temp_directory_path() /
                     (prefix + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    if (fs::create_directory(candidate)) {
      path_ = candidate;
      return;
    }
  }
  throw Error("TempDir: cannot create a directory");
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::vector<QueryReplyPair> make_pairs(std::initializer_list<std::pair<const char*, const char*>> raw) {
  std::vector<QueryReplyPair> out;
  for (const auto& [q, r] : raw) out.push_back({static_cast<PairId>(out.size()), tokenize(q), tokenize(r)});
  return out;
}

Desk build_desk(const fs::path& dir, const DeskOptions& options) {
  Desk desk;
  fs::create_directories(dir);
  const auto all = synth_corpus(options.pairs, options.seed);
  const auto split = split_dataset(all, {}, options.seed);
  desk.train = select_pairs(all, split.train);
  desk.validation = select_pairs(all, split.validation);
  desk.test = select_pairs(all, split.test);

  desk.paths.database = dir / "train.tsv";
  desk.paths.index = dir / "index.txt";
  desk.paths.matcher = dir / "matcher.json";
  desk.paths.generator = dir / "biseq2seq";
  write_pairs_tsv(desk.paths.database, desk.train);
  write_pairs_tsv(dir / "validation.tsv", desk.validation);
  write_pairs_tsv(dir / "test.tsv", desk.test);

  const auto index = build_index(desk.train, top_df_stopwords(desk.train));
  index.save(desk.paths.index);

  MatcherRecipe matcher;
  matcher.train.seed = options.seed;
  matcher.embeddings = {EmbeddingSource::Kind::kRandom, options.seed, 16, {}};
  const auto table = make_embeddings(matcher.embeddings, nullptr);
  build_matcher(desk.train, index, table, matcher).save(desk.paths.matcher);

  ArtifactPaths retrieval_only = desk.paths;
  retrieval_only.generator.clear();
  const auto kb = load_knowledge_base(retrieval_only, {});

  GeneratorRecipe recipe;
  recipe.embed_dim = options.embed_dim;
  recipe.hidden_dim = options.hidden_dim;
  recipe.train.max_epochs = options.max_epochs;
  recipe.train.batch_size = options.batch_size;
  recipe.train.seed = options.seed;
  recipe.arch = gen::Architecture::kBiSeq2Seq;
  auto built = build_generator(desk.train, desk.validation, recipe, kb.get());
  gen::save_checkpoint(desk.paths.generator, built.generator);
  desk.history = std::move(built.history);

  if (options.train_seq2seq) {
    recipe.arch = gen::Architecture::kSeq2Seq;
    desk.seq2seq = dir / "seq2seq";
    gen::save_checkpoint(desk.seq2seq, build_generator(desk.train, desk.validation, recipe).generator);
  }
  return desk;
}

gen::GeneratorParams random_params(gen::Architecture arch, const gen::ModelDims& dims, std::uint64_t seed,
                                   double scale) {
  auto params = gen::GeneratorParams::zeros(arch, dims);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& t : gen::tensors(params)) {
    for (double& v : t.values()) v = dist(rng);
  }
  return params;
}

std::vector<gen::Triple> random_triples(gen::Architecture arch, const gen::ModelDims& dims, std::size_t count,
                                        std::size_t max_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto len = [&] { return 1 + static_cast<std::size_t>(rng() % max_len); };
  auto enc_id = [&] { return static_cast<TokenId>(reserved::kCount + rng() % (dims.enc_vocab_size - reserved::kCount)); };
  auto dec_id = [&] { return static_cast<TokenId>(reserved::kCount + rng() % (dims.dec_vocab_size - reserved::kCount)); };
  std::vector<gen::Triple> out;
  for (std::size_t i = 0; i < count; ++i) {
    gen::Triple t;
    for (std::size_t k = len(); k > 0; --k) t.query.push_back(enc_id());
    if (arch == gen::Architecture::kBiSeq2Seq) {
      for (std::size_t k = len(); k > 0; --k) t.rstar.push_back(enc_id());
    }
    t.reply.push_back(reserved::kBos);
    for (std::size_t k = len(); k > 0; --k) t.reply.push_back(dec_id());
    t.reply.push_back(reserved::kEos);
    out.push_back(std::move(t));
  }
  return out;
}

GradCheck check_gradients(const gen::GeneratorParams& params, std::span<const gen::Triple> samples, double h,
                          double floor) {
  const auto batch = gen::make_batch(samples, params.arch);
  const auto pass = gen::forward(params, batch);
  const auto grads = gen::backward(params, batch, pass);
  const auto analytic = gen::tensors(grads);

  auto probe = params;
  auto views = gen::tensors(probe);
  auto total = [&] {
    double sum = 0.0;
    for (const auto& s : samples) sum += gen::forward_loss(probe, s).loss;
    return sum;
  };

  GradCheck out;
  for (std::size_t t = 0; t < views.size(); ++t) {
    auto values = views[t].values();
    const auto expected = analytic[t].values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = total();
      values[i] = saved - h;
      const double down = total();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = expected[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (out.worst_tensor.empty() || rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_tensor = views[t].name;
        out.worst_analytic = a;
        out.worst_numeric = numeric;
      }
      ++out.checked;
    }
    if (!values.empty()) out.tensors_seen.push_back(views[t].name);
  }
  return out;
}

std::string check_chat_wire(const nlohmann::json& body) {
  using J = nlohmann::json;
  auto is_provenance = [](const J& v) {
    return v.is_string() && (v == "retrieved" || v == "generated" || v == "fallback");
  };
  if (!body.is_object()) return "body is not an object";
  if (!body.contains("reply") || !body["reply"].is_string()) return "reply missing or not a string";
  if (!body.contains("provenance") || !is_provenance(body["provenance"])) return "bad provenance";
  if (!body.contains("candidates") || !body["candidates"].is_array()) return "candidates missing";
  const auto& cands = body["candidates"];
  if (cands.empty() || cands.size() > 2) return "candidate count " + std::to_string(cands.size());
  std::size_t selected = 0;
  for (const auto& c : cands) {
    if (!c.is_object()) return "candidate is not an object";
    if (!c.contains("text") || !c["text"].is_string()) return "candidate text";
    if (!c.contains("provenance") || !is_provenance(c["provenance"])) return "candidate provenance";
    if (!c.contains("score")) return "candidate score missing";
    const auto& s = c["score"];
    if (!s.is_null() && !(s.is_number() && s.get<double>() > 0.0 && s.get<double>() < 1.0)) return "score out of (0,1)";
    if (c["provenance"] == "fallback" && !s.is_null()) return "fallback candidate has a score";
    if (c["provenance"] != "fallback" && s.is_null()) return "scored candidate has a null score";
    if (c.contains("source_pair_id") && (c["provenance"] != "retrieved" || !c["source_pair_id"].is_number_unsigned())) {
      return "source_pair_id on a non-retrieved candidate";
    }
    if (c["provenance"] == "retrieved" && !c.contains("source_pair_id")) return "retrieved candidate without source";
    if (!c.contains("selected") || !c["selected"].is_boolean()) return "selected flag";
    if (c["selected"].get<bool>()) {
      ++selected;
      if (c["text"] != body["reply"] || c["provenance"] != body["provenance"]) return "selected candidate differs from reply";
    }
  }
  if (selected != 1) return "selected count " + std::to_string(selected);
  if (!body.contains("timings_ms") || !body["timings_ms"].is_object()) return "timings_ms";
  for (const char* k : {"retrieve", "generate", "rerank", "total"}) {
    if (!body["timings_ms"].contains(k) || !body["timings_ms"][k].is_number() || body["timings_ms"][k].get<double>() < 0) {
      return std::string("timings_ms.") + k;
    }
  }
  if (!body.contains("model_versions") || !body["model_versions"].is_object()) return "model_versions";
  return {};
}

}  // namespace duet::testing
