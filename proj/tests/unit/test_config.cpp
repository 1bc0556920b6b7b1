// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <json.hpp>

#include "duet/config.hpp"
#include "duet/error.hpp"
#include "support.hpp"

using namespace duet;
using duet::testing::TempDir;

TEST_CASE("built-in defaults") {
  const AppConfig c;
  CHECK(c.service.port == 8080);
  CHECK(c.service.host == "127.0.0.1");
  CHECK(c.service.cors);
  CHECK(c.ensemble.mode == Mode::kEnsemble);
  CHECK(c.ensemble.k == 1000);
  CHECK(c.ensemble.decode.beam_width == 1);
  CHECK(c.index.stopword_count == 25);
  CHECK(c.generator.train.adadelta.rho == 0.95);
  CHECK(c.generator.train.adadelta.epsilon == 1e-6);
  CHECK(c.generator.arch == gen::Architecture::kBiSeq2Seq);
  CHECK(c.matcher.train.epochs == 500);
  CHECK(c.matcher.train.learning_rate == 0.5);
  CHECK(c.matcher.train.l2 == 1e-4);
  CHECK(c.eval.denominator == EntropyDenominator::kPerToken);
}

TEST_CASE("file values override defaults and keep the rest") {
  const auto c = parse_config(R"({"service": {"port": 9000}, "ensemble": {"mode": "retrieval_only"},
                                  "decode": {"beam_width": 4}, "seed": 7})");
  CHECK(c.service.port == 9000);
  CHECK(c.service.host == "127.0.0.1");
  CHECK(c.ensemble.mode == Mode::kRetrievalOnly);
  CHECK(c.ensemble.decode.beam_width == 4);
  CHECK(c.ensemble.decode.max_len == AppConfig{}.ensemble.decode.max_len);
  CHECK(c.seed == 7);
  // one seed drives every seeded component
  CHECK(c.matcher.train.seed == 7);
  CHECK(c.matcher.embeddings.seed == 7);
  CHECK(c.generator.train.seed == 7);
}

TEST_CASE("a base config is patched, not replaced") {
  AppConfig base;
  base.service.port = 1234;
  base.ensemble.apology = "nope";
  const auto c = parse_config(R"({"service": {"cors": false}})", {}, base);
  CHECK(c.service.port == 1234);
  CHECK_FALSE(c.service.cors);
  CHECK(c.ensemble.apology == "nope");
}

TEST_CASE("strict parsing") {
  CHECK_THROWS_AS(parse_config(R"({"servce": {}})"), ParseError);
  CHECK_THROWS_AS(parse_config(R"({"service": {"prot": 1}})"), ParseError);
  CHECK_THROWS_AS(parse_config(R"({"service": {"port": "80"}})"), ParseError);
  CHECK_THROWS_AS(parse_config(R"({"service": {"port": -1}})"), ParseError);
  CHECK_THROWS_AS(parse_config(R"({"ensemble": {"mode": "both"}})"), Error);
  CHECK_THROWS_AS(parse_config(R"({"generator": {"arch": "lstm"}})"), Error);
  CHECK_THROWS_AS(parse_config(R"({"eval": {"entropy": "per_word"}})"), Error);
  CHECK_THROWS_AS(parse_config("[1, 2]"), ParseError);
  CHECK_THROWS_AS(parse_config("{not json"), ParseError);
  CHECK_NOTHROW(parse_config("{}"));
}

TEST_CASE("relative paths resolve against the config file") {
  TempDir dir;
  std::filesystem::create_directories(dir / "conf");
  testing::write_file(dir / "conf" / "duet.json",
                      R"({"artifacts": {"database": "data/train.tsv", "index": "/abs/index.txt"},
                          "index": {"stopwords_file": "stop.txt"}})");
  const auto c = load_config(dir / "conf" / "duet.json");
  CHECK(c.artifacts.database == dir.path() / "conf" / "data" / "train.tsv");
  CHECK(c.artifacts.index == "/abs/index.txt");
  CHECK(c.index.stopwords_file == dir.path() / "conf" / "stop.txt");
  CHECK(c.artifacts.matcher.empty());
  CHECK_THROWS_AS(load_config(dir / "missing.json"), Error);
}

TEST_CASE("config_to_json round trips") {
  AppConfig c;
  c.seed = 11;
  c.service.port = 7000;
  c.ensemble.mode = Mode::kGenerationOnly;
  c.generator.hidden_dim = 99;
  c.matcher.embeddings.kind = EmbeddingSource::Kind::kNone;
  c.eval.denominator = EntropyDenominator::kPerReply;
  c.artifacts.database = "/data/db.tsv";
  const auto text = config_to_json(c);
  const auto back = parse_config(text);
  CHECK(config_to_json(back) == text);
  CHECK(back.generator.hidden_dim == 99);
  CHECK(back.ensemble.mode == Mode::kGenerationOnly);
  CHECK(back.eval.denominator == EntropyDenominator::kPerReply);
  const auto j = nlohmann::json::parse(text);
  for (const char* key : {"seed", "artifacts", "ensemble", "decode", "service", "index", "matcher", "generator", "eval"}) {
    CHECK(j.contains(key));
  }
}

TEST_CASE("sha256") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  TempDir dir;
  testing::write_file(dir / "f.txt", "abc");
  CHECK(sha256_file(dir / "f.txt") == sha256_hex("abc"));

  std::filesystem::create_directories(dir / "d");
  testing::write_file(dir / "d" / "b", "2");
  testing::write_file(dir / "d" / "a", "1");
  const std::string want = sha256_hex(std::string("a\0" "1" "b\0" "2", 6));
  CHECK(sha256_file(dir / "d") == want);
  testing::write_file(dir / "d" / "a", "x");
  CHECK(sha256_file(dir / "d") != want);
  CHECK_THROWS_AS(sha256_file(dir / "nothing"), Error);
}
