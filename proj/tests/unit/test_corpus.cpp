// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "duet/corpus.hpp"
#include "duet/error.hpp"
#include "support.hpp"

using namespace duet;
using duet::testing::TempDir;

TEST_CASE("tokenize splits on whitespace runs and lowercases") {
  CHECK(tokenize("Hello  world") == TokenSeq{"hello", "world"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("A A a") == TokenSeq{"a", "a", "a"});
  CHECK(tokenize("  \t lead and trail \n") == TokenSeq{"lead", "and", "trail"});
  CHECK(tokenize("Keep Case", TokenizerOptions{.lowercase = false}) == TokenSeq{"Keep", "Case"});
}

TEST_CASE("tokenize handles unicode whitespace and composition") {
  // U+3000 ideographic space and U+00A0 no-break space both separate tokens.
  CHECK(tokenize("a　b c") == TokenSeq{"a", "b", "c"});
  // "e" + combining acute composes to the single code point U+00E9.
  CHECK(tokenize("Café") == TokenSeq{"café"});
  CHECK(tokenize("ÉTÉ") == TokenSeq{"été"});
  CHECK(tokenize(" 　 ").empty());
}

TEST_CASE("tokens are never empty and never contain whitespace") {
  std::mt19937_64 rng(3);
  const std::vector<std::string> pieces = {"a", "B", " ", "\t", "　", "xy", "é", "\n", "  "};
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    for (int k = 0; k < 12; ++k) text += pieces[rng() % pieces.size()];
    for (const auto& t : tokenize(text)) {
      CHECK_FALSE(t.empty());
      CHECK(t.find_first_of(" \t\n") == std::string::npos);
      CHECK(t.find("　") == std::string::npos);
    }
  }
}

TEST_CASE("build_vocabulary ranks by frequency then lexicographically") {
  // counts: a:3, b:2, c:1
  const auto pairs = testing::make_pairs({{"a b", "a"}, {"c a", "b"}});
  const auto v = build_vocabulary(pairs, VocabSide::kBoth, 6, 1);
  CHECK(v.size() == 6);
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);
  CHECK_FALSE(v.contains("c"));
  CHECK(v.id("c") == reserved::kUnk);
  CHECK(v.token(0) == "<pad>");
  CHECK(v.token(1) == "<bos>");
  CHECK(v.token(2) == "<eos>");
  CHECK(v.token(3) == "<unk>");

  SUBCASE("capacity five admits one corpus token") {
    CHECK(build_vocabulary(pairs, VocabSide::kBoth, 5, 1).corpus_tokens() == std::vector<std::string>{"a"});
  }
  SUBCASE("min_count above every count leaves only reserved ids") {
    const auto only_a = testing::make_pairs({{"a a", "a"}});
    CHECK(build_vocabulary(only_a, VocabSide::kBoth, 10, 4).size() == 4);
  }
  SUBCASE("ties break lexicographically") {
    const auto tied = testing::make_pairs({{"zeta alpha mid", "x"}});
    CHECK(build_vocabulary(tied, VocabSide::kQuery, 10, 1).corpus_tokens() ==
          std::vector<std::string>{"alpha", "mid", "zeta"});
  }
  SUBCASE("sides") {
    CHECK(build_vocabulary(pairs, VocabSide::kQuery, 10, 1).corpus_tokens() == std::vector<std::string>{"a", "b", "c"});
    CHECK(build_vocabulary(pairs, VocabSide::kReply, 10, 1).corpus_tokens() == std::vector<std::string>{"a", "b"});
  }
  CHECK_THROWS_AS(build_vocabulary({}, VocabSide::kBoth, 10, 1), Error);
  CHECK_THROWS_AS(build_vocabulary(pairs, VocabSide::kBoth, 4, 1), Error);
}

TEST_CASE("token and id maps are mutually inverse") {
  const auto pairs = testing::make_pairs({{"the cat sat", "on the mat"}, {"a dog", "the end"}});
  const auto v = build_vocabulary(pairs, VocabSide::kBoth, 100, 1);
  for (TokenId id = reserved::kCount; id < static_cast<TokenId>(v.size()); ++id) CHECK(v.id(v.token(id)) == id);
  for (const auto& t : v.corpus_tokens()) CHECK(v.token(v.id(t)) == t);
}

TEST_CASE("vocabulary files are byte-identical across builds and round trip") {
  TempDir dir;
  const auto pairs = testing::make_pairs({{"x y z", "y z"}, {"z", "w"}});
  build_vocabulary(pairs, VocabSide::kBoth, 50, 1).save(dir / "a.json");
  build_vocabulary(pairs, VocabSide::kBoth, 50, 1).save(dir / "b.json");
  const auto a = testing::read_file(dir / "a.json");
  CHECK(a == testing::read_file(dir / "b.json"));
  const auto loaded = Vocabulary::load(dir / "a.json");
  CHECK(loaded == build_vocabulary(pairs, VocabSide::kBoth, 50, 1));
  loaded.save(dir / "c.json");
  CHECK(testing::read_file(dir / "c.json") == a);

  CHECK_THROWS_AS(Vocabulary::from_json("{\"version\": 1}"), Error);
  CHECK_THROWS_AS(Vocabulary::from_json("{\"version\":1,\"reserved\":[\"<pad>\",\"<bos>\",\"<eos>\",\"<unk>\"],"
                                        "\"tokens\":[\"a\",\"a\"]}"),
                  Error);
  CHECK_THROWS_AS(Vocabulary::from_json("not json"), Error);
}

TEST_CASE("encode frames and maps unknowns; decode_ids inverts") {
  const Vocabulary v({"a", "b"});
  CHECK(encode(TokenSeq{"a"}, v, true) == std::vector<TokenId>{1, v.id("a"), 2});
  CHECK(encode(TokenSeq{"zzz"}, v, false) == std::vector<TokenId>{3});
  CHECK(encode(TokenSeq{}, v, true) == std::vector<TokenId>{1, 2});

  CHECK(decode_ids(std::vector<TokenId>{1, v.id("a"), 2}, v) == TokenSeq{"a"});
  CHECK(decode_ids(std::vector<TokenId>{3}, v) == TokenSeq{std::string(kUnkToken)});
  CHECK(decode_ids(std::vector<TokenId>{0, 0}, v).empty());
  CHECK_THROWS_AS(decode_ids(std::vector<TokenId>{6}, v), Error);
  CHECK_THROWS_AS(decode_ids(std::vector<TokenId>{-1}, v), Error);
}

TEST_CASE("decode_ids after encode is the identity on in-vocabulary sequences") {
  std::vector<std::string> words;
  for (int i = 0; i < 40; ++i) words.push_back("w" + std::to_string(i));
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto subset = words;
    std::shuffle(subset.begin(), subset.end(), rng);
    subset.resize(1 + rng() % words.size());
    const Vocabulary v(subset);
    TokenSeq seq;
    for (std::size_t k = rng() % 10; k > 0; --k) seq.push_back(subset[rng() % subset.size()]);
    CHECK(decode_ids(encode(seq, v, trial % 2 == 0), v) == seq);
  }
}

TEST_CASE("load_pairs reads TSV and JSONL") {
  TempDir dir;
  testing::write_file(dir / "a.tsv", "hi there\thello friend\nhi\t\r\n\nHow ARE you\tfine\n");
  const auto tsv = load_pairs(dir / "a.tsv", CorpusFormat::kTsv);
  REQUIRE(tsv.pairs.size() == 2);
  CHECK(tsv.dropped == 1);
  CHECK(tsv.pairs[0] == QueryReplyPair{0, {"hi", "there"}, {"hello", "friend"}});
  CHECK(tsv.pairs[1].id == 1);
  CHECK(tsv.pairs[1].query == TokenSeq{"how", "are", "you"});

  testing::write_file(dir / "b.jsonl", "{\"q\": \"one\", \"r\": \"two\"}\n{\"q\":\"three\",\"r\":\"four five\"}\n"
                                       "{\"q\":\"x\",\"r\":\"y\"}\n");
  const auto jsonl = load_pairs(dir / "b.jsonl", corpus_format_for(dir / "b.jsonl"));
  REQUIRE(jsonl.pairs.size() == 3);
  std::vector<PairId> ids;
  for (const auto& p : jsonl.pairs) ids.push_back(p.id);
  CHECK(ids == std::vector<PairId>{0, 1, 2});
  CHECK(jsonl.pairs[1].reply == TokenSeq{"four", "five"});

  SUBCASE("min_tokens drops short sides") {
    const auto strict = load_pairs(dir / "b.jsonl", CorpusFormat::kJsonl, LoadOptions{{}, 2});
    CHECK(strict.pairs.size() == 0);
    CHECK(strict.dropped == 3);
  }
}

TEST_CASE("malformed records name their line") {
  TempDir dir;
  testing::write_file(dir / "bad.tsv", "ok\tfine\nno tab here\n");
  try {
    load_pairs(dir / "bad.tsv", CorpusFormat::kTsv);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  testing::write_file(dir / "bad2.tsv", "a\tb\tc\n");
  CHECK_THROWS_AS(load_pairs(dir / "bad2.tsv", CorpusFormat::kTsv), ParseError);
  testing::write_file(dir / "bad.jsonl", "{\"q\":\"a\",\"r\":\"b\"}\n\n{\"q\": 3, \"r\": \"b\"}\n");
  try {
    load_pairs(dir / "bad.jsonl", CorpusFormat::kJsonl);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(load_pairs(dir / "missing.tsv", CorpusFormat::kTsv), Error);
}

TEST_CASE("write_pairs_tsv round trips") {
  TempDir dir;
  const auto pairs = testing::make_pairs({{"a b", "c"}, {"été", "d e f"}});
  write_pairs_tsv(dir / "p.tsv", pairs);
  CHECK(load_pairs(dir / "p.tsv", CorpusFormat::kTsv).pairs == pairs);
}

namespace {

std::vector<QueryReplyPair> numbered(std::size_t n) {
  std::vector<QueryReplyPair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({static_cast<PairId>(i), {"q" + std::to_string(i)}, {"r"}});
  return out;
}

void check_partition(const DatasetSplit& s, std::size_t n) {
  std::multiset<PairId> all;
  all.insert(s.train.begin(), s.train.end());
  all.insert(s.validation.begin(), s.validation.end());
  all.insert(s.test.begin(), s.test.end());
  REQUIRE(all.size() == n);
  PairId expected = 0;
  for (PairId id : all) CHECK(id == expected++);
}

}  // namespace

TEST_CASE("split_dataset sizes, determinism and partition") {
  const auto ten = numbered(10);
  const auto s = split_dataset(ten, {0.8, 0.1, 0.1}, 42);
  CHECK(s.train.size() == 8);
  CHECK(s.validation.size() == 1);
  CHECK(s.test.size() == 1);
  check_partition(s, 10);

  const auto again = split_dataset(ten, {0.8, 0.1, 0.1}, 42);
  CHECK(again.train == s.train);
  CHECK(again.validation == s.validation);
  CHECK(again.test == s.test);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (const SplitRatios r : {SplitRatios{0.8, 0.1, 0.1}, SplitRatios{0.5, 0.25, 0.25}, SplitRatios{0.98, 0.01, 0.01}}) {
      const std::size_t n = 3 + seed * 7;
      check_partition(split_dataset(numbered(n), r, seed), n);
    }
  }

  CHECK_THROWS_AS(split_dataset(numbered(2), {}, 0), Error);
  CHECK_THROWS_AS(split_dataset(ten, {0.5, 0.1, 0.1}, 0), Error);
  CHECK_THROWS_AS(split_dataset(ten, {1.0, 0.0, 0.0}, 0), Error);
}

TEST_CASE("select_pairs renumbers densely") {
  const auto pairs = numbered(5);
  const auto picked = select_pairs(pairs, std::vector<PairId>{3, 1});
  REQUIRE(picked.size() == 2);
  CHECK(picked[0].id == 0);
  CHECK(picked[0].query == TokenSeq{"q3"});
  CHECK(picked[1].id == 1);
  CHECK(picked[1].query == TokenSeq{"q1"});
  CHECK_THROWS_AS(select_pairs(pairs, std::vector<PairId>{9}), Error);
}
