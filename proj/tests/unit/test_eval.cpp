// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "duet/error.hpp"
#include "duet/eval.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace duet;

namespace {

std::vector<TokenSeq> seqs(std::initializer_list<const char*> raw) {
  std::vector<TokenSeq> out;
  for (const char* s : raw) out.push_back(tokenize(s));
  return out;
}

std::vector<EvalItem> items_of(const std::vector<QueryReplyPair>& pairs) {
  std::vector<EvalItem> out;
  for (const auto& p : pairs) out.push_back({p.query, p.reply});
  return out;
}

}  // namespace

TEST_CASE("bleu hand examples") {
  const auto c = seqs({"a b c"});
  const auto r = seqs({"a b d"});
  CHECK(bleu(c, r, 1) == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  CHECK(bleu(c, r, 1) == doctest::Approx(66.67).epsilon(1e-4));
  CHECK(bleu(c, r, 2) == doctest::Approx(100.0 * std::sqrt(2.0 / 3.0 * 0.5)).epsilon(1e-12));
  CHECK(bleu(c, r, 2) == doctest::Approx(57.74).epsilon(1e-4));

  const auto d = bleu_detail(c, r, 4);
  CHECK(d.precision[0] == doctest::Approx(200.0 / 3.0));
  CHECK(d.precision[1] == doctest::Approx(50.0));
  CHECK(d.precision[2] == 0.0);
  CHECK(d.brevity_penalty == 1.0);
  CHECK(d.candidate_length == 3);
  CHECK(d.reference_length == 3);

  // brevity: candidate shorter than reference
  const auto short_c = seqs({"a b"});
  const auto long_r = seqs({"a b c d"});
  CHECK(bleu(short_c, long_r, 1) == doctest::Approx(100.0 * std::exp(1.0 - 2.0)).epsilon(1e-12));
}

TEST_CASE("bleu of an identical corpus is 100") {
  const auto corpus = oracle::random_corpus(15, 10, 8, 2);
  std::vector<TokenSeq> replies;
  for (const auto& p : corpus) replies.push_back(p.reply);
  // orders above a sentence's length need at least one sentence that long
  replies.push_back(tokenize("w1 w2 w3 w4 w5"));
  for (std::size_t n = 1; n <= 4; ++n) CHECK(bleu(replies, replies, n) == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("bleu matches the brute-force oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    std::uint64_t state = rng();
    std::vector<TokenSeq> c, r;
    for (std::size_t i = 0; i < n; ++i) {
      c.push_back(oracle::random_sentence(6, 0, 7, state));
      r.push_back(oracle::random_sentence(6, 1, 7, state));
    }
    for (std::size_t max_n = 1; max_n <= 4; ++max_n) {
      const double want = oracle::bleu(c, r, static_cast<int>(max_n));
      CHECK(std::abs(bleu(c, r, max_n) - want) <= 1e-9);
    }
    // corpus-level totals: order does not matter
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<TokenSeq> pc, pr;
    for (std::size_t i : perm) {
      pc.push_back(c[i]);
      pr.push_back(r[i]);
    }
    CHECK(std::abs(bleu(pc, pr, 4) - bleu(c, r, 4)) <= 1e-9);
    CHECK(bleu(c, r, 4) >= 0.0);
    CHECK(bleu(c, r, 4) <= 100.0 + 1e-9);
  }
}

TEST_CASE("bleu errors and degenerate corpora") {
  const std::vector<TokenSeq> none;
  CHECK_THROWS_AS(bleu(none, none, 4), Error);
  CHECK_THROWS_AS(bleu(seqs({"a"}), seqs({"a", "b"}), 1), Error);
  CHECK_THROWS_AS(bleu(seqs({"a"}), seqs({"a"}), 0), Error);
  CHECK_THROWS_AS(bleu(seqs({"a"}), seqs({"a"}), 5), Error);
  // empty candidates: brevity penalty 0
  CHECK(bleu(std::vector<TokenSeq>{{}}, seqs({"a"}), 1) == 0.0);
}

TEST_CASE("unigram model") {
  SUBCASE("one token over the reserved rows") {
    // "a" is outside an empty vocabulary (V = 4) and folds into UNK
    const auto m = build_unigram(seqs({"a"}), Vocabulary{});
    CHECK(m.prob("a") == doctest::Approx(2.0 / 5.0).epsilon(1e-15));
    CHECK(m.prob(reserved::kPad) == doctest::Approx(1.0 / 5.0).epsilon(1e-15));
  }
  SUBCASE("sums to one") {
    const auto pairs = oracle::random_corpus(40, 25, 6, 1);
    const auto vocab = build_vocabulary(pairs, VocabSide::kReply, 15);
    std::vector<TokenSeq> replies;
    for (const auto& p : pairs) replies.push_back(p.reply);
    for (double alpha : {1.0, 0.5, 3.0}) {
      const auto m = build_unigram(replies, vocab, alpha);
      double sum = 0.0;
      for (double p : m.probs()) {
        CHECK(p > 0.0);
        sum += p;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("alpha 0 gives frequencies") {
    std::vector<double> counts{1, 1, 1, 1, 2, 4};
    Vocabulary v({"x", "y"});
    const auto m = build_unigram_from_counts(v, counts, 0.0);
    CHECK(m.prob("y") == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(m.prob("x") == doctest::Approx(0.2).epsilon(1e-15));
    std::vector<double> gaps{0, 1, 1, 1, 2, 4};
    CHECK_THROWS_AS(build_unigram_from_counts(v, gaps, 0.0), Error);
    CHECK_THROWS_AS(build_unigram(std::vector<TokenSeq>{}, v), Error);
    CHECK_THROWS_AS(build_unigram(seqs({"x"}), v, -1.0), Error);
  }
}

TEST_CASE("entropy") {
  Vocabulary v({"a", "b", "c", "d", "e", "f"});
  const auto uniform = UnigramModel::uniform(v);
  const auto corpus = oracle::random_corpus(30, 12, 6, 9);
  std::vector<TokenSeq> replies;
  for (const auto& p : corpus) replies.push_back(p.reply);
  CHECK(std::abs(corpus_entropy(replies, uniform) - std::log(10.0)) <= 1e-9);

  // p(a) = 0.5
  std::vector<double> counts(10, 4.0 / 9.0);
  counts[4] = 4.0;
  const auto half = build_unigram_from_counts(v, counts, 0.0);
  REQUIRE(half.prob("a") == doctest::Approx(0.5).epsilon(1e-15));
  const auto aa = seqs({"a a"});
  CHECK(corpus_entropy(aa, half) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(corpus_entropy(aa, half, EntropyDenominator::kPerReply) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-14));

  CHECK(corpus_entropy(std::vector<TokenSeq>{{}}, half) == 0.0);
  CHECK_THROWS_AS(corpus_entropy(std::vector<TokenSeq>{}, half), Error);
  CHECK(parse_entropy_denominator("per_reply") == EntropyDenominator::kPerReply);
  CHECK_THROWS_AS(parse_entropy_denominator("per_word"), Error);
}

TEST_CASE("mean_length") {
  CHECK(mean_length(seqs({"a", "a b c"})) == 2.0);
  CHECK(mean_length(std::vector<TokenSeq>(3)) == 0.0);
  CHECK_THROWS_AS(mean_length(std::vector<TokenSeq>{}), Error);
}

TEST_CASE("evaluate_systems") {
  const auto pairs = oracle::random_corpus(25, 15, 6, 4);
  const auto items = items_of(pairs);
  std::vector<TokenSeq> refs;
  for (const auto& p : pairs) refs.push_back(p.reply);
  const auto vocab = build_vocabulary(pairs, VocabSide::kReply, 100);
  const auto unigram = build_unigram(refs, vocab);

  const TokenSeq constant{"w1", "w2", "w2"};
  std::size_t calls = 0;
  std::vector<NamedSystem> systems{
      {"echo", [](const EvalItem& it) { return SystemOutput{it.reference, std::nullopt}; }, false},
      {"constant", [&](const EvalItem&) { return SystemOutput{constant, std::nullopt}; }, false},
      {"echo-again", [](const EvalItem& it) { return SystemOutput{it.reference, std::nullopt}; }, false},
      {"flaky",
       [&](const EvalItem& it) {
         if (calls++ % 5 == 0) throw Error("boom");
         return SystemOutput{it.reference, Provenance::kRetrieved};
       },
       true},
      {"mixed",
       [&, i = std::size_t{0}](const EvalItem& it) mutable {
         const auto p = i++ % 4 == 0 ? Provenance::kGenerated : Provenance::kRetrieved;
         return SystemOutput{it.query, p};
       },
       true},
  };
  const auto report = evaluate_systems(items, systems, unigram);
  REQUIRE(report.systems.size() == 5);
  CHECK(report.test_size == 25);

  const auto& echo = report.systems[0];
  for (std::size_t n = 0; n < 4; ++n) CHECK(echo.bleu.cumulative[n] == doctest::Approx(100.0));
  CHECK(echo.samples == 25);
  CHECK(echo.errors.empty());
  CHECK(echo.mean_length == doctest::Approx(mean_length(refs)));
  CHECK(echo.entropy_per_token == doctest::Approx(corpus_entropy(refs, unigram)));

  const auto& cons = report.systems[1];
  const std::vector<TokenSeq> one{constant};
  CHECK(cons.entropy_per_token == doctest::Approx(corpus_entropy(one, unigram)).epsilon(1e-12));
  CHECK(cons.mean_length == 3.0);

  const auto& again = report.systems[2];
  CHECK(again.bleu.cumulative == echo.bleu.cumulative);
  CHECK(again.entropy_per_token == echo.entropy_per_token);

  const auto& flaky = report.systems[3];
  CHECK(flaky.errors.size() == 5);
  CHECK(flaky.samples == 20);
  CHECK(flaky.errors[0].index == 0);
  CHECK(flaky.errors[0].message == "boom");
  REQUIRE(flaky.selection);
  CHECK(flaky.selection->retrieved == 1.0);

  const auto& mixed = report.systems[4];
  REQUIRE(mixed.selection);
  CHECK(mixed.selection->retrieved + mixed.selection->generated == doctest::Approx(1.0));
  CHECK(mixed.selection->generated == doctest::Approx(7.0 / 25.0));
  CHECK_FALSE(report.systems[0].selection);

  SUBCASE("json and table") {
    const auto j = nlohmann::json::parse(report.to_json());
    CHECK(j["version"] == kReportVersion);
    CHECK(j["entropy_denominator"] == "per_token");
    CHECK(j["systems"].size() == 5);
    CHECK(j["systems"][0]["bleu"]["4"].get<double>() == doctest::Approx(100.0));
    CHECK(j["systems"][3]["errors"] == 5);
    CHECK(j["systems"][0]["selection"].is_null());
    const std::vector<NamedSystem> pure{systems[0], systems[1], systems[2]};
    CHECK(evaluate_systems(items, pure, unigram).to_json() == evaluate_systems(items, pure, unigram).to_json());
    const auto table = report.to_table();
    for (const char* name : {"echo", "constant", "flaky", "mixed", "BLEU-4"}) {
      CHECK(table.find(name) != std::string::npos);
    }
  }
  CHECK_THROWS_AS(evaluate_systems(std::vector<EvalItem>{}, systems, unigram), Error);
}

TEST_CASE("a system that always fails reports zeros") {
  const auto pairs = oracle::random_corpus(3, 5, 4, 1);
  const auto items = items_of(pairs);
  const auto unigram = UnigramModel::uniform(Vocabulary{});
  std::vector<NamedSystem> systems{
      {"broken", [](const EvalItem&) -> SystemOutput { throw Error("nope"); }, true}};
  const auto report = evaluate_systems(items, systems, unigram);
  CHECK(report.systems[0].samples == 0);
  CHECK(report.systems[0].errors.size() == 3);
  CHECK(report.systems[0].bleu.cumulative[3] == 0.0);
  CHECK_FALSE(report.systems[0].selection);
  CHECK_NOTHROW(report.to_table());
}
