// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <functional>

#include "duet/error.hpp"
#include "duet/gen/decode.hpp"
#include "support.hpp"

using namespace duet;
using namespace duet::gen;

namespace {

const ModelDims kSmall{3, 4, 11, 7};

// Step-by-step argmax over softmax probabilities, written out longhand.
std::vector<TokenId> greedy_oracle(const GeneratorParams& p, std::span<const TokenId> q,
                                   std::span<const TokenId> r, std::size_t max_len) {
  Vector h = initial_state(p, q, r);
  TokenId input = reserved::kBos;
  std::vector<TokenId> out;
  for (std::size_t t = 0; t < max_len; ++t) {
    h = decoder_step(p, input, h);
    const Vector probs = softmax(p.dec.out_weight * h + p.dec.out_bias);
    TokenId best = reserved::kEos;
    for (TokenId id = 2; id < probs.size(); ++id) {
      if (probs(id) > probs(best)) best = id;
    }
    if (best == reserved::kEos) break;
    out.push_back(best);
    input = best;
  }
  return out;
}

struct Scored {
  std::vector<TokenId> tokens;  // with EOS if it ended
  double mean = 0.0;
};

// Every sequence of length <= max_len: ends in EOS, or runs to max_len.
Scored exhaustive_best(const GeneratorParams& p, std::span<const TokenId> q, std::span<const TokenId> r,
                       std::size_t max_len) {
  Scored best{{}, -INFINITY};
  std::function<void(std::vector<TokenId>&, const Vector&, double)> walk =
      [&](std::vector<TokenId>& prefix, const Vector& h, double lp) {
        const TokenId input = prefix.empty() ? reserved::kBos : prefix.back();
        const Vector next = decoder_step(p, input, h);
        const Vector logp = log_softmax(p.dec.out_weight * next + p.dec.out_bias);
        for (TokenId id = 2; id < logp.size(); ++id) {
          prefix.push_back(id);
          const double total = lp + logp(id);
          if (id == reserved::kEos || prefix.size() == max_len) {
            const double mean = total / static_cast<double>(prefix.size());
            if (mean > best.mean) best = {prefix, mean};
          } else {
            walk(prefix, next, total);
          }
          prefix.pop_back();
        }
      };
  std::vector<TokenId> prefix;
  walk(prefix, initial_state(p, q, r), 0.0);
  return best;
}

}  // namespace

TEST_CASE("greedy decoding equals the argmax loop") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto arch = seed % 2 ? Architecture::kSeq2Seq : Architecture::kBiSeq2Seq;
    const auto params = testing::random_params(arch, kSmall, seed, 1.0);
    const auto t = testing::random_triples(arch, kSmall, 1, 5, seed)[0];
    for (std::size_t max_len : {1u, 3u, 12u}) {
      CHECK(generate(params, t.query, t.rstar, {max_len, 1}) == greedy_oracle(params, t.query, t.rstar, max_len));
    }
  }
}

TEST_CASE("wide beam finds the best mean log-prob sequence") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto params = testing::random_params(Architecture::kBiSeq2Seq, kSmall, seed + 100, 1.5);
    const auto t = testing::random_triples(Architecture::kBiSeq2Seq, kSmall, 1, 4, seed)[0];
    const std::size_t max_len = 3;
    // 5 emittable ids, so 5^3 covers every hypothesis
    const auto got = generate(params, t.query, t.rstar, {max_len, 125});
    auto want = exhaustive_best(params, t.query, t.rstar, max_len).tokens;
    if (!want.empty() && want.back() == reserved::kEos) want.pop_back();
    CHECK(got == want);
  }
}

TEST_CASE("decoder output constraints") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto params = testing::random_params(Architecture::kSeq2Seq, kSmall, seed, 1.0);
    // make PAD and BOS overwhelmingly likely; they still must not appear
    params.dec.out_bias(reserved::kPad) = 50.0;
    params.dec.out_bias(reserved::kBos) = 49.0;
    const auto t = testing::random_triples(Architecture::kSeq2Seq, kSmall, 1, 5, seed)[0];
    for (std::size_t beam : {1u, 3u}) {
      const auto out = generate(params, t.query, {}, {8, beam});
      CHECK(out.size() <= 8);
      for (TokenId id : out) {
        CHECK(id != reserved::kPad);
        CHECK(id != reserved::kBos);
        CHECK(id != reserved::kEos);
      }
      CHECK(generate(params, t.query, {}, {8, beam}) == out);
      CHECK(generate(params, t.query, {}, {1, beam}).size() <= 1);
    }
  }
}

TEST_CASE("EOS is stripped and ends the reply") {
  auto params = GeneratorParams::zeros(Architecture::kSeq2Seq, kSmall);
  params.dec.out_bias(reserved::kEos) = 5.0;
  const std::vector<TokenId> q{4};
  CHECK(generate(params, q, {}).empty());
  CHECK(generate(params, q, {}, {5, 4}).empty());

  params.dec.out_bias.setZero();
  params.dec.out_bias(6) = 3.0;
  CHECK(generate(params, q, {}, {4, 1}) == std::vector<TokenId>{6, 6, 6, 6});
}

TEST_CASE("ties go to the lower token id") {
  auto params = GeneratorParams::zeros(Architecture::kSeq2Seq, kSmall);
  // all emittable ids tie; UNK (3) is the lowest after EOS (2)
  params.dec.out_bias(reserved::kEos) = -1.0;
  const std::vector<TokenId> q{4};
  CHECK(generate(params, q, {}, {2, 1}) == std::vector<TokenId>{3, 3});
  CHECK(generate(params, q, {}, {2, 3}) == std::vector<TokenId>{3, 3});
}

TEST_CASE("decode config validation") {
  const auto params = GeneratorParams::zeros(Architecture::kBiSeq2Seq, kSmall);
  const std::vector<TokenId> q{4};
  CHECK_THROWS_AS(generate(params, q, q, {0, 1}), Error);
  CHECK_THROWS_AS(generate(params, q, q, {5, 0}), Error);
  CHECK_THROWS_AS(generate(params, q, {}, {5, 1}), Error);
}
