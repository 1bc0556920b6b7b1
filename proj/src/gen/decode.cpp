// SPDX-License-Identifier: Apache-2.0
#include "duet/gen/decode.hpp"

#include <algorithm>
#include <limits>

#include "duet/error.hpp"

namespace duet::gen {
namespace {

bool emittable(TokenId id) { return id != reserved::kPad && id != reserved::kBos; }

struct Hypothesis {
  std::vector<TokenId> tokens;  // includes EOS when finished
  double log_prob = 0.0;
  Vector state;

  double mean() const { return log_prob / static_cast<double>(tokens.size()); }
};

std::vector<TokenId> greedy(const GeneratorParams& params, Vector state, std::size_t max_len) {
  std::vector<TokenId> out;
  TokenId input = reserved::kBos;
  for (std::size_t step = 0; step < max_len; ++step) {
    state = decoder_step(params, input, state);
    const Vector lp = output_log_probs(params, state);
    TokenId best = -1;
    for (Eigen::Index id = 0; id < lp.size(); ++id) {
      if (!emittable(static_cast<TokenId>(id))) continue;
      if (best < 0 || lp[id] > lp[best]) best = static_cast<TokenId>(id);
    }
    if (best < 0 || best == reserved::kEos) break;
    out.push_back(best);
    input = best;
  }
  return out;
}

std::vector<TokenId> beam(const GeneratorParams& params, const Vector& init, const DecodeConfig& config) {
  std::vector<Hypothesis> live{{{}, 0.0, init}};
  std::vector<Hypothesis> finished;

  struct Expansion {
    std::size_t parent;
    TokenId token;
    double log_prob;
  };
  std::vector<Expansion> expansions;
  std::vector<Vector> states;

  for (std::size_t step = 0; step < config.max_len && !live.empty(); ++step) {
    expansions.clear();
    states.clear();
    for (std::size_t i = 0; i < live.size(); ++i) {
      const TokenId input = live[i].tokens.empty() ? reserved::kBos : live[i].tokens.back();
      states.push_back(decoder_step(params, input, live[i].state));
      const Vector lp = output_log_probs(params, states.back());
      for (Eigen::Index id = 0; id < lp.size(); ++id) {
        if (emittable(static_cast<TokenId>(id))) {
          expansions.push_back({i, static_cast<TokenId>(id), live[i].log_prob + lp[id]});
        }
      }
    }
    // Live hypotheses share a length, so summed log-prob orders them the same
    // way as the mean. Ties: lexicographically smaller sequence first.
    auto better = [&](const Expansion& a, const Expansion& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      const auto& ta = live[a.parent].tokens;
      const auto& tb = live[b.parent].tokens;
      if (ta != tb) return std::lexicographical_compare(ta.begin(), ta.end(), tb.begin(), tb.end());
      return a.token < b.token;
    };
    const std::size_t keep = std::min(config.beam_width, expansions.size());
    std::partial_sort(expansions.begin(), expansions.begin() + static_cast<std::ptrdiff_t>(keep),
                      expansions.end(), better);

    std::vector<Hypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& e = expansions[k];
      Hypothesis h{live[e.parent].tokens, e.log_prob, states[e.parent]};
      h.tokens.push_back(e.token);
      if (e.token == reserved::kEos) {
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  for (auto& h : live) finished.push_back(std::move(h));
  if (finished.empty()) return {};

  const auto best = std::min_element(finished.begin(), finished.end(), [](const auto& a, const auto& b) {
    const double ma = a.mean();
    const double mb = b.mean();
    if (ma != mb) return ma > mb;
    return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(), b.tokens.begin(), b.tokens.end());
  });
  std::vector<TokenId> out = best->tokens;
  if (!out.empty() && out.back() == reserved::kEos) out.pop_back();
  return out;
}

}  // namespace

std::vector<TokenId> generate(const GeneratorParams& params, std::span<const TokenId> query,
                              std::span<const TokenId> rstar, const DecodeConfig& config) {
  if (config.max_len == 0) throw Error("generate: max_len must be at least 1");
  if (config.beam_width == 0) throw Error("generate: beam_width must be at least 1");
  const Vector init = initial_state(params, query, rstar);
  if (config.beam_width == 1) return greedy(params, init, config.max_len);
  return beam(params, init, config);
}

}  // namespace duet::gen
