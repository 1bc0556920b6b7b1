// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "duet/gen/model.hpp"

namespace duet::gen {

struct DecodeConfig {
  /// Upper bound on emitted tokens, EOS included.
  std::size_t max_len = 30;
  /// 1 = greedy argmax; >1 = beam search ranked by mean token log-prob.
  std::size_t beam_width = 1;
};

/// Generates a reply from BOS until EOS or max_len tokens. PAD and BOS are
/// never emitted; exact score ties go to the lower token id (and, between
/// beam hypotheses, to the lexicographically smaller id sequence). The
/// returned ids exclude the final EOS. `rstar` is ignored for seq2seq.
std::vector<TokenId> generate(const GeneratorParams& params, std::span<const TokenId> query,
                              std::span<const TokenId> rstar, const DecodeConfig& config = {});

}  // namespace duet::gen
