// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "duet/corpus.hpp"
#include "duet/ensemble.hpp"

namespace duet {

inline constexpr std::size_t kMaxBleuOrder = 4;
/// Added to a zero clipped n-gram count so the geometric mean stays finite.
inline constexpr double kBleuZeroSmoothing = 1e-9;

struct BleuDetail {
  /// Cumulative BLEU-n for n = 1..max_n (percent); unused orders are 0.
  std::array<double, kMaxBleuOrder> cumulative{};
  /// Unsmoothed modified precision of order n (percent).
  std::array<double, kMaxBleuOrder> precision{};
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

/// Corpus-level BLEU with one reference per candidate: clipped n-gram counts
/// and lengths are summed over the corpus, the precisions combined by a
/// geometric mean and scaled by exp(min(0, 1 - ref_len / cand_len)). An
/// order with no candidate n-grams has precision 0 (then smoothed); an empty
/// candidate corpus has brevity penalty 0. Throws on an empty corpus, a
/// length mismatch or max_n outside 1..4.
BleuDetail bleu_detail(std::span<const TokenSeq> candidates, std::span<const TokenSeq> references,
                       std::size_t max_n = kMaxBleuOrder);

/// Cumulative BLEU-max_n, percent scale.
double bleu(std::span<const TokenSeq> candidates, std::span<const TokenSeq> references, std::size_t max_n);

/// Add-alpha unigram distribution over every vocabulary row (reserved ids
/// included). Tokens outside the vocabulary count as UNK.
class UnigramModel {
 public:
  UnigramModel(Vocabulary vocab, std::vector<double> probs, double alpha);

  /// Every row gets 1/V.
  static UnigramModel uniform(Vocabulary vocab);

  double prob(std::string_view token) const;
  double prob(TokenId id) const { return probs_.at(static_cast<std::size_t>(id)); }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  const std::vector<double>& probs() const noexcept { return probs_; }
  double alpha() const noexcept { return alpha_; }

 private:
  Vocabulary vocab_;
  std::vector<double> probs_;
  double alpha_ = 0.0;
};

/// p(w) = (count(w) + alpha) / (total + alpha * V). Throws on empty input,
/// negative alpha, or alpha = 0 leaving some row at probability 0.
UnigramModel build_unigram(std::span<const TokenSeq> replies, const Vocabulary& vocab, double alpha = 1.0);
UnigramModel build_unigram_from_counts(const Vocabulary& vocab, std::span<const double> counts, double alpha);

enum class EntropyDenominator { kPerToken, kPerReply };

std::string_view to_string(EntropyDenominator d);
EntropyDenominator parse_entropy_denominator(std::string_view name);

/// -sum log p(w) over every token of every reply, divided by the token count
/// or the reply count. A corpus with no tokens has entropy 0. Throws on an
/// empty reply list.
double corpus_entropy(std::span<const TokenSeq> replies, const UnigramModel& unigram,
                      EntropyDenominator denominator = EntropyDenominator::kPerToken);

/// Mean token count. Throws on an empty list.
double mean_length(std::span<const TokenSeq> replies);

struct EvalItem {
  TokenSeq query;
  TokenSeq reference;
};

struct SystemOutput {
  TokenSeq reply;
  std::optional<Provenance> provenance;
};

struct NamedSystem {
  std::string name;
  std::function<SystemOutput(const EvalItem&)> respond;
  /// Report retrieved/generated selection proportions.
  bool report_selection = false;
};

struct QueryError {
  std::size_t index = 0;
  std::string message;
};

struct SystemReport {
  std::string name;
  std::size_t samples = 0;  // queries answered
  std::vector<QueryError> errors;
  BleuDetail bleu;
  double entropy_per_token = 0.0;
  double entropy_per_reply = 0.0;
  double mean_length = 0.0;
  std::optional<SelectionStats> selection;
  std::size_t fallbacks = 0;
};

inline constexpr int kReportVersion = 1;

struct EvalReport {
  std::vector<SystemReport> systems;
  EntropyDenominator denominator = EntropyDenominator::kPerToken;
  std::size_t test_size = 0;

  /// Machine-readable report (deterministic key order, no timings).
  std::string to_json() const;
  /// Aligned plain-text table, one row per system.
  std::string to_table() const;
};

/// Runs every system over every item. A system that throws on an item has
/// the error recorded and the item excluded from its metrics. A system with
/// no successful item reports zero metrics. Throws on an empty item list.
EvalReport evaluate_systems(std::span<const EvalItem> items, std::span<const NamedSystem> systems,
                            const UnigramModel& unigram,
                            EntropyDenominator denominator = EntropyDenominator::kPerToken);

}  // namespace duet
