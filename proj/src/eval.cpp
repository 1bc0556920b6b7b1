// SPDX-License-Identifier: Apache-2.0
#include "duet/eval.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include <json.hpp>

#include "duet/error.hpp"

namespace duet {
namespace {

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts ngrams(const TokenSeq& seq, std::size_t n) {
  NgramCounts counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[std::vector<std::string_view>(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                           seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

BleuDetail bleu_detail(std::span<const TokenSeq> candidates, std::span<const TokenSeq> references,
                       std::size_t max_n) {
  if (candidates.empty()) throw Error("bleu: empty corpus");
  if (candidates.size() != references.size()) throw Error("bleu: candidate and reference counts differ");
  if (max_n < 1 || max_n > kMaxBleuOrder) throw Error("bleu: max_n must be in 1..4");

  BleuDetail out;
  std::array<std::size_t, kMaxBleuOrder> clipped{};
  std::array<std::size_t, kMaxBleuOrder> total{};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out.candidate_length += candidates[i].size();
    out.reference_length += references[i].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto cand = ngrams(candidates[i], n);
      const auto ref = ngrams(references[i], n);
      for (const auto& [gram, count] : cand) {
        total[n - 1] += count;
        const auto it = ref.find(gram);
        if (it != ref.end()) clipped[n - 1] += std::min(count, it->second);
      }
    }
  }

  if (out.candidate_length > 0) {
    out.brevity_penalty = std::exp(std::min(
        0.0, 1.0 - static_cast<double>(out.reference_length) / static_cast<double>(out.candidate_length)));
  }
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const double denom = static_cast<double>(std::max<std::size_t>(total[n - 1], 1));
    const double p = static_cast<double>(clipped[n - 1]) / denom;
    out.precision[n - 1] = 100.0 * p;
    const double smoothed = clipped[n - 1] == 0 ? kBleuZeroSmoothing / denom : p;
    log_sum += std::log(smoothed);
    out.cumulative[n - 1] = 100.0 * out.brevity_penalty * std::exp(log_sum / static_cast<double>(n));
  }
  return out;
}

double bleu(std::span<const TokenSeq> candidates, std::span<const TokenSeq> references, std::size_t max_n) {
  return bleu_detail(candidates, references, max_n).cumulative[max_n - 1];
}

UnigramModel::UnigramModel(Vocabulary vocab, std::vector<double> probs, double alpha)
    : vocab_(std::move(vocab)), probs_(std::move(probs)), alpha_(alpha) {
  if (probs_.size() != vocab_.size()) throw Error("UnigramModel: one probability per vocabulary row required");
}

UnigramModel UnigramModel::uniform(Vocabulary vocab) {
  const auto v = vocab.size();
  return UnigramModel(std::move(vocab), std::vector<double>(v, 1.0 / static_cast<double>(v)), 0.0);
}

double UnigramModel::prob(std::string_view token) const { return prob(vocab_.id(token)); }

UnigramModel build_unigram_from_counts(const Vocabulary& vocab, std::span<const double> counts, double alpha) {
  if (counts.size() != vocab.size()) throw Error("build_unigram: one count per vocabulary row required");
  if (alpha < 0.0) throw Error("build_unigram: smoothing must be non-negative");
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double denom = total + alpha * static_cast<double>(vocab.size());
  if (denom <= 0.0) throw Error("build_unigram: no counts and no smoothing");
  std::vector<double> probs(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    probs[i] = (counts[i] + alpha) / denom;
    if (probs[i] <= 0.0) {
      throw Error("build_unigram: '" + vocab.token(static_cast<TokenId>(i)) + "' has probability 0; use alpha > 0");
    }
  }
  return UnigramModel(vocab, std::move(probs), alpha);
}

UnigramModel build_unigram(std::span<const TokenSeq> replies, const Vocabulary& vocab, double alpha) {
  if (replies.empty()) throw Error("build_unigram: no replies");
  std::vector<double> counts(vocab.size(), 0.0);
  for (const auto& reply : replies) {
    for (const auto& token : reply) counts[static_cast<std::size_t>(vocab.id(token))] += 1.0;
  }
  return build_unigram_from_counts(vocab, counts, alpha);
}

std::string_view to_string(EntropyDenominator d) {
  return d == EntropyDenominator::kPerToken ? "per_token" : "per_reply";
}

EntropyDenominator parse_entropy_denominator(std::string_view name) {
  if (name == "per_token") return EntropyDenominator::kPerToken;
  if (name == "per_reply") return EntropyDenominator::kPerReply;
  throw Error("unknown entropy denominator '" + std::string(name) + "' (expected per_token or per_reply)");
}

double corpus_entropy(std::span<const TokenSeq> replies, const UnigramModel& unigram,
                      EntropyDenominator denominator) {
  if (replies.empty()) throw Error("corpus_entropy: no replies");
  double neg_log = 0.0;
  std::size_t tokens = 0;
  for (const auto& reply : replies) {
    for (const auto& token : reply) neg_log -= std::log(unigram.prob(token));
    tokens += reply.size();
  }
  if (tokens == 0) return 0.0;
  const double n = denominator == EntropyDenominator::kPerToken ? static_cast<double>(tokens)
                                                                 : static_cast<double>(replies.size());
  return neg_log / n;
}

double mean_length(std::span<const TokenSeq> replies) {
  if (replies.empty()) throw Error("mean_length: no replies");
  std::size_t tokens = 0;
  for (const auto& reply : replies) tokens += reply.size();
  return static_cast<double>(tokens) / static_cast<double>(replies.size());
}

EvalReport evaluate_systems(std::span<const EvalItem> items, std::span<const NamedSystem> systems,
                            const UnigramModel& unigram, EntropyDenominator denominator) {
  if (items.empty()) throw Error("evaluate_systems: empty test set");
  EvalReport report;
  report.denominator = denominator;
  report.test_size = items.size();
  for (const auto& system : systems) {
    SystemReport row;
    row.name = system.name;
    std::vector<TokenSeq> replies;
    std::vector<TokenSeq> references;
    std::vector<ChatResponse> selections;
    for (std::size_t i = 0; i < items.size(); ++i) {
      SystemOutput out;
      try {
        out = system.respond(items[i]);
      } catch (const std::exception& e) {
        row.errors.push_back({i, e.what()});
        continue;
      }
      if (out.provenance == Provenance::kFallback) ++row.fallbacks;
      if (out.provenance) {
        ChatResponse r;
        r.provenance = *out.provenance;
        selections.push_back(std::move(r));
      }
      replies.push_back(std::move(out.reply));
      references.push_back(items[i].reference);
    }
    row.samples = replies.size();
    if (!replies.empty()) {
      row.bleu = bleu_detail(replies, references, kMaxBleuOrder);
      row.entropy_per_token = corpus_entropy(replies, unigram, EntropyDenominator::kPerToken);
      row.entropy_per_reply = corpus_entropy(replies, unigram, EntropyDenominator::kPerReply);
      row.mean_length = mean_length(replies);
    }
    if (system.report_selection) {
      try {
        row.selection = selection_stats(selections);
      } catch (const Error&) {
        // nothing countable (all errors or fallbacks)
      }
    }
    report.systems.push_back(std::move(row));
  }
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["version"] = kReportVersion;
  doc["test_size"] = test_size;
  doc["entropy_denominator"] = std::string(duet::to_string(denominator));
  doc["systems"] = nlohmann::ordered_json::array();
  for (const auto& s : systems) {
    nlohmann::ordered_json row;
    row["name"] = s.name;
    row["samples"] = s.samples;
    row["errors"] = s.errors.size();
    row["fallbacks"] = s.fallbacks;
    row["bleu"] = {{"1", s.bleu.cumulative[0]}, {"2", s.bleu.cumulative[1]},
                   {"3", s.bleu.cumulative[2]}, {"4", s.bleu.cumulative[3]}};
    row["ngram_precision"] = {{"1", s.bleu.precision[0]}, {"2", s.bleu.precision[1]},
                              {"3", s.bleu.precision[2]}, {"4", s.bleu.precision[3]}};
    row["brevity_penalty"] = s.bleu.brevity_penalty;
    row["entropy"] = denominator == EntropyDenominator::kPerToken ? s.entropy_per_token : s.entropy_per_reply;
    row["entropy_per_token"] = s.entropy_per_token;
    row["entropy_per_reply"] = s.entropy_per_reply;
    row["mean_length"] = s.mean_length;
    if (s.selection) {
      row["selection"] = {{"retrieved", s.selection->retrieved},
                          {"generated", s.selection->generated},
                          {"counted", s.selection->counted}};
    } else {
      row["selection"] = nullptr;
    }
    auto errors = nlohmann::ordered_json::array();
    for (const auto& e : s.errors) errors.push_back({{"index", e.index}, {"message", e.message}});
    row["error_details"] = errors;
    doc["systems"].push_back(row);
  }
  return doc.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  const std::vector<std::string> header = {"system", "n",       "err",     "BLEU-1",  "BLEU-2", "BLEU-3",
                                           "BLEU-4", "entropy", "length",  "retr%",   "gen%"};
  std::vector<std::vector<std::string>> rows{header};
  for (const auto& s : systems) {
    const double entropy = denominator == EntropyDenominator::kPerToken ? s.entropy_per_token : s.entropy_per_reply;
    rows.push_back({s.name, std::to_string(s.samples), std::to_string(s.errors.size()),
                    fixed(s.bleu.cumulative[0], 3), fixed(s.bleu.cumulative[1], 3), fixed(s.bleu.cumulative[2], 3),
                    fixed(s.bleu.cumulative[3], 3), fixed(entropy, 3), fixed(s.mean_length, 2),
                    s.selection ? fixed(100.0 * s.selection->retrieved, 2) : "-",
                    s.selection ? fixed(100.0 * s.selection->generated, 2) : "-"});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const auto& cell = rows[r][c];
      const std::string pad(width[c] - cell.size(), ' ');
      if (c > 0) out += "  ";
      out += c == 0 ? cell + pad : pad + cell;  // names left, numbers right
    }
    out += "\n";
    if (r == 0) {
      std::size_t line = 2 * (width.size() - 1);
      for (auto w : width) line += w;
      out += std::string(line, '-') + "\n";
    }
  }
  out += "entropy: " + std::string(duet::to_string(denominator)) + ", nats\n";
  return out;
}

}  // namespace duet
