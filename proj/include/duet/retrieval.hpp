// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "duet/corpus.hpp"

namespace duet {

using StopwordSet = std::set<std::string, std::less<>>;

/// Sparse bag-of-words vector keyed by term, iteration in term order.
using SparseVector = std::map<std::string, double, std::less<>>;

/// Term -> sorted pair ids over the query side of a pair database.
///
/// Posting lists hold each pair at most once (presence, not counts), so the
/// document frequency of a term is the length of its posting list.
/// Stopwords are never indexed.
class InvertedIndex {
 public:
  InvertedIndex() = default;

  std::size_t n_docs() const noexcept { return n_docs_; }
  std::size_t n_terms() const noexcept { return postings_.size(); }
  const StopwordSet& stopwords() const noexcept { return stopwords_; }
  bool is_stopword(std::string_view term) const { return stopwords_.contains(term); }

  /// Empty span for terms outside the index.
  std::span<const PairId> postings(std::string_view term) const;
  std::size_t df(std::string_view term) const { return postings(term).size(); }

  const std::map<std::string, std::vector<PairId>, std::less<>>& all_postings() const noexcept {
    return postings_;
  }

  /// Line 1 is a JSON header {version, n_docs, n_terms, stopwords}; each
  /// following line is `term<TAB>df<TAB>id id ...` in byte-wise term order.
  std::string serialize() const;
  static InvertedIndex deserialize(std::string_view text);

  void save(const std::filesystem::path& path) const;
  static InvertedIndex load(const std::filesystem::path& path);

  bool operator==(const InvertedIndex&) const = default;

 private:
  friend InvertedIndex build_index(std::span<const QueryReplyPair> pairs, StopwordSet stopwords);

  std::size_t n_docs_ = 0;
  StopwordSet stopwords_;
  std::map<std::string, std::vector<PairId>, std::less<>> postings_;
};

/// Indexes the query side of `pairs`. Pair ids must be dense from 0.
InvertedIndex build_index(std::span<const QueryReplyPair> pairs, StopwordSet stopwords = {});

/// The `count` terms with the highest query-side document frequency, ties
/// broken lexicographically.
StopwordSet top_df_stopwords(std::span<const QueryReplyPair> pairs, std::size_t count = 25);

/// One term per line; blank lines ignored; surrounding whitespace trimmed.
StopwordSet load_stopwords(const std::filesystem::path& path);
void save_stopwords(const std::filesystem::path& path, const StopwordSet& stopwords);

/// Smoothed inverse document frequency ln((1 + n) / (1 + df)) + 1.
double idf(std::string_view term, const InvertedIndex& index);

struct ScoredPair {
  PairId id = 0;
  double score = 0.0;

  bool operator==(const ScoredPair&) const = default;
};

/// Sorted by score descending, then id ascending.
struct CandidateSet {
  std::vector<ScoredPair> entries;

  bool empty() const noexcept { return entries.empty(); }
  std::size_t size() const noexcept { return entries.size(); }
  bool operator==(const CandidateSet&) const = default;
};

inline constexpr std::size_t kDefaultCoarseK = 1000;

/// Coarse step: every pair whose query shares at least one distinct
/// non-stopword term with `query` scores the sum of idf over the shared
/// terms. Terms are accumulated in byte-wise order, so scores are
/// reproducible bit for bit. Returns the top k.
CandidateSet coarse_retrieve(const InvertedIndex& index, std::span<const std::string> query,
                             std::size_t k = kDefaultCoarseK);

/// tf * idf for every non-stopword term of `seq`.
SparseVector tfidf_vector(std::span<const std::string> seq, const InvertedIndex& index);

/// Cosine similarity; 0 when either vector is zero.
double cosine(const SparseVector& a, const SparseVector& b);

}  // namespace duet
