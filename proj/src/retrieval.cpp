// SPDX-License-Identifier: Apache-2.0
#include "duet/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "duet/error.hpp"

namespace duet {
namespace {

constexpr int kIndexVersion = 1;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::span<const PairId> InvertedIndex::postings(std::string_view term) const {
  const auto it = postings_.find(term);
  if (it == postings_.end()) return {};
  return it->second;
}

InvertedIndex build_index(std::span<const QueryReplyPair> pairs, StopwordSet stopwords) {
  InvertedIndex index;
  index.n_docs_ = pairs.size();
  index.stopwords_ = std::move(stopwords);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].id != static_cast<PairId>(i)) {
      throw Error("build_index: pair ids must be dense from 0 (found id " +
                  std::to_string(pairs[i].id) + " at position " + std::to_string(i) + ")");
    }
    for (const auto& term : pairs[i].query) {
      if (index.stopwords_.contains(term)) continue;
      auto& list = index.postings_[term];
      // Pairs arrive in id order, so a duplicate can only be the last entry.
      if (list.empty() || list.back() != pairs[i].id) list.push_back(pairs[i].id);
    }
  }
  return index;
}

StopwordSet top_df_stopwords(std::span<const QueryReplyPair> pairs, std::size_t count) {
  std::map<std::string, std::size_t> df;
  for (const auto& pair : pairs) {
    const std::set<std::string> distinct(pair.query.begin(), pair.query.end());
    for (const auto& term : distinct) ++df[term];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(df.begin(), df.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  StopwordSet out;
  for (std::size_t i = 0; i < ranked.size() && i < count; ++i) out.insert(ranked[i].first);
  return out;
}

StopwordSet load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open stopword file " + path.string());
  StopwordSet out;
  std::string line;
  while (std::getline(in, line)) {
    const auto term = trim(line);
    if (!term.empty()) out.emplace(term);
  }
  return out;
}

void save_stopwords(const std::filesystem::path& path, const StopwordSet& stopwords) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& term : stopwords) out << term << '\n';
}

double idf(std::string_view term, const InvertedIndex& index) {
  const auto n = static_cast<double>(index.n_docs());
  const auto df = static_cast<double>(index.df(term));
  return std::log((1.0 + n) / (1.0 + df)) + 1.0;
}

CandidateSet coarse_retrieve(const InvertedIndex& index, std::span<const std::string> query,
                             std::size_t k) {
  if (k == 0) throw Error("coarse_retrieve: k must be at least 1");
  const std::set<std::string, std::less<>> terms(query.begin(), query.end());

  std::vector<double> scores(index.n_docs(), 0.0);
  std::vector<PairId> touched;
  for (const auto& term : terms) {
    if (index.is_stopword(term)) continue;
    const auto postings = index.postings(term);
    if (postings.empty()) continue;
    const double weight = idf(term, index);
    for (const PairId id : postings) {
      auto& s = scores[static_cast<std::size_t>(id)];
      if (s == 0.0) touched.push_back(id);
      s += weight;
    }
  }

  CandidateSet out;
  out.entries.reserve(touched.size());
  for (const PairId id : touched) out.entries.push_back({id, scores[static_cast<std::size_t>(id)]});
  auto better = [](const ScoredPair& a, const ScoredPair& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  };
  const std::size_t keep = std::min(k, out.entries.size());
  std::partial_sort(out.entries.begin(), out.entries.begin() + static_cast<std::ptrdiff_t>(keep),
                    out.entries.end(), better);
  out.entries.resize(keep);
  return out;
}

SparseVector tfidf_vector(std::span<const std::string> seq, const InvertedIndex& index) {
  SparseVector tf;
  for (const auto& term : seq) {
    if (!index.is_stopword(term)) tf[term] += 1.0;
  }
  for (auto& [term, weight] : tf) weight *= idf(term, index);
  return tf;
}

double cosine(const SparseVector& a, const SparseVector& b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (const auto& [term, w] : a) {
    na += w * w;
    const auto it = b.find(term);
    if (it != b.end()) dot += w * it->second;
  }
  for (const auto& [term, w] : b) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::string InvertedIndex::serialize() const {
  nlohmann::ordered_json header;
  header["version"] = kIndexVersion;
  header["n_docs"] = n_docs_;
  header["n_terms"] = postings_.size();
  header["stopwords"] = std::vector<std::string>(stopwords_.begin(), stopwords_.end());

  std::string out = header.dump();
  out += '\n';
  for (const auto& [term, ids] : postings_) {
    out += term;
    out += '\t';
    out += std::to_string(ids.size());
    out += '\t';
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += std::to_string(ids[i]);
    }
    out += '\n';
  }
  return out;
}

InvertedIndex InvertedIndex::deserialize(std::string_view text) {
  const auto header_end = text.find('\n');
  if (header_end == std::string_view::npos) throw ArtifactError("index", "missing header line");
  const auto header = nlohmann::json::parse(text.substr(0, header_end), nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw ArtifactError("index", "header is not JSON");
  if (header.value("version", 0) != kIndexVersion) throw ArtifactError("index", "unsupported version");

  InvertedIndex index;
  index.n_docs_ = header.at("n_docs").get<std::size_t>();
  for (const auto& term : header.at("stopwords")) index.stopwords_.insert(term.get<std::string>());
  const auto n_terms = header.at("n_terms").get<std::size_t>();

  std::size_t pos = header_end + 1;
  std::size_t line_no = 1;
  std::string previous;
  while (pos < text.size()) {
    ++line_no;
    const auto end = text.find('\n', pos);
    if (end == std::string_view::npos) throw ParseError("index", line_no, "unterminated line");
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;

    const auto tab1 = line.find('\t');
    const auto tab2 = line.find('\t', tab1 == std::string_view::npos ? tab1 : tab1 + 1);
    if (tab1 == std::string_view::npos || tab2 == std::string_view::npos) {
      throw ParseError("index", line_no, "expected term<TAB>df<TAB>ids");
    }
    std::string term(line.substr(0, tab1));
    if (!index.postings_.empty() && term <= previous) {
      throw ParseError("index", line_no, "terms out of order");
    }
    std::size_t df = 0;
    const auto df_text = line.substr(tab1 + 1, tab2 - tab1 - 1);
    if (std::from_chars(df_text.data(), df_text.data() + df_text.size(), df).ec != std::errc{}) {
      throw ParseError("index", line_no, "bad document frequency");
    }

    std::vector<PairId> ids;
    ids.reserve(df);
    std::string_view rest = line.substr(tab2 + 1);
    while (!rest.empty()) {
      const auto space = rest.find(' ');
      const auto field = rest.substr(0, space);
      PairId id = 0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), id);
      if (ec != std::errc{} || ptr != field.data() + field.size() || id < 0 ||
          static_cast<std::size_t>(id) >= index.n_docs_ || (!ids.empty() && id <= ids.back())) {
        throw ParseError("index", line_no, "bad posting id '" + std::string(field) + "'");
      }
      ids.push_back(id);
      rest = space == std::string_view::npos ? std::string_view{} : rest.substr(space + 1);
    }
    if (ids.size() != df || ids.empty()) throw ParseError("index", line_no, "df does not match postings");
    if (index.stopwords_.contains(term)) throw ParseError("index", line_no, "stopword has postings");
    previous = term;
    index.postings_.emplace(std::move(term), std::move(ids));
  }
  if (index.postings_.size() != n_terms) throw ArtifactError("index", "term count does not match header");
  return index;
}

void InvertedIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize();
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(path.string(), "cannot open");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return deserialize(buffer.str());
  } catch (const std::exception& e) {
    throw ArtifactError(path.string(), e.what());
  }
}

}  // namespace duet
