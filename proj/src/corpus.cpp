// SPDX-License-Identifier: Apache-2.0
#include "duet/corpus.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/locid.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "duet/error.hpp"

namespace duet {
namespace {

constexpr int kVocabVersion = 1;
const std::vector<std::string> kReservedNames = {"<pad>", "<bos>", "<eos>", "<unk>"};

const icu::Normalizer2& nfc() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || normalizer == nullptr) {
    throw Error(std::string("ICU NFC normalizer unavailable: ") + u_errorName(status));
  }
  return *normalizer;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

TokenSeq tokenize(std::string_view text, const TokenizerOptions& options) {
  TokenSeq tokens;
  if (text.empty()) return tokens;

  icu::UnicodeString ustr = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  if (options.lowercase) ustr.toLower(icu::Locale::getRoot());
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString normalized = nfc().normalize(ustr, status);
  if (U_FAILURE(status)) throw Error(std::string("NFC normalization failed: ") + u_errorName(status));

  icu::UnicodeString current;
  auto flush = [&] {
    if (current.isEmpty()) return;
    std::string utf8;
    current.toUTF8String(utf8);
    tokens.push_back(std::move(utf8));
    current.remove();
  };
  for (int32_t i = 0; i < normalized.length();) {
    const UChar32 c = normalized.char32At(i);
    if (u_isUWhiteSpace(c)) {
      flush();
    } else {
      current.append(c);
    }
    i = normalized.moveIndex32(i, 1);
  }
  flush();
  return tokens;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary() = default;

Vocabulary::Vocabulary(std::vector<std::string> corpus_tokens) : tokens_(std::move(corpus_tokens)) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto [it, inserted] =
        index_.emplace(tokens_[i], static_cast<TokenId>(i + reserved::kCount));
    if (!inserted) throw Error("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? reserved::kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= size()) {
    throw Error("token id " + std::to_string(id) + " outside vocabulary of size " +
                std::to_string(size()));
  }
  if (id < reserved::kCount) return kReservedNames[static_cast<std::size_t>(id)];
  return tokens_[static_cast<std::size_t>(id - reserved::kCount)];
}

std::string Vocabulary::to_json() const {
  nlohmann::ordered_json doc;
  doc["version"] = kVocabVersion;
  doc["reserved"] = kReservedNames;
  doc["tokens"] = tokens_;
  return doc.dump(1) + "\n";
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  const auto doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw ArtifactError("vocabulary", "not a JSON object");
  if (doc.value("version", 0) != kVocabVersion) {
    throw ArtifactError("vocabulary", "unsupported version");
  }
  if (!doc.contains("reserved") || doc["reserved"].get<std::vector<std::string>>() != kReservedNames) {
    throw ArtifactError("vocabulary", "reserved ids do not match PAD/BOS/EOS/UNK");
  }
  return Vocabulary(doc.at("tokens").get<std::vector<std::string>>());
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  try {
    return from_json(read_file(path));
  } catch (const ArtifactError& e) {
    throw ArtifactError(path.string(), e.what());
  } catch (const std::exception& e) {
    throw ArtifactError(path.string(), e.what());
  }
}

Vocabulary build_vocabulary(std::span<const QueryReplyPair> pairs, VocabSide side,
                            std::size_t max_size, std::size_t min_count) {
  if (pairs.empty()) throw Error("build_vocabulary: no pairs");
  if (max_size < reserved::kCount + 1) throw Error("build_vocabulary: max_size must be at least 5");

  std::map<std::string, std::size_t> counts;
  for (const auto& pair : pairs) {
    if (side != VocabSide::kReply)
      for (const auto& t : pair.query) ++counts[t];
    if (side != VocabSide::kQuery)
      for (const auto& t : pair.reply) ++counts[t];
  }

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, count] : counts)
    if (count >= min_count) ranked.emplace_back(token, count);
  // counts is a std::map, so the input is already in lexicographic order and
  // a stable sort on frequency keeps it as the tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  const std::size_t capacity = max_size - reserved::kCount;
  if (ranked.size() > capacity) ranked.resize(capacity);

  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& entry : ranked) tokens.push_back(std::move(entry.first));
  return Vocabulary(std::move(tokens));
}

std::vector<TokenId> encode(std::span<const std::string> seq, const Vocabulary& vocab,
                            bool add_bos_eos) {
  std::vector<TokenId> ids;
  ids.reserve(seq.size() + 2);
  if (add_bos_eos) ids.push_back(reserved::kBos);
  for (const auto& token : seq) ids.push_back(vocab.id(token));
  if (add_bos_eos) ids.push_back(reserved::kEos);
  return ids;
}

TokenSeq decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab) {
  TokenSeq out;
  for (const TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw Error("decode_ids: id " + std::to_string(id) + " out of range for vocabulary of size " +
                  std::to_string(vocab.size()));
    }
    switch (id) {
      case reserved::kPad:
      case reserved::kBos:
      case reserved::kEos:
        break;
      case reserved::kUnk:
        out.emplace_back(kUnkToken);
        break;
      default:
        out.push_back(vocab.token(id));
    }
  }
  return out;
}

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "tsv") return CorpusFormat::kTsv;
  if (name == "jsonl") return CorpusFormat::kJsonl;
  throw Error("unknown corpus format '" + std::string(name) + "' (expected tsv or jsonl)");
}

CorpusFormat corpus_format_for(const std::filesystem::path& path) {
  return path.extension() == ".jsonl" ? CorpusFormat::kJsonl : CorpusFormat::kTsv;
}

LoadedCorpus load_pairs(const std::filesystem::path& path, CorpusFormat format,
                        const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus " + path.string());

  LoadedCorpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string query_text;
    std::string reply_text;
    if (format == CorpusFormat::kTsv) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError(path.string(), line_no, "missing TAB separator");
      if (line.find('\t', tab + 1) != std::string::npos) {
        throw ParseError(path.string(), line_no, "more than one TAB separator");
      }
      query_text = line.substr(0, tab);
      reply_text = line.substr(tab + 1);
    } else {
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      const auto doc = nlohmann::json::parse(line, nullptr, false);
      if (doc.is_discarded() || !doc.is_object()) {
        throw ParseError(path.string(), line_no, "not a JSON object");
      }
      if (!doc.contains("q") || !doc["q"].is_string() || !doc.contains("r") || !doc["r"].is_string()) {
        throw ParseError(path.string(), line_no, "expected string fields \"q\" and \"r\"");
      }
      query_text = doc["q"].get<std::string>();
      reply_text = doc["r"].get<std::string>();
    }

    QueryReplyPair pair;
    pair.query = tokenize(query_text, options.tokenizer);
    pair.reply = tokenize(reply_text, options.tokenizer);
    const std::size_t floor = std::max<std::size_t>(options.min_tokens, 1);
    if (pair.query.size() < floor || pair.reply.size() < floor) {
      ++corpus.dropped;
      continue;
    }
    pair.id = static_cast<PairId>(corpus.pairs.size());
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

void write_pairs_tsv(const std::filesystem::path& path, std::span<const QueryReplyPair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& pair : pairs) out << detokenize(pair.query) << '\t' << detokenize(pair.reply) << '\n';
}

DatasetSplit split_dataset(std::span<const QueryReplyPair> pairs, const SplitRatios& ratios,
                           std::uint64_t seed) {
  if (pairs.size() < 3) throw Error("split_dataset: need at least 3 pairs");
  if (ratios.train <= 0 || ratios.validation <= 0 || ratios.test <= 0) {
    throw Error("split_dataset: ratios must be positive");
  }
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw Error("split_dataset: ratios must sum to 1");
  }

  std::vector<PairId> ids(pairs.size());
  std::transform(pairs.begin(), pairs.end(), ids.begin(), [](const auto& p) { return p.id; });
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const auto n = static_cast<double>(ids.size());
  // The 1e-9 guards against 10 * 0.1 landing just below an integer.
  auto portion = [n](double ratio) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n * ratio + 1e-9)));
  };
  const std::size_t n_val = portion(ratios.validation);
  const std::size_t n_test = portion(ratios.test);
  if (n_val + n_test >= ids.size()) throw Error("split_dataset: no pairs left for training");

  DatasetSplit split;
  const auto val_begin = ids.end() - static_cast<std::ptrdiff_t>(n_val + n_test);
  const auto test_begin = ids.end() - static_cast<std::ptrdiff_t>(n_test);
  split.train.assign(ids.begin(), val_begin);
  split.validation.assign(val_begin, test_begin);
  split.test.assign(test_begin, ids.end());
  return split;
}

std::vector<QueryReplyPair> select_pairs(std::span<const QueryReplyPair> pairs,
                                         std::span<const PairId> ids) {
  std::unordered_map<PairId, const QueryReplyPair*> by_id;
  for (const auto& p : pairs) by_id.emplace(p.id, &p);
  std::vector<QueryReplyPair> out;
  out.reserve(ids.size());
  for (const PairId id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw Error("select_pairs: unknown pair id " + std::to_string(id));
    QueryReplyPair copy = *it->second;
    copy.id = static_cast<PairId>(out.size());
    out.push_back(std::move(copy));
  }
  return out;
}

}  // namespace duet
