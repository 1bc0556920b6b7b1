// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace duet {

/// A tokenized utterance. Tokens are non-empty and contain no whitespace.
using TokenSeq = std::vector<std::string>;

using TokenId = std::int32_t;
using PairId = std::int64_t;

/// The corpus unit: a query and the human reply it received.
struct QueryReplyPair {
  PairId id = 0;
  TokenSeq query;
  TokenSeq reply;

  bool operator==(const QueryReplyPair&) const = default;
};

struct TokenizerOptions {
  bool lowercase = true;
};

/// Splits on runs of Unicode whitespace after NFC normalization and
/// (optionally) lowercasing. Empty input yields an empty sequence.
TokenSeq tokenize(std::string_view text, const TokenizerOptions& options = {});

/// Joins tokens with single spaces.
std::string detokenize(std::span<const std::string> tokens);

namespace reserved {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kCount = 4;
}  // namespace reserved

/// Rendering of the UNK id by decode_ids.
inline constexpr std::string_view kUnkToken = "⟨unk⟩";

/// Token <-> id map with the four reserved ids (PAD, BOS, EOS, UNK) at 0..3.
/// Corpus tokens start at id 4 and are ordered by descending frequency.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> corpus_tokens);

  std::size_t size() const noexcept { return reserved::kCount + tokens_.size(); }

  /// Returns UNK for tokens outside the vocabulary.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;

  /// Token text for a corpus id. Reserved ids map to their names
  /// ("<pad>", "<bos>", "<eos>", "<unk>").
  const std::string& token(TokenId id) const;

  /// Corpus tokens in id order (excluding the reserved ids).
  const std::vector<std::string>& corpus_tokens() const noexcept { return tokens_; }

  /// JSON document {version, reserved, tokens}.
  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

enum class VocabSide { kQuery, kReply, kBoth };

/// Frequency-ranked vocabulary (ties broken lexicographically), truncated to
/// max_size - 4 corpus tokens, excluding tokens seen fewer than min_count
/// times. Throws on an empty pair list or max_size < 5.
Vocabulary build_vocabulary(std::span<const QueryReplyPair> pairs, VocabSide side,
                            std::size_t max_size, std::size_t min_count = 1);

/// Maps tokens to ids (unknown -> UNK). With add_bos_eos, the output is
/// framed as BOS ids... EOS.
std::vector<TokenId> encode(std::span<const std::string> seq, const Vocabulary& vocab,
                            bool add_bos_eos);

/// Drops PAD/BOS/EOS and renders UNK as kUnkToken. Throws on ids outside
/// the vocabulary.
TokenSeq decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab);

enum class CorpusFormat { kTsv, kJsonl };

CorpusFormat parse_corpus_format(std::string_view name);

/// Infers the format from the extension: ".jsonl" -> JSONL, anything else TSV.
CorpusFormat corpus_format_for(const std::filesystem::path& path);

struct LoadOptions {
  TokenizerOptions tokenizer;
  /// Records whose query or reply has fewer tokens are dropped.
  std::size_t min_tokens = 1;
};

struct LoadedCorpus {
  std::vector<QueryReplyPair> pairs;
  std::size_t dropped = 0;
};

/// Reads TSV (query<TAB>reply) or JSONL ({"q": ..., "r": ...}). Ids follow
/// the order of the kept records. Throws ParseError on malformed records.
LoadedCorpus load_pairs(const std::filesystem::path& path, CorpusFormat format,
                        const LoadOptions& options = {});

/// Writes pairs as TSV, tokens joined by single spaces.
void write_pairs_tsv(const std::filesystem::path& path, std::span<const QueryReplyPair> pairs);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<PairId> train;
  std::vector<PairId> validation;
  std::vector<PairId> test;
};

/// Seeded shuffle, then cut into train/validation/test. Validation and
/// test sizes are floor(n * ratio) but at least 1; the train set takes the
/// remainder. Throws for fewer than 3 pairs or ratios that do not sum to 1.
DatasetSplit split_dataset(std::span<const QueryReplyPair> pairs, const SplitRatios& ratios,
                           std::uint64_t seed);

/// Selects pairs by id and renumbers them densely from 0.
std::vector<QueryReplyPair> select_pairs(std::span<const QueryReplyPair> pairs,
                                         std::span<const PairId> ids);

}  // namespace duet
