// SPDX-License-Identifier: Apache-2.0
//
// Glue between the modules: the steps the CLI and the end-to-end tests run
// to go from a pair corpus to trained artifacts.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "duet/corpus.hpp"
#include "duet/ensemble.hpp"
#include "duet/gen/checkpoint.hpp"
#include "duet/gen/train.hpp"
#include "duet/matcher.hpp"

namespace duet {

struct MatcherRecipe {
  std::size_t negatives = 1;  // per positive
  MatcherTrainOptions train;
  EmbeddingSource embeddings;
};

/// Samples negatives, featurizes and trains. `embeddings` must match
/// recipe.embeddings (it is recorded in the model metadata).
MatcherModel build_matcher(std::span<const QueryReplyPair> pairs, const InvertedIndex& index,
                           const EmbeddingTable& embeddings, const MatcherRecipe& recipe);

/// For each training pair, the reply of the best retrieved pair, skipping
/// database pairs identical to the training pair itself (otherwise r* would
/// simply be the target whenever the database contains the training set).
/// nullopt where nothing is retrieved.
std::vector<std::optional<TokenSeq>> retrieve_training_rstars(std::span<const QueryReplyPair> pairs,
                                                              const KnowledgeBase& kb, std::size_t k);

/// Encodes pairs as generator triples. `rstars` (biseq2seq) must have one
/// entry per pair; missing entries become a single UNK.
std::vector<gen::Triple> make_triples(std::span<const QueryReplyPair> pairs, const Vocabulary& enc_vocab,
                                      const Vocabulary& dec_vocab,
                                      std::span<const std::optional<TokenSeq>> rstars = {});

struct GeneratorRecipe {
  gen::Architecture arch = gen::Architecture::kBiSeq2Seq;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t vocab_size = 2000;  // per side, reserved ids included
  std::size_t min_count = 1;
  std::size_t k = kDefaultCoarseK;  // biseq2seq r* retrieval
  gen::TrainConfig train;
};

struct GeneratorBuild {
  gen::Generator generator;
  gen::TrainHistory history;
};

/// Builds vocabularies from `train_pairs` (encoder: both sides, decoder:
/// replies), materializes r* through `kb` for biseq2seq, initializes from
/// the recipe seed and trains. The returned parameters are rounded through
/// float32 so they equal what a checkpoint round trip yields.
GeneratorBuild build_generator(std::span<const QueryReplyPair> train_pairs,
                               std::span<const QueryReplyPair> val_pairs, const GeneratorRecipe& recipe,
                               const KnowledgeBase* kb = nullptr);

/// A topical synthetic corpus of English-like query/reply pairs. Queries
/// and replies on the same topic share content words and are wrapped in
/// common function words, so document-frequency stopwords and lexical
/// matching both behave sensibly. Deterministic in (n, seed).
std::vector<QueryReplyPair> synth_corpus(std::size_t n, std::uint64_t seed);

}  // namespace duet
