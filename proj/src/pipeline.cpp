// SPDX-License-Identifier: Apache-2.0
#include "duet/pipeline.hpp"

#include <array>
#include <random>
#include <string_view>

#include "duet/error.hpp"

namespace duet {

MatcherModel build_matcher(std::span<const QueryReplyPair> pairs, const InvertedIndex& index,
                           const EmbeddingTable& embeddings, const MatcherRecipe& recipe) {
  const auto samples = generate_negatives(pairs, recipe.negatives, recipe.train.seed);
  const auto examples = featurize(samples, pairs, index, embeddings);
  MatcherModel model = train_matcher(examples, recipe.train);
  model.metadata.embeddings = recipe.embeddings;
  return model;
}

std::vector<std::optional<TokenSeq>> retrieve_training_rstars(std::span<const QueryReplyPair> pairs,
                                                              const KnowledgeBase& kb, std::size_t k) {
  std::vector<std::optional<TokenSeq>> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) {
    // One extra slot so that dropping the pair itself still leaves k.
    CandidateSet coarse = coarse_retrieve(kb.index, pair.query, k + 1);
    std::erase_if(coarse.entries, [&](const ScoredPair& c) {
      const auto& db = kb.pairs[static_cast<std::size_t>(c.id)];
      return db.query == pair.query && db.reply == pair.reply;
    });
    if (coarse.entries.size() > k) coarse.entries.resize(k);
    const auto best = rank_candidates(pair.query, coarse, kb.pairs, kb.matcher, kb.index, kb.embeddings);
    if (best) {
      out.emplace_back(kb.pairs[static_cast<std::size_t>(best->id)].reply);
    } else {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

std::vector<gen::Triple> make_triples(std::span<const QueryReplyPair> pairs, const Vocabulary& enc_vocab,
                                      const Vocabulary& dec_vocab,
                                      std::span<const std::optional<TokenSeq>> rstars) {
  if (!rstars.empty() && rstars.size() != pairs.size()) throw Error("make_triples: one r* per pair required");
  std::vector<gen::Triple> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    gen::Triple t;
    t.query = encode(pairs[i].query, enc_vocab, false);
    t.reply = encode(pairs[i].reply, dec_vocab, true);
    if (!rstars.empty()) {
      if (rstars[i] && !rstars[i]->empty()) {
        t.rstar = encode(*rstars[i], enc_vocab, false);
      } else {
        t.rstar = {reserved::kUnk};
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

GeneratorBuild build_generator(std::span<const QueryReplyPair> train_pairs,
                               std::span<const QueryReplyPair> val_pairs, const GeneratorRecipe& recipe,
                               const KnowledgeBase* kb) {
  if (train_pairs.empty() || val_pairs.empty()) throw Error("build_generator: empty training or validation set");
  const bool biseq = recipe.arch == gen::Architecture::kBiSeq2Seq;
  if (biseq && !kb) throw Error("build_generator: biseq2seq needs the retrieval artifacts to materialize r*");

  gen::Generator g;
  g.seed = recipe.train.seed;
  g.enc_vocab = build_vocabulary(train_pairs, VocabSide::kBoth, recipe.vocab_size, recipe.min_count);
  g.dec_vocab = build_vocabulary(train_pairs, VocabSide::kReply, recipe.vocab_size, recipe.min_count);

  std::vector<std::optional<TokenSeq>> train_r, val_r;
  if (biseq) {
    train_r = retrieve_training_rstars(train_pairs, *kb, recipe.k);
    val_r = retrieve_training_rstars(val_pairs, *kb, recipe.k);
  }
  const auto train_set = make_triples(train_pairs, g.enc_vocab, g.dec_vocab, train_r);
  const auto val_set = make_triples(val_pairs, g.enc_vocab, g.dec_vocab, val_r);

  const gen::ModelDims dims{recipe.embed_dim, recipe.hidden_dim, g.enc_vocab.size(), g.dec_vocab.size()};
  auto init = gen::GeneratorParams::init_uniform(recipe.arch, dims, recipe.train.seed);
  auto result = gen::train(std::move(init), train_set, val_set, recipe.train);
  g.params = std::move(result.params);
  gen::quantize_to_float32(g.params);
  return {std::move(g), std::move(result.history)};
}

namespace {

struct Topic {
  std::array<std::string_view, 6> words;
};

// Content words grouped by topic; the function words below are shared.
constexpr std::array<Topic, 12> kTopics = {{
    {{"pizza", "cheese", "pasta", "tomato", "oven", "dinner"}},
    {{"football", "goal", "match", "team", "coach", "stadium"}},
    {{"movie", "actor", "cinema", "ticket", "director", "scene"}},
    {{"guitar", "song", "concert", "band", "drum", "melody"}},
    {{"rain", "umbrella", "cloud", "storm", "weather", "thunder"}},
    {{"cat", "kitten", "dog", "puppy", "pet", "leash"}},
    {{"train", "station", "ticket", "journey", "platform", "delay"}},
    {{"book", "novel", "author", "chapter", "library", "poem"}},
    {{"coffee", "tea", "cup", "sugar", "milk", "breakfast"}},
    {{"beach", "sea", "sand", "wave", "summer", "island"}},
    {{"exam", "teacher", "school", "homework", "class", "grade"}},
    {{"phone", "screen", "battery", "app", "camera", "charger"}},
}};

constexpr std::array<std::string_view, 8> kQueryTemplates = {
    "do you like the {a} and the {b}",
    "what is your favorite {a} for {b}",
    "i think the {a} is better than the {b}",
    "have you ever seen a {a} with a {b}",
    "tell me about the {a} in the {b}",
    "is the {a} good for the {b} today",
    "where can i find a {a} and a {b}",
    "why do people love the {a} so much",
};

constexpr std::array<std::string_view, 8> kReplyTemplates = {
    "yes the {a} is my favorite {b}",
    "i really like the {a} but not the {b}",
    "the {a} was great with the {b} yesterday",
    "no i have never seen a {a} like that",
    "you should try the {a} with some {b}",
    "it is all about the {a} and the {b}",
    "my friend has a {a} and a {b}",
    "i think the {b} is more fun than the {a}",
};

std::string fill(std::string_view tmpl, std::string_view a, std::string_view b) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.substr(i, 3) == "{a}") {
      out += a;
      i += 3;
    } else if (tmpl.substr(i, 3) == "{b}") {
      out += b;
      i += 3;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

}  // namespace

std::vector<QueryReplyPair> synth_corpus(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t bound) { return static_cast<std::size_t>(rng() % bound); };
  std::vector<QueryReplyPair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& topic = kTopics[pick(kTopics.size())];
    const std::size_t a = pick(topic.words.size());
    const std::size_t b = (a + 1 + pick(topic.words.size() - 1)) % topic.words.size();
    const std::size_t c = pick(topic.words.size());
    const auto q = fill(kQueryTemplates[pick(kQueryTemplates.size())], topic.words[a], topic.words[b]);
    // The reply reuses one query word and adds another from the topic.
    const auto r = fill(kReplyTemplates[pick(kReplyTemplates.size())], topic.words[a], topic.words[c]);
    pairs.push_back({static_cast<PairId>(i), tokenize(q), tokenize(r)});
  }
  return pairs;
}

}  // namespace duet
