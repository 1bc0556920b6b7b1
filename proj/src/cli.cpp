// SPDX-License-Identifier: Apache-2.0
#include "duet/cli.hpp"

#include <unistd.h>

#include <fstream>
#include <iostream>
#include <list>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "duet/config.hpp"
#include "duet/error.hpp"
#include "duet/eval.hpp"
#include "duet/pipeline.hpp"
#include "duet/service.hpp"

namespace duet {
namespace {

namespace fs = std::filesystem;

struct Io {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

// A leaf subcommand. Options registered through opt()/flag() are config
// overrides: they are applied on top of the loaded config only when given.
struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::vector<std::function<void(AppConfig&)>> overrides;
  std::function<int(const AppConfig&, Io&)> run;

  template <class T, class Set>
  CLI::Option* opt(const std::string& name, Set set, const std::string& desc) {
    auto value = std::make_shared<T>();
    CLI::Option* o = app->add_option(name, *value, desc);
    overrides.push_back([o, value, set](AppConfig& c) {
      if (o->count() > 0) set(c, *value);
    });
    return o;
  }

  template <class Set>
  CLI::Option* flag(const std::string& name, Set set, const std::string& desc) {
    CLI::Option* o = app->add_flag(name, desc);
    overrides.push_back([o, set](AppConfig& c) {
      if (o->count() > 0) set(c);
    });
    return o;
  }

  AppConfig effective() const {
    AppConfig c = config_path.empty() ? AppConfig{} : load_config(config_path);
    if (seed_opt->count() > 0) c.seed = seed;
    for (const auto& o : overrides) o(c);
    c.matcher.train.seed = c.seed;
    c.matcher.embeddings.seed = c.seed;
    c.generator.train.seed = c.seed;
    return c;
  }
};

Command& add_command(std::list<Command>& commands, CLI::App& parent, const std::string& name,
                     const std::string& desc) {
  Command& cmd = commands.emplace_back();
  cmd.app = parent.add_subcommand(name, desc);
  cmd.app->add_option("--config", cmd.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd.seed_opt = cmd.app->add_option("--seed", cmd.seed, "seed for every stochastic step");
  return cmd;
}

void database_flag(Command& cmd, const std::string& name = "--database") {
  cmd.opt<std::string>(name, [](AppConfig& c, const std::string& v) { c.artifacts.database = v; },
                       "pair database (tsv or jsonl)");
}
void index_flag(Command& cmd, const std::string& name = "--index") {
  cmd.opt<std::string>(name, [](AppConfig& c, const std::string& v) { c.artifacts.index = v; }, "index file");
}
void matcher_flag(Command& cmd, const std::string& name = "--matcher") {
  cmd.opt<std::string>(name, [](AppConfig& c, const std::string& v) { c.artifacts.matcher = v; }, "matcher model");
}
void generator_flag(Command& cmd, const std::string& name = "--generator") {
  cmd.opt<std::string>(name, [](AppConfig& c, const std::string& v) { c.artifacts.generator = v; },
                       "generator checkpoint directory");
}

void lowercase_flag(Command& cmd) {
  cmd.flag("--keep-case", [](AppConfig& c) { c.ensemble.tokenizer.lowercase = false; }, "do not lowercase tokens");
}

void ensemble_flags(Command& cmd) {
  database_flag(cmd);
  index_flag(cmd);
  matcher_flag(cmd);
  generator_flag(cmd);
  lowercase_flag(cmd);
  cmd.opt<std::string>("--mode", [](AppConfig& c, const std::string& v) { c.ensemble.mode = parse_mode(v); },
                       "ensemble | retrieval_only | generation_only")
      ->check(CLI::IsMember({"ensemble", "retrieval_only", "generation_only"}));
  cmd.opt<std::size_t>("--k", [](AppConfig& c, std::size_t v) { c.ensemble.k = v; }, "coarse retrieval cap");
  cmd.opt<std::size_t>("--max-len", [](AppConfig& c, std::size_t v) { c.ensemble.decode.max_len = v; },
                       "decoder length limit");
  cmd.opt<std::size_t>("--beam-width", [](AppConfig& c, std::size_t v) { c.ensemble.decode.beam_width = v; },
                       "1 = greedy");
  cmd.opt<std::string>("--apology", [](AppConfig& c, const std::string& v) { c.ensemble.apology = v; },
                       "reply used when no candidate exists");
}

void require(const fs::path& path, const std::string& what) {
  if (path.empty()) throw Error(what + " is not set (flag or config)");
}

std::vector<QueryReplyPair> load_corpus(const fs::path& path, const AppConfig& c, Io& io) {
  require(path, "corpus");
  auto loaded = load_pairs(path, corpus_format_for(path), LoadOptions{c.ensemble.tokenizer, 1});
  if (loaded.dropped > 0) io.err << "note: dropped " << loaded.dropped << " records with empty side(s) from " << path.string() << "\n";
  if (loaded.pairs.empty()) throw Error("corpus " + path.string() + " has no usable pairs");
  return std::move(loaded.pairs);
}

void print_response(const ChatResponse& r, bool verbose, std::ostream& out) {
  out << detokenize(r.reply) << "\n";
  if (!verbose) return;
  for (const auto& c : r.candidates) {
    out << "  " << (c.provenance == r.provenance ? "* " : "  ") << to_string(c.provenance);
    if (c.score) out << " " << *c.score;
    if (c.source_pair_id) out << " #" << *c.source_pair_id;
    out << "  " << detokenize(c.reply) << "\n";
  }
}

struct Locals {
  std::string corpus, out, out_dir, side = "both", train, validation, test, json_out, table_out;
  std::string systems = "retrieval,seq2seq,biseq2seq,rerank";
  std::string seq2seq, biseq2seq, unigram_corpus;
  std::size_t pairs = 200;
  double validation_ratio = 0.1, test_ratio = 0.1;
  bool verbose = false;
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

// --- subcommands ---------------------------------------------------------

void setup_corpus(std::list<Command>& cmds, CLI::App& app, Locals& l) {
  auto* corpus = app.add_subcommand("corpus", "corpus utilities");
  corpus->require_subcommand(1);

  auto& vocab = add_command(cmds, *corpus, "build-vocab", "build a frequency-ranked vocabulary");
  vocab.app->add_option("--corpus", l.corpus, "input corpus")->required();
  vocab.app->add_option("--out", l.out, "vocabulary JSON output")->required();
  vocab.app->add_option("--side", l.side, "query | reply | both")
      ->check(CLI::IsMember({"query", "reply", "both"}));
  vocab.opt<std::size_t>("--max-size", [](AppConfig& c, std::size_t v) { c.generator.vocab_size = v; },
                         "size limit including the 4 reserved ids");
  vocab.opt<std::size_t>("--min-count", [](AppConfig& c, std::size_t v) { c.generator.min_count = v; },
                         "drop rarer tokens");
  lowercase_flag(vocab);
  vocab.run = [&l](const AppConfig& c, Io& io) {
    const auto pairs = load_corpus(l.corpus, c, io);
    const VocabSide side = l.side == "query" ? VocabSide::kQuery : l.side == "reply" ? VocabSide::kReply : VocabSide::kBoth;
    const auto v = build_vocabulary(pairs, side, c.generator.vocab_size, c.generator.min_count);
    v.save(l.out);
    io.out << "vocabulary: " << v.size() << " entries -> " << l.out << "\n";
    return kExitOk;
  };

  auto& split = add_command(cmds, *corpus, "split", "seeded train/validation/test split");
  split.app->add_option("--corpus", l.corpus, "input corpus")->required();
  split.app->add_option("--out-dir", l.out_dir, "writes train.tsv, validation.tsv, test.tsv")->required();
  split.app->add_option("--validation-ratio", l.validation_ratio, "default 0.1")->check(CLI::Range(0.0, 1.0));
  split.app->add_option("--test-ratio", l.test_ratio, "default 0.1")->check(CLI::Range(0.0, 1.0));
  lowercase_flag(split);
  split.run = [&l](const AppConfig& c, Io& io) {
    const auto pairs = load_corpus(l.corpus, c, io);
    const SplitRatios ratios{1.0 - l.validation_ratio - l.test_ratio, l.validation_ratio, l.test_ratio};
    const auto s = split_dataset(pairs, ratios, c.seed);
    fs::create_directories(l.out_dir);
    const fs::path dir(l.out_dir);
    write_pairs_tsv(dir / "train.tsv", select_pairs(pairs, s.train));
    write_pairs_tsv(dir / "validation.tsv", select_pairs(pairs, s.validation));
    write_pairs_tsv(dir / "test.tsv", select_pairs(pairs, s.test));
    io.out << "split: train " << s.train.size() << ", validation " << s.validation.size() << ", test "
           << s.test.size() << " -> " << dir.string() << "\n";
    return kExitOk;
  };

  auto& synth = add_command(cmds, *corpus, "synth", "write a synthetic topical corpus");
  synth.app->add_option("--pairs", l.pairs, "number of pairs")->check(CLI::PositiveNumber);
  synth.app->add_option("--out", l.out, "output TSV")->required();
  synth.run = [&l](const AppConfig& c, Io& io) {
    const auto pairs = synth_corpus(l.pairs, c.seed);
    if (fs::path(l.out).has_parent_path()) fs::create_directories(fs::path(l.out).parent_path());
    write_pairs_tsv(l.out, pairs);
    io.out << "synth: " << pairs.size() << " pairs -> " << l.out << "\n";
    return kExitOk;
  };
}

void setup_index(std::list<Command>& cmds, CLI::App& app) {
  auto* index = app.add_subcommand("index", "inverted index");
  index->require_subcommand(1);
  auto& build = add_command(cmds, *index, "build", "index the query side of a pair database");
  database_flag(build, "--corpus");
  index_flag(build, "--out");
  lowercase_flag(build);
  build.opt<std::string>("--stopwords-file", [](AppConfig& c, const std::string& v) { c.index.stopwords_file = v; },
                         "one stopword per line");
  build.opt<std::size_t>("--stopword-count", [](AppConfig& c, std::size_t v) { c.index.stopword_count = v; },
                         "top-df query terms used as stopwords (default 25)");
  build.run = [](const AppConfig& c, Io& io) {
    const auto pairs = load_corpus(c.artifacts.database, c, io);
    require(c.artifacts.index, "index output");
    const StopwordSet stop = c.index.stopwords_file.empty() ? top_df_stopwords(pairs, c.index.stopword_count)
                                                            : load_stopwords(c.index.stopwords_file);
    const auto idx = build_index(pairs, stop);
    if (c.artifacts.index.has_parent_path()) fs::create_directories(c.artifacts.index.parent_path());
    idx.save(c.artifacts.index);
    io.out << "index: " << idx.n_docs() << " docs, " << idx.n_terms() << " terms, " << idx.stopwords().size()
           << " stopwords -> " << c.artifacts.index.string() << "\n";
    return kExitOk;
  };
}

void setup_matcher(std::list<Command>& cmds, CLI::App& app) {
  auto* matcher = app.add_subcommand("matcher", "learning-to-match scorer");
  matcher->require_subcommand(1);
  auto& train = add_command(cmds, *matcher, "train", "train the logistic matcher with sampled negatives");
  database_flag(train, "--corpus");
  index_flag(train);
  matcher_flag(train, "--out");
  generator_flag(train);
  lowercase_flag(train);
  train.opt<std::size_t>("--epochs", [](AppConfig& c, std::size_t v) { c.matcher.train.epochs = v; }, "default 500");
  train.opt<double>("--lr", [](AppConfig& c, double v) { c.matcher.train.learning_rate = v; }, "default 0.5");
  train.opt<double>("--l2", [](AppConfig& c, double v) { c.matcher.train.l2 = v; }, "default 1e-4");
  train.opt<std::size_t>("--negatives", [](AppConfig& c, std::size_t v) { c.matcher.negatives = v; },
                         "negatives per positive");
  train.opt<std::string>("--embeddings",
                         [](AppConfig& c, const std::string& v) { c.matcher.embeddings.kind = parse_embedding_kind(v); },
                         "none | random | generator")
      ->check(CLI::IsMember({"none", "random", "generator"}));
  train.opt<std::size_t>("--embedding-dim", [](AppConfig& c, std::size_t v) { c.matcher.embeddings.dim = v; },
                         "random embedding width");
  train.run = [](const AppConfig& c, Io& io) {
    const auto pairs = load_corpus(c.artifacts.database, c, io);
    require(c.artifacts.index, "index");
    require(c.artifacts.matcher, "matcher output");
    const auto idx = InvertedIndex::load(c.artifacts.index);
    if (idx.n_docs() != pairs.size()) throw Error("index does not match the corpus (document count differs)");

    MatcherRecipe recipe = c.matcher;
    std::optional<gen::Generator> g;
    if (recipe.embeddings.kind == EmbeddingSource::Kind::kGenerator) {
      require(c.artifacts.generator, "generator (for generator embeddings)");
      g = gen::load_checkpoint(c.artifacts.generator);
      recipe.embeddings.generator = c.artifacts.generator.string();
      recipe.embeddings.dim = g->params.dims().embed_dim;
      recipe.embeddings.seed = 0;
    } else if (recipe.embeddings.kind == EmbeddingSource::Kind::kNone) {
      recipe.embeddings = EmbeddingSource{};
    }
    const auto table = make_embeddings(recipe.embeddings, g ? &*g : nullptr);
    const auto model = build_matcher(pairs, idx, table, recipe);
    if (c.artifacts.matcher.has_parent_path()) fs::create_directories(c.artifacts.matcher.parent_path());
    model.save(c.artifacts.matcher);
    io.out << "matcher: " << model.metadata.n_examples << " examples, final loss " << model.metadata.final_loss
           << " -> " << c.artifacts.matcher.string() << "\n";
    return kExitOk;
  };
}

void setup_gen(std::list<Command>& cmds, CLI::App& app, Locals& l) {
  auto* gen_cmd = app.add_subcommand("gen", "GRU reply generator");
  gen_cmd->require_subcommand(1);
  auto& train = add_command(cmds, *gen_cmd, "train", "train a seq2seq or biseq2seq generator");
  train.app->add_option("--train", l.train, "training pairs")->required();
  train.app->add_option("--validation", l.validation, "validation pairs (early stopping)")->required();
  generator_flag(train, "--out");
  database_flag(train);
  index_flag(train);
  matcher_flag(train);
  lowercase_flag(train);
  train.opt<std::string>("--arch", [](AppConfig& c, const std::string& v) { c.generator.arch = gen::parse_architecture(v); },
                         "seq2seq | biseq2seq")
      ->check(CLI::IsMember({"seq2seq", "biseq2seq"}));
  train.opt<std::size_t>("--embed-dim", [](AppConfig& c, std::size_t v) { c.generator.embed_dim = v; }, "");
  train.opt<std::size_t>("--hidden-dim", [](AppConfig& c, std::size_t v) { c.generator.hidden_dim = v; }, "");
  train.opt<std::size_t>("--vocab-size", [](AppConfig& c, std::size_t v) { c.generator.vocab_size = v; },
                         "per side, reserved ids included");
  train.opt<std::size_t>("--min-count", [](AppConfig& c, std::size_t v) { c.generator.min_count = v; }, "");
  train.opt<std::size_t>("--batch-size", [](AppConfig& c, std::size_t v) { c.generator.train.batch_size = v; }, "");
  train.opt<std::size_t>("--max-epochs", [](AppConfig& c, std::size_t v) { c.generator.train.max_epochs = v; }, "");
  train.opt<std::size_t>("--patience", [](AppConfig& c, std::size_t v) { c.generator.train.patience = v; },
                         "non-improving epochs tolerated");
  train.opt<std::size_t>("--k", [](AppConfig& c, std::size_t v) { c.generator.k = v; }, "coarse cap for r* retrieval");
  train.run = [&l](const AppConfig& c, Io& io) {
    require(c.artifacts.generator, "generator output");
    const auto train_pairs = load_corpus(l.train, c, io);
    const auto val_pairs = load_corpus(l.validation, c, io);
    std::shared_ptr<const KnowledgeBase> kb;
    if (c.generator.arch == gen::Architecture::kBiSeq2Seq) {
      require(c.artifacts.database, "database (for r* retrieval)");
      require(c.artifacts.index, "index (for r* retrieval)");
      require(c.artifacts.matcher, "matcher (for r* retrieval)");
      ArtifactPaths paths = c.artifacts;
      paths.generator.clear();  // the output, not an input
      kb = load_knowledge_base(paths, c.ensemble.tokenizer);
    }
    GeneratorRecipe recipe = c.generator;
    recipe.train.on_epoch = [&io](const gen::EpochStats& s) {
      io.err << "epoch " << s.epoch << ": train loss " << s.train_loss << ", val ppl " << s.val_perplexity
             << (s.improved ? " *" : "") << "\n";
    };
    const auto built = build_generator(train_pairs, val_pairs, recipe, kb.get());
    gen::save_checkpoint(c.artifacts.generator, built.generator);
    const auto& h = built.history;
    io.out << "generator: " << gen::to_string(recipe.arch) << ", " << h.epochs.size() << " epochs"
           << (h.early_stopped ? " (early stop)" : "") << ", val ppl " << h.initial_val_perplexity << " -> "
           << h.best_val_perplexity << " -> " << c.artifacts.generator.string() << "\n";
    return kExitOk;
  };
}

std::shared_ptr<const gen::Generator> pick_generator(const std::string& explicit_path, const fs::path& configured,
                                                     gen::Architecture arch) {
  if (!explicit_path.empty()) {
    auto g = std::make_shared<const gen::Generator>(gen::load_checkpoint(explicit_path));
    if (g->params.arch != arch) {
      throw Error(explicit_path + " is a " + std::string(gen::to_string(g->params.arch)) + " checkpoint, expected " +
                  std::string(gen::to_string(arch)));
    }
    return g;
  }
  if (!configured.empty() && fs::exists(configured)) {
    auto g = std::make_shared<const gen::Generator>(gen::load_checkpoint(configured));
    if (g->params.arch == arch) return g;
  }
  return nullptr;
}

void setup_eval(std::list<Command>& cmds, CLI::App& app, Locals& l) {
  auto* eval = app.add_subcommand("eval", "automatic evaluation");
  eval->require_subcommand(1);
  auto& run = add_command(cmds, *eval, "run", "BLEU / entropy / length report over several systems");
  run.app->add_option("--test", l.test, "test pairs")->required();
  run.app->add_option("--systems", l.systems, "comma list of echo, retrieval, seq2seq, biseq2seq, rerank");
  run.app->add_option("--seq2seq", l.seq2seq, "seq2seq checkpoint");
  run.app->add_option("--biseq2seq", l.biseq2seq, "biseq2seq checkpoint");
  run.app->add_option("--unigram-corpus", l.unigram_corpus, "replies for the entropy unigram (default: database)");
  run.app->add_option("--json", l.json_out, "write the JSON report here");
  run.app->add_option("--table", l.table_out, "write the text table here");
  ensemble_flags(run);
  run.opt<double>("--alpha", [](AppConfig& c, double v) { c.eval.alpha = v; }, "unigram smoothing");
  run.opt<std::string>("--entropy",
                       [](AppConfig& c, const std::string& v) { c.eval.denominator = parse_entropy_denominator(v); },
                       "per_token | per_reply")
      ->check(CLI::IsMember({"per_token", "per_reply"}));
  run.run = [&l](const AppConfig& c, Io& io) {
    const auto test_pairs = load_corpus(l.test, c, io);
    std::vector<EvalItem> items;
    for (const auto& p : test_pairs) items.push_back({p.query, p.reply});

    std::vector<std::string> names;
    {
      std::stringstream ss(l.systems);
      for (std::string name; std::getline(ss, name, ',');) {
        if (!name.empty()) names.push_back(name);
      }
    }
    if (names.empty()) throw Error("no systems requested");
    bool needs_kb = false, needs_seq = false, needs_biseq = false;
    for (const auto& n : names) {
      if (n == "retrieval") needs_kb = true;
      else if (n == "seq2seq") needs_kb = needs_seq = true;
      else if (n == "biseq2seq" || n == "rerank") needs_kb = needs_biseq = true;
      else if (n != "echo") throw Error("unknown system '" + n + "'");
    }

    auto seq = needs_seq ? pick_generator(l.seq2seq, c.artifacts.generator, gen::Architecture::kSeq2Seq) : nullptr;
    auto biseq = needs_biseq ? pick_generator(l.biseq2seq, c.artifacts.generator, gen::Architecture::kBiSeq2Seq) : nullptr;
    if (needs_seq && !seq) throw Error("seq2seq system requested but no seq2seq checkpoint given");
    if (needs_biseq && !biseq) throw Error("biseq2seq/rerank requested but no biseq2seq checkpoint given");

    std::shared_ptr<const KnowledgeBase> kb;
    if (needs_kb) kb = load_knowledge_base(c.artifacts, c.ensemble.tokenizer, biseq ? biseq.get() : seq.get());

    std::vector<NamedSystem> systems;
    auto wrap = [](std::shared_ptr<const Ensemble> e) {
      return [e](const EvalItem& item) {
        const auto r = e->respond_tokens(item.query);
        return SystemOutput{r.reply, r.provenance};
      };
    };
    auto make = [&](std::shared_ptr<const gen::Generator> g, Mode mode) {
      EnsembleOptions o = c.ensemble;
      o.mode = mode;
      return std::make_shared<const Ensemble>(kb, std::move(g), o);
    };
    for (const auto& n : names) {
      if (n == "echo") {
        systems.push_back({"groundtruth", [](const EvalItem& item) { return SystemOutput{item.reference, std::nullopt}; }, false});
      } else if (n == "retrieval") {
        systems.push_back({"Retrieval", wrap(make(nullptr, Mode::kRetrievalOnly)), false});
      } else if (n == "seq2seq") {
        systems.push_back({"seq2seq", wrap(make(seq, Mode::kGenerationOnly)), false});
      } else if (n == "biseq2seq") {
        systems.push_back({"biseq2seq", wrap(make(biseq, Mode::kGenerationOnly)), false});
      } else {
        systems.push_back({"Rerank(Retrieval, biseq2seq)", wrap(make(biseq, Mode::kEnsemble)), true});
      }
    }

    // Unigram over the decoder vocabulary, estimated on training replies.
    const fs::path unigram_path = l.unigram_corpus.empty() ? c.artifacts.database : fs::path(l.unigram_corpus);
    const auto unigram_pairs = unigram_path.empty() ? test_pairs : load_corpus(unigram_path, c, io);
    const gen::Generator* g = biseq ? biseq.get() : seq.get();
    const Vocabulary vocab = g ? g->dec_vocab : build_vocabulary(unigram_pairs, VocabSide::kReply, c.generator.vocab_size);
    std::vector<TokenSeq> replies;
    for (const auto& p : unigram_pairs) replies.push_back(p.reply);
    const auto unigram = build_unigram(replies, vocab, c.eval.alpha);

    const auto report = evaluate_systems(items, systems, unigram, c.eval.denominator);
    const auto table = report.to_table();
    io.out << table;
    if (!l.json_out.empty()) write_file(l.json_out, report.to_json());
    if (!l.table_out.empty()) write_file(l.table_out, table);
    return kExitOk;
  };
}

void setup_chat(std::list<Command>& cmds, CLI::App& app, Locals& l) {
  auto& chat = add_command(cmds, app, "chat", "terminal chat loop (one query per line)");
  ensemble_flags(chat);
  chat.app->add_flag("--verbose,-v", l.verbose, "show both candidates and scores");
  chat.run = [&l](const AppConfig& c, Io& io) {
    const auto ensemble = load_ensemble(c.artifacts, c.ensemble);
    const bool interactive = &io.in == &std::cin && isatty(STDIN_FILENO);
    for (std::string line;;) {
      if (interactive) io.err << "> " << std::flush;
      if (!std::getline(io.in, line)) break;
      const auto q = tokenize(line, c.ensemble.tokenizer);
      if (q.empty()) continue;
      print_response(ensemble.respond_tokens(q), l.verbose, io.out);
      io.out << std::flush;
    }
    return kExitOk;
  };
}

void setup_serve(std::list<Command>& cmds, CLI::App& app) {
  auto& serve = add_command(cmds, app, "serve", "HTTP service: POST /chat, GET /health, GET /config");
  ensemble_flags(serve);
  serve.opt<std::string>("--host", [](AppConfig& c, const std::string& v) { c.service.host = v; }, "default 127.0.0.1");
  serve.opt<int>("--port", [](AppConfig& c, int v) { c.service.port = v; }, "default 8080; 0 picks a free port")
      ->check(CLI::Range(0, 65535));
  serve.opt<std::size_t>("--threads", [](AppConfig& c, std::size_t v) { c.service.threads = v; }, "worker threads");
  serve.flag("--no-cors", [](AppConfig& c) { c.service.cors = false; }, "omit cross-origin headers");
  serve.run = [](const AppConfig& c, Io& io) {
    auto ensemble = std::make_shared<const Ensemble>(load_ensemble(c.artifacts, c.ensemble));
    ChatService service(ensemble, c);
    const bool ok = service.run(c.service.host, c.service.port, [&](int port) {
      io.err << "listening on http://" << c.service.host << ":" << port << "\n" << std::flush;
    });
    if (!ok) {
      io.err << "error: cannot listen on " << c.service.host << ":" << c.service.port << "\n";
      return kExitRuntime;
    }
    return kExitOk;
  };
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"duet: retrieval + generation chatbot ensemble", "duet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "duet 0.1.0");

  std::list<Command> commands;
  Locals locals;
  setup_corpus(commands, app, locals);
  setup_index(commands, app);
  setup_matcher(commands, app);
  setup_gen(commands, app, locals);
  setup_eval(commands, app, locals);
  setup_chat(commands, app, locals);
  setup_serve(commands, app);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    // Usage of the deepest subcommand that was reached.
    const CLI::App* deepest = &app;
    for (auto subs = app.get_subcommands(); !subs.empty(); subs = subs.front()->get_subcommands()) {
      deepest = subs.front();
    }
    err << deepest->help();
    return kExitUsage;
  }

  for (const auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    Io io{in, out, err};
    try {
      return cmd.run(cmd.effective(), io);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitRuntime;
    }
  }
  err << app.help();
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return cli_main(args, std::cin, std::cout, std::cerr);
}

}  // namespace duet
