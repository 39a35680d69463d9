#pragma once

// The `zsp` command-line tool.
//
// Every subcommand that writes to a file (--out) also writes
// <out>.manifest.json recording the effective arguments, resolved options,
// seed and input/output checksums; `zsp replay <manifest>` re-runs it into a
// scratch path and checks the output bytes match.
//
// --config FILE reads "key = value" lines and supplies --key=value for every
// key not already given on the command line (underscores map to dashes).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "zsp/experiment.hpp"
#include "zsp/gradcheck.hpp"
#include "zsp/training.hpp"

namespace zsp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Invalid flag combinations detected after parsing (exit code 2).
struct UsageError : Error { using Error::Error; };

namespace detail {

inline bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

/// Removes --config and splices in its entries for flags that are absent.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file argument");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      kept.push_back(args[i]);
    }
  }
  if (!path) return kept;
  for (const auto& [key, value] : load_key_values(*path)) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (!has_flag(kept, flag)) kept.push_back(flag + "=" + value);
  }
  return kept;
}

class Output {
 public:
  explicit Output(const std::string& path) : path_(path) {
    if (path != "-") {
      file_.open(path, std::ios::binary);
      if (!file_) throw IoError("cannot write " + path);
    }
  }
  std::ostream& stream() { return path_ == "-" ? std::cout : file_; }
  void close() {
    if (path_ != "-") {
      file_.close();
      if (!file_) throw IoError("write failed for " + path_);
    } else {
      std::cout.flush();
    }
  }

 private:
  std::string path_;
  std::ofstream file_;
};

class Input {
 public:
  explicit Input(const std::string& path) : path_(path) {
    if (path != "-") {
      file_.open(path, std::ios::binary);
      if (!file_) throw IoError("cannot open " + path);
    }
  }
  std::istream& stream() { return path_ == "-" ? std::cin : file_; }
  bool next_line(std::string& line) {
    while (std::getline(stream(), line)) {
      ++lineno_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!valid_utf8(line)) throw ParseError(path_ + ":" + std::to_string(lineno_) + ": invalid UTF-8");
      return true;
    }
    return false;
  }

 private:
  std::string path_;
  std::ifstream file_;
  std::size_t lineno_ = 0;
};

inline std::vector<double> parse_real_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& part : split(text, ','))
    if (auto t = trim(part); !t.empty()) out.push_back(parse_real(key, t));
  if (out.empty()) throw UsageError("--" + key + ": empty list");
  return out;
}

/// Interleaves several example streams one item at a time.
template <typename T>
class InterleavedStream : public ExampleStream<T> {
 public:
  explicit InterleavedStream(std::vector<std::unique_ptr<ExampleStream<T>>> parts) : parts_(std::move(parts)) {
    done_.assign(parts_.size(), false);
  }
  bool next(T& out) override {
    for (std::size_t tries = 0; tries < parts_.size(); ++tries) {
      const std::size_t i = cursor_++ % parts_.size();
      if (done_[i]) continue;
      if (parts_[i]->next(out)) return true;
      done_[i] = true;
    }
    return false;
  }
  void rewind(std::uint64_t epoch) override {
    for (auto& p : parts_) p->rewind(epoch);
    done_.assign(parts_.size(), false);
    cursor_ = 0;
  }

 private:
  std::vector<std::unique_ptr<ExampleStream<T>>> parts_;
  std::vector<bool> done_;
  std::size_t cursor_ = 0;
};

}  // namespace detail

struct ModelFlags {
  std::size_t layers = 4, d_model = 128, heads = 4, d_ff = 512, d_lang = 16, max_positions = 64;
  bool lang_tags = true;

  void add(CLI::App* app) {
    app->add_option("--layers", layers, "Transformer layers");
    app->add_option("--d-model", d_model, "Hidden width");
    app->add_option("--heads", heads, "Attention heads");
    app->add_option("--d-ff", d_ff, "Feed-forward width");
    app->add_option("--d-lang", d_lang, "Output language-embedding width (0 disables)");
    app->add_option("--max-positions", max_positions, "Longest sequence the model accepts");
    app->add_flag("--lang-tags,!--no-lang-tags", lang_tags, "Feed language tags as input tokens");
  }

  ModelConfig config(std::size_t vocab_size, std::size_t n_languages) const {
    ModelConfig c;
    c.n_layers = layers;
    c.d_model = d_model;
    c.n_heads = heads;
    c.d_ff = d_ff;
    c.d_lang = d_lang;
    c.max_len = max_positions;
    c.vocab_size = vocab_size;
    c.n_languages = n_languages;
    c.input_lang_tags = lang_tags;
    return c;
  }
};

struct TrainFlags {
  std::string train_config, heldout, init, vocab;
  std::size_t steps = 1000, batch_size = 16, checkpoint_every = 0, eval_every = 0;
  double lr = 1e-4, weight_decay = 0.01, warmup = 0.05;
  bool noise = false, noise_insert = false;
  double noise_rate = 0.01;
  CLI::App* app = nullptr;

  void add(CLI::App* a, bool with_noise) {
    app = a;
    a->add_option("--train-config", train_config, "TrainConfig key = value file (flags override it)");
    a->add_option("--init", init, "Start from this checkpoint instead of a fresh model");
    a->add_option("--vocab", vocab, "Vocabulary file (taken from --init when omitted)");
    a->add_option("--steps", steps, "Optimizer steps");
    a->add_option("--batch-size", batch_size, "Sequences per batch");
    a->add_option("--lr", lr, "Peak learning rate");
    a->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    a->add_option("--warmup", warmup, "Fraction of steps with linear warmup");
    a->add_option("--checkpoint-every", checkpoint_every, "Also checkpoint every N steps");
    a->add_option("--eval-every", eval_every, "Held-out evaluation every N steps");
    a->add_option("--heldout", heldout, "Held-out corpus for evaluation");
    if (with_noise) {
      a->add_flag("--noise", noise, "Corrupt sources (deletion + reordering)");
      a->add_option("--noise-rate", noise_rate, "Per-token corruption rate");
      a->add_flag("--noise-insert", noise_insert, "Also insert random tokens");
    }
  }

  bool given(const std::string& flag) const { return app->get_option(flag)->count() > 0; }

  TrainConfig config(Phase phase, std::uint64_t seed, const std::string& out) const {
    TrainConfig c = train_config.empty() ? TrainConfig{} : TrainConfig::load(train_config);
    c.phase = phase;
    if (train_config.empty() || given("--steps")) c.steps = steps;
    if (train_config.empty() || given("--batch-size")) c.batch_size = batch_size;
    if (train_config.empty() || given("--lr")) c.adam.learning_rate = lr;
    if (train_config.empty() || given("--weight-decay")) c.adam.weight_decay = weight_decay;
    if (train_config.empty() || given("--warmup")) c.warmup_fraction = warmup;
    if (train_config.empty() || given("--checkpoint-every")) c.checkpoint_every = checkpoint_every;
    if (train_config.empty() || given("--eval-every")) c.eval_every = eval_every;
    if (train_config.empty() || app->get_option("--seed")->count() > 0) c.seed = seed;
    if (phase == Phase::finetune && (noise || noise_insert)) {
      if (!c.noise) c.noise = NoiseConfig{};
      c.noise->enable_insert = c.noise->enable_insert || noise_insert;
      c.noise->seed = c.seed;
      if (given("--noise-rate")) c.noise->rate = noise_rate;
    }
    c.checkpoint_path = out;
    c.validate();
    return c;
  }
};

struct SamplerFlags {
  std::size_t k = 3, n = 1, max_new_tokens = 64;
  double temperature = 1.0;
  bool greedy = false;

  void add(CLI::App* app, bool with_temperature = true) {
    app->add_option("--k", k, "Top-k truncation");
    if (with_temperature) app->add_option("--temperature", temperature, "Sampling temperature");
    app->add_flag("--greedy", greedy, "Greedy decoding instead of top-k sampling");
    app->add_option("--n", n, "Samples per input");
    app->add_option("--max-new-tokens", max_new_tokens, "Generation length cap");
  }

  SamplerConfig config(std::uint64_t seed) const {
    SamplerConfig c;
    c.strategy = greedy ? Strategy::greedy : Strategy::top_k;
    c.k = k;
    c.temperature = temperature;
    c.max_new_tokens = max_new_tokens;
    c.seed = seed;
    c.validate();
    return c;
  }
};

struct EvalFlags {
  std::string spec, embeddings, lm_corpus;
  std::size_t emb_dim = 32, lm_order = 4, lm_sentences = 4000, min_len = 3, max_len = 6;
  double lm_k = 0.01, emb_noise = 0.1;

  void add(CLI::App* app) {
    app->add_option("--spec", spec, "Synthetic language spec (enables the semantic oracle)");
    app->add_option("--embeddings", embeddings, "Word-embedding text file for relevance");
    app->add_option("--lm-corpus", lm_corpus, "Sentences (one per line) for the fluency LM");
    app->add_option("--emb-dim", emb_dim, "Dimension of spec-generated embeddings");
    app->add_option("--lm-order", lm_order, "Fluency LM order");
    app->add_option("--lm-k", lm_k, "Fluency LM add-k constant");
    app->add_option("--lm-sentences", lm_sentences, "Spec-generated fluency LM corpus size");
    app->add_option("--min-len", min_len, "Spec-generated sentence length (min)");
    app->add_option("--max-len", max_len, "Spec-generated sentence length (max)");
  }

  struct Resources {
    std::optional<SyntheticWorld> world;
    EmbeddingTable embeddings;
    NGramLM lm;
    EvalContext context() const { return {&embeddings, &lm, world ? &*world : nullptr}; }
  };

  Resources load(const std::string& lang, std::vector<std::string>& inputs) const {
    Resources r;
    if (!spec.empty()) {
      r.world.emplace(SyntheticLangSpec::load(spec));
      inputs.push_back(spec);
    }
    if (!embeddings.empty()) {
      r.embeddings = EmbeddingTable::load(embeddings);
      inputs.push_back(embeddings);
    } else if (r.world) {
      r.embeddings = EmbeddingTable::from_world(*r.world, emb_dim, emb_noise, derive_seed(r.world->spec().seed, 0xe3b));
    } else {
      throw UsageError("relevance needs --embeddings or --spec");
    }
    std::vector<Sentence> corpus;
    if (!lm_corpus.empty()) {
      for (auto& s : load_monolingual(lm_corpus, lang)) corpus.push_back(std::move(s.tokens));
      inputs.push_back(lm_corpus);
    } else if (r.world) {
      for (auto& s : gen_synthetic_monolingual(*r.world, lm_sentences, {min_len, max_len}, {lang},
                                               derive_seed(r.world->spec().seed, 0xf1)))
        corpus.push_back(std::move(s.tokens));
    } else {
      throw UsageError("fluency needs --lm-corpus or --spec");
    }
    r.lm = NGramLM(corpus, lm_order, lm_k);
    return r;
  }
};

struct RunState {
  std::string subcommand;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  std::string out = "-";
  std::vector<std::string> inputs, outputs;
};

inline void write_manifest(const RunState& st, const CLI::App& sub) {
  if (st.out == "-") return;
  nlohmann::ordered_json j;
  j["subcommand"] = st.subcommand;
  j["argv"] = st.argv;
  j["seed"] = st.seed;
  j["config"] = sub.config_to_str(true, false);
  j["inputs"] = nlohmann::ordered_json::object();
  for (const auto& p : st.inputs) j["inputs"][p] = file_checksum(p);
  j["outputs"] = nlohmann::ordered_json::object();
  for (const auto& p : st.outputs) j["outputs"][p] = file_checksum(p);
  std::ofstream out(st.out + ".manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + st.out + ".manifest.json");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + st.out + ".manifest.json");
}

inline int run(std::vector<std::string> args);

namespace detail {

inline std::string model_lang_check(const Vocabulary& v, const std::string& lang) {
  if (!v.has_language(lang)) throw UsageError("language '" + lang + "' is not in the model vocabulary");
  return lang;
}

inline LoadedCheckpoint load_model(const std::string& path) {
  auto ck = load_checkpoint_bundle(path);
  if (!ck.vocab) throw ContractError(path + ": checkpoint carries no vocabulary");
  return ck;
}

/// Re-executes a manifest with --out redirected and compares output bytes.
inline int replay(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + manifest_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }
  std::vector<std::string> args = j.at("argv").get<std::vector<std::string>>();
  std::string out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out" && i + 1 < args.size()) {
      out = args[i + 1];
      args[i + 1] = out + ".replay";
    } else if (args[i].rfind("--out=", 0) == 0) {
      out = args[i].substr(6);
      args[i] = "--out=" + out + ".replay";
    }
  }
  if (out.empty()) throw ContractError(manifest_path + ": run has no --out to replay");
  for (const auto& [path, sum] : j.at("inputs").items())
    if (file_checksum(path) != sum.get<std::string>())
      throw ContractError("replay: input " + path + " changed since the recorded run");
  const int code = run(args);
  if (code != kExitOk) return code;
  const std::string expected = j.at("outputs").at(out).get<std::string>();
  const std::string got = file_checksum(out + ".replay");
  std::filesystem::remove(out + ".replay");
  std::filesystem::remove(out + ".replay.manifest.json");
  if (got != expected) {
    std::cerr << "zsp: replay of " << out << " differs (" << got << " vs recorded " << expected << ")\n";
    return kExitFailure;
  }
  std::cout << "replay ok: " << out << " " << got << "\n";
  return kExitOk;
}

}  // namespace detail

/// Runs one command line (without the program name). Returns the exit code.
inline int run(std::vector<std::string> args) {
  CLI::App app{"Zero-shot paraphrase generation with a multilingual language model", "zsp"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  RunState st;
  std::uint64_t seed = 0;
  std::string out = "-";
  auto common = [&](CLI::App* sc, bool out_required) {
    sc->add_option("--seed", seed, "Master random seed");
    auto* o = sc->add_option("--out", out, "Output path ('-' for stdout)");
    if (out_required) o->required();
    sc->add_option("--config", "key = value file supplying defaults for absent flags");
  };

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic parallel or monolingual corpus");
  std::string spec_path, directions;
  std::size_t pairs = 2000, sentences = 2000, min_len = 3, max_len = 6;
  bool mono = false;
  std::string lang, pivot_lang, target_lang;
  gen->add_option("--spec", spec_path, "Synthetic language spec (defaults when omitted)");
  gen->add_option("--pairs", pairs, "Parallel pairs to generate");
  gen->add_option("--directions", directions, "Comma list of src-tgt directions (default: all cross pairs)");
  gen->add_option("--min-len", min_len, "Shortest sentence in concepts");
  gen->add_option("--max-len", max_len, "Longest sentence in concepts");
  gen->add_flag("--mono", mono, "Emit monolingual sentences in --lang instead");
  gen->add_option("--lang", lang, "Language for --mono");
  gen->add_option("--sentences", sentences, "Sentences for --mono");
  common(gen, true);

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "Build a vocabulary from corpora");
  std::vector<std::string> tsv_files, text_files, languages;
  std::size_t min_count = 1;
  bv->add_option("--tsv", tsv_files, "Parallel TSV corpora");
  bv->add_option("--text", text_files, "Monolingual text corpora");
  bv->add_option("--languages", languages, "Language codes in tag order")->delimiter(',')->required();
  bv->add_option("--min-count", min_count, "Minimum token frequency");
  common(bv, true);

  // pretrain / finetune
  ModelFlags pre_model, ft_model;
  TrainFlags pre_train, ft_train;
  std::vector<std::string> mono_files, mono_langs;
  std::string parallel_file;
  auto* pre = app.add_subcommand("pretrain", "Monolingual language-model pre-training");
  pre->add_option("--corpus", mono_files, "Monolingual text file (repeat with --lang)")->required();
  pre->add_option("--lang", mono_langs, "Language of each --corpus")->required();
  pre_model.add(pre);
  pre_train.add(pre, false);
  common(pre, true);
  auto* ft = app.add_subcommand("finetune", "Fine-tuning on parallel data");
  ft->add_option("--corpus", parallel_file, "Parallel TSV corpus")->required();
  ft_model.add(ft);
  ft_train.add(ft, true);
  common(ft, true);

  // paraphrase / translate / pivot
  SamplerFlags para_s, trans_s, piv_s;
  std::string model_path, input = "-";
  auto* para = app.add_subcommand("paraphrase", "One-step zero-shot paraphrasing of input lines");
  auto* trans = app.add_subcommand("translate", "Translate input lines");
  auto* piv = app.add_subcommand("pivot", "Round-trip pivot paraphrasing of input lines");
  for (auto* sc : {para, trans, piv}) {
    sc->add_option("--model", model_path, "Checkpoint")->required();
    sc->add_option("--lang", lang, "Input language")->required();
    sc->add_option("--input", input, "Input sentences ('-' for stdin)");
    common(sc, false);
  }
  trans->add_option("--target-lang", target_lang, "Output language")->required();
  piv->add_option("--pivot-lang", pivot_lang, "Pivot language")->required();
  para_s.add(para);
  trans_s.add(trans);
  piv_s.add(piv);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score generated outputs against their inputs");
  EvalFlags ev_flags;
  std::string outputs_file, heldout_file;
  std::size_t n_per_input = 1;
  ev->add_option("--inputs", input, "Input sentences, one per line")->required();
  ev->add_option("--outputs", outputs_file, "Generated sentences, --n lines per input")->required();
  ev->add_option("--n", n_per_input, "Outputs per input");
  ev->add_option("--lang", lang, "Language of inputs and outputs")->required();
  ev->add_option("--model", model_path, "Checkpoint for held-out NLL (with --heldout)");
  ev->add_option("--heldout", heldout_file, "Parallel TSV for held-out NLL");
  ev->add_option("--system", target_lang, "System name recorded in the report")->default_val("direct");
  ev_flags.add(ev);
  common(ev, false);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Temperature sweep of direct vs pivot paraphrasing");
  EvalFlags sw_flags;
  SamplerFlags sw_s;
  std::string baseline = "pivot", temps = "0.5,0.8,1.0,1.2,1.5";
  sw->add_option("--model", model_path, "Checkpoint")->required();
  sw->add_option("--input", input, "Input sentences ('-' for stdin)");
  sw->add_option("--lang", lang, "Input language")->required();
  sw->add_option("--pivot-lang", pivot_lang, "Pivot language for the baseline");
  sw->add_option("--baseline", baseline, "Baseline system: pivot or none")->check(CLI::IsMember({"pivot", "none"}));
  sw->add_option("--temps", temps, "Comma list of temperatures");
  sw_s.n = 3;
  sw_s.add(sw, false);
  sw_flags.add(sw);
  common(sw, false);

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of model gradients");
  ModelFlags gc_model;
  gc_model.layers = 2;
  gc_model.d_model = 16;
  gc_model.heads = 2;
  gc_model.d_ff = 32;
  gc_model.d_lang = 4;
  gc_model.max_positions = 8;
  std::size_t gc_coords = 200, gc_vocab = 13, gc_batch = 2, gc_len = 6;
  double gc_tol = 1e-4;
  gc_model.add(gc);
  gc->add_option("--coords", gc_coords, "Coordinates to sample");
  gc->add_option("--tolerance", gc_tol, "Maximum relative error");
  gc->add_option("--vocab-size", gc_vocab, "Vocabulary size of the test model");
  gc->add_option("--batch", gc_batch, "Batch rows");
  gc->add_option("--seq-len", gc_len, "Sequence length");
  common(gc, false);

  // replay
  auto* rp = app.add_subcommand("replay", "Re-run a recorded manifest and compare outputs");
  std::string manifest;
  rp->add_option("manifest", manifest, "Path to a .manifest.json")->required();

  try {
    args = detail::expand_config(std::move(args));
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "zsp: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "zsp: " << e.what() << "\n";
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  st.subcommand = sub->get_name();
  st.argv = args;
  st.seed = seed;
  st.out = out;

  try {
    if (sub == rp) return detail::replay(manifest);

    if (sub == gen) {
      SyntheticLangSpec spec;
      if (!spec_path.empty()) {
        spec = SyntheticLangSpec::load(spec_path);
        st.inputs.push_back(spec_path);
      }
      SyntheticWorld world(spec);
      detail::Output o(out);
      if (mono) {
        if (lang.empty()) throw UsageError("--mono needs --lang");
        for (const auto& s : gen_synthetic_monolingual(world, sentences, {min_len, max_len}, {lang}, seed))
          o.stream() << join(s.tokens) << '\n';
      } else {
        DirectionList dirs;
        if (directions.empty()) {
          dirs = all_cross_directions(spec.languages);
        } else {
          for (const auto& d : split(directions, ',')) {
            auto parts = split(trim(d), '-');
            if (parts.size() != 2) throw UsageError("--directions: expected src-tgt, got '" + d + "'");
            dirs.emplace_back(parts[0], parts[1]);
          }
        }
        for (const auto& p : gen_synthetic_corpus(world, pairs, {min_len, max_len}, dirs, seed))
          write_parallel_tsv_line(o.stream(), p);
      }
      o.close();
    } else if (sub == bv) {
      if (tsv_files.empty() && text_files.empty()) throw UsageError("build-vocab needs --tsv or --text input");
      VocabBuilder b;
      for (const auto& f : tsv_files) {
        ParallelTsvReader r(f, languages);
        ParallelPair p;
        while (r.next(p)) {
          b.add_line(join(p.src_tokens));
          b.add_line(join(p.tgt_tokens));
        }
        st.inputs.push_back(f);
      }
      for (const auto& f : text_files) {
        detail::Input in(f);
        std::string line;
        while (in.next_line(line)) b.add_line(line);
        st.inputs.push_back(f);
      }
      const Vocabulary v = b.finish(languages, min_count);
      detail::Output o(out);
      v.write(o.stream());
      o.close();
    } else if (sub == pre || sub == ft) {
      const bool is_pre = sub == pre;
      const ModelFlags& mf = is_pre ? pre_model : ft_model;
      const TrainFlags& tf = is_pre ? pre_train : ft_train;
      if (out == "-") throw UsageError("training needs a file --out for the checkpoint");
      TransformerLM m;
      Vocabulary v;
      if (!tf.init.empty()) {
        auto ck = detail::load_model(tf.init);
        m = std::move(ck.model);
        v = std::move(*ck.vocab);
        st.inputs.push_back(tf.init);
      }
      if (!tf.vocab.empty()) {
        Vocabulary given = Vocabulary::load(tf.vocab);
        if (!tf.init.empty() && !(given == v)) throw ContractError("--vocab differs from the --init checkpoint");
        v = std::move(given);
        st.inputs.push_back(tf.vocab);
      }
      if (v.size() == 0) throw UsageError("training needs --vocab or --init");
      if (tf.init.empty()) m = TransformerLM(mf.config(v.size(), v.num_languages()), derive_seed(seed, 0x1417));
      const TrainConfig cfg = tf.config(is_pre ? Phase::pretrain : Phase::finetune, seed, out);
      if (!tf.train_config.empty()) st.inputs.push_back(tf.train_config);
      std::vector<TrainingSequence> heldout;
      TrainReport rep;
      if (is_pre) {
        if (mono_files.size() != mono_langs.size()) throw UsageError("give one --lang per --corpus");
        std::vector<std::unique_ptr<ExampleStream<MonolingualSentence>>> parts;
        for (std::size_t i = 0; i < mono_files.size(); ++i) {
          detail::model_lang_check(v, mono_langs[i]);
          parts.push_back(std::make_unique<MonoFileStream>(mono_files[i], mono_langs[i]));
          st.inputs.push_back(mono_files[i]);
        }
        detail::InterleavedStream<MonolingualSentence> stream(std::move(parts));
        if (!tf.heldout.empty()) {
          heldout = clean_sequences(load_monolingual(tf.heldout, mono_langs.front()), v);
          st.inputs.push_back(tf.heldout);
        }
        rep = pretrain(m, v, stream, cfg, heldout.empty() ? nullptr : &heldout);
      } else {
        TsvPairStream stream(parallel_file, v.languages());
        st.inputs.push_back(parallel_file);
        if (!tf.heldout.empty()) {
          heldout = clean_sequences(load_parallel_tsv(tf.heldout, v.languages()), v);
          st.inputs.push_back(tf.heldout);
        }
        rep = finetune(m, v, stream, cfg, heldout.empty() ? nullptr : &heldout);
      }
      for (const auto& [s, nll] : rep.heldout_nll) std::cerr << "step " << s << " heldout_nll " << format_real(nll) << "\n";
      if (!rep.train_loss.empty())
        std::cerr << "loss " << format_real(rep.initial_loss()) << " -> " << format_real(rep.final_loss()) << "\n";
    } else if (sub == para || sub == trans || sub == piv) {
      const auto ck = detail::load_model(model_path);
      st.inputs.push_back(model_path);
      const Vocabulary& v = *ck.vocab;
      detail::model_lang_check(v, lang);
      const SamplerFlags& sf = sub == para ? para_s : (sub == trans ? trans_s : piv_s);
      if (sf.n < 1) throw UsageError("--n must be >= 1");
      if (sub == trans) detail::model_lang_check(v, target_lang);
      if (sub == piv) {
        detail::model_lang_check(v, pivot_lang);
        if (pivot_lang == lang) throw UsageError("--pivot-lang must differ from --lang");
      }
      detail::Input in(input);
      if (input != "-") st.inputs.push_back(input);
      detail::Output o(out);
      std::string line;
      for (std::size_t i = 0; in.next_line(line); ++i) {
        if (split_ws(line).empty()) throw ContractError("input line " + std::to_string(i + 1) + " is empty");
        SamplerConfig c = sf.config(derive_seed(seed, i));
        std::vector<std::string> res;
        if (sub == para) {
          res = paraphrase(ck.model, v, line, lang, c, sf.n);
        } else if (sub == trans) {
          for (std::size_t s = 0; s < sf.n; ++s) {
            SamplerConfig cs = c;
            cs.seed = derive_seed(c.seed, s);
            res.push_back(translate(ck.model, v, line, lang, target_lang, cs));
          }
        } else {
          res = pivot_samples(ck.model, v, line, lang, pivot_lang, c, sf.n);
        }
        for (const auto& r : res) o.stream() << r << '\n';
      }
      o.close();
    } else if (sub == ev) {
      std::vector<Sentence> ins;
      std::vector<std::vector<Sentence>> outs;
      {
        detail::Input a(input), b(outputs_file);
        st.inputs.push_back(input);
        st.inputs.push_back(outputs_file);
        std::string line;
        while (a.next_line(line)) {
          ins.push_back(split_ws(line));
          outs.emplace_back();
          for (std::size_t s = 0; s < n_per_input; ++s) {
            if (!b.next_line(line)) throw ContractError("--outputs has fewer than --n lines per input");
            outs.back().push_back(split_ws(line));
          }
        }
        if (b.next_line(line)) throw ContractError("--outputs has more lines than --n per input");
      }
      auto res = ev_flags.load(lang, st.inputs);
      std::vector<SweepItem> items;
      for (auto& s : ins) items.push_back({s, lang, ""});
      SystemOutputs so{outs, 0.0};
      SamplerConfig dummy;
      MetricReport rep = score_outputs(target_lang, dummy, items, so, n_per_input, res.context());
      detail::Output o(out);
      o.stream() << "system = " << rep.system << "\nn_samples = " << rep.n_samples
                 << "\nrelevance = " << format_real(rep.relevance) << "\ndistinct2 = " << format_real(rep.distinct2)
                 << "\ninverse_self_bleu = " << format_real(rep.inverse_self_bleu)
                 << "\nfluency_logprob = " << format_real(rep.fluency_logprob) << "\nsemantic_preservation = "
                 << (rep.semantic_preservation ? format_real(*rep.semantic_preservation) : "NA") << "\n";
      if (!model_path.empty() || !heldout_file.empty()) {
        if (model_path.empty() || heldout_file.empty()) throw UsageError("held-out NLL needs both --model and --heldout");
        const auto ck = detail::load_model(model_path);
        st.inputs.push_back(model_path);
        st.inputs.push_back(heldout_file);
        const auto seqs = clean_sequences(load_parallel_tsv(heldout_file, ck.vocab->languages()), *ck.vocab);
        o.stream() << "heldout_nll = " << format_real(evaluate_heldout_nll(ck.model, seqs)) << "\n";
      }
      o.close();
    } else if (sub == sw) {
      const auto ck = detail::load_model(model_path);
      st.inputs.push_back(model_path);
      const Vocabulary& v = *ck.vocab;
      detail::model_lang_check(v, lang);
      SweepOptions so;
      so.temperatures = detail::parse_real_list("temps", temps);
      so.strategy = sw_s.greedy ? Strategy::greedy : Strategy::top_k;
      so.k = sw_s.k;
      so.n_samples = sw_s.n;
      so.max_new_tokens = sw_s.max_new_tokens;
      so.seed = seed;
      so.pivot = baseline == "pivot";
      if (so.pivot) {
        if (pivot_lang.empty()) throw UsageError("--baseline pivot needs --pivot-lang");
        detail::model_lang_check(v, pivot_lang);
        if (pivot_lang == lang) throw UsageError("--pivot-lang must differ from --lang");
      }
      std::vector<SweepItem> items;
      detail::Input in(input);
      if (input != "-") st.inputs.push_back(input);
      std::string line;
      while (in.next_line(line))
        if (auto toks = split_ws(line); !toks.empty()) items.push_back({toks, lang, pivot_lang});
      auto res = sw_flags.load(lang, st.inputs);
      const auto rows = run_sweep(ck.model, v, items, so, res.context());
      detail::Output o(out);
      o.stream() << MetricReport::tsv_header() << '\n';
      for (const auto& r : rows) o.stream() << r.tsv_row() << '\n';
      o.close();
    } else if (sub == gc) {
      ModelConfig mc = gc_model.config(gc_vocab, 2);
      if (gc_len > mc.max_len) throw UsageError("--seq-len exceeds --max-positions");
      TransformerLM m(mc, derive_seed(seed, 1));
      Rng rng(derive_seed(seed, 2));
      Batch b;
      b.batch = gc_batch;
      b.seq_len = gc_len;
      for (std::size_t i = 0; i < gc_batch * gc_len; ++i) {
        b.ids.push_back(static_cast<TokenId>(rng.below(gc_vocab)));
        b.lang.push_back(rng.below(2));
        b.targets.push_back(static_cast<TokenId>(rng.below(gc_vocab)));
        b.mask.push_back(i % 3 != 0);
      }
      GradCheckOptions opt;
      opt.coordinates = gc_coords;
      opt.seed = derive_seed(seed, 3);
      const auto rep = gradient_check([&] { return m.batch_loss(b); }, m.params(), gc_tol, opt);
      detail::Output o(out);
      o.stream() << rep.summary() << '\n';
      o.close();
      if (out != "-") st.outputs.push_back(out);
      write_manifest(st, *sub);
      return rep.passed ? kExitOk : kExitFailure;
    }
    if (out != "-") st.outputs.push_back(out);
    write_manifest(st, *sub);
  } catch (const UsageError& e) {
    std::cerr << "zsp: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "zsp: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args));
}

}  // namespace zsp::cli
