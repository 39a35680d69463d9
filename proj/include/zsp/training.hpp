#pragma once

// Monolingual pre-training and parallel fine-tuning loops.
//
// Examples are pulled from a rewindable stream a chunk at a time, so memory
// is bounded by the chunk size rather than the corpus. Each chunk is sorted
// by length and cut into batches (similar lengths share a batch), and the
// batch order within the chunk is shuffled. All randomness derives from
// TrainConfig::seed.

#include <chrono>
#include <deque>
#include <functional>
#include <memory>

#include "zsp/checkpoint.hpp"

namespace zsp {

enum class Phase { pretrain, finetune };

inline std::string phase_name(Phase p) { return p == Phase::pretrain ? "pretrain" : "finetune"; }

struct TrainConfig {
  Phase phase = Phase::finetune;
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  AdamConfig adam;
  std::optional<NoiseConfig> noise;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::size_t eval_every = 0;        // 0: no periodic held-out evaluation
  double warmup_fraction = 0.05;
  std::string checkpoint_path;  // empty: no checkpoints written

  void validate() const {
    if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
      throw ContractError("train config: warmup_fraction must lie in [0,1]");
    adam.validate();
    if (noise) {
      if (phase != Phase::finetune) throw ContractError("train config: noise is only allowed in the finetune phase");
      noise->validate();
    }
  }

  /// Learning rate at 0-based step `t`: linear warmup, then constant.
  double learning_rate_at(std::size_t t) const {
    const auto warm = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(steps)));
    if (warm == 0 || t >= warm) return adam.learning_rate;
    return adam.learning_rate * static_cast<double>(t + 1) / static_cast<double>(warm);
  }

  /// Applies one key; returns false for keys it does not know.
  bool apply(const std::string& key, const std::string& value) {
    auto count = [&] {
      const long long v = parse_int(key, value);
      if (v < 0) throw ParseError("'" + key + "' must be non-negative");
      return static_cast<std::size_t>(v);
    };
    auto nz = [&]() -> NoiseConfig& {
      if (!noise) noise = NoiseConfig{};
      return *noise;
    };
    if (key == "phase") {
      if (value == "pretrain") phase = Phase::pretrain;
      else if (value == "finetune") phase = Phase::finetune;
      else throw ParseError("phase must be pretrain or finetune, got '" + value + "'");
    } else if (key == "steps") steps = count();
    else if (key == "batch_size") batch_size = count();
    else if (key == "learning_rate") adam.learning_rate = parse_real(key, value);
    else if (key == "beta1") adam.beta1 = parse_real(key, value);
    else if (key == "beta2") adam.beta2 = parse_real(key, value);
    else if (key == "epsilon") adam.epsilon = parse_real(key, value);
    else if (key == "weight_decay") adam.weight_decay = parse_real(key, value);
    else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "checkpoint_every") checkpoint_every = count();
    else if (key == "eval_every") eval_every = count();
    else if (key == "warmup_fraction") warmup_fraction = parse_real(key, value);
    else if (key == "checkpoint_path") checkpoint_path = value;
    else if (key == "noise") {
      if (parse_bool(key, value)) nz();
      else noise.reset();
    } else if (key == "noise_rate") nz().rate = parse_real(key, value);
    else if (key == "noise_delete") nz().enable_delete = parse_bool(key, value);
    else if (key == "noise_insert") nz().enable_insert = parse_bool(key, value);
    else if (key == "noise_reorder") nz().enable_reorder = parse_bool(key, value);
    else if (key == "noise_max_swap_distance") nz().max_swap_distance = count();
    else if (key == "noise_seed") nz().seed = static_cast<std::uint64_t>(parse_int(key, value));
    else return false;
    return true;
  }

  static TrainConfig from_key_values(const KeyValues& kv) {
    TrainConfig c;
    // "noise = false" must win over noise_* keys regardless of file order.
    for (const auto& [k, v] : kv)
      if (k != "noise" && !c.apply(k, v)) throw ParseError("train config: unknown key '" + k + "'");
    if (auto it = kv.find("noise"); it != kv.end()) c.apply(it->first, it->second);
    c.validate();
    return c;
  }

  static TrainConfig load(const std::string& path) { return from_key_values(load_key_values(path)); }

  std::string to_text() const {
    std::ostringstream os;
    os << "phase = " << phase_name(phase) << "\nsteps = " << steps << "\nbatch_size = " << batch_size
       << "\nlearning_rate = " << format_real(adam.learning_rate) << "\nbeta1 = " << format_real(adam.beta1)
       << "\nbeta2 = " << format_real(adam.beta2) << "\nepsilon = " << format_real(adam.epsilon)
       << "\nweight_decay = " << format_real(adam.weight_decay) << "\nseed = " << seed
       << "\ncheckpoint_every = " << checkpoint_every << "\neval_every = " << eval_every
       << "\nwarmup_fraction = " << format_real(warmup_fraction) << "\n";
    if (!checkpoint_path.empty()) os << "checkpoint_path = " << checkpoint_path << "\n";
    os << "noise = " << (noise ? "true" : "false") << "\n";
    if (noise)
      os << "noise_rate = " << format_real(noise->rate) << "\nnoise_delete = " << noise->enable_delete
         << "\nnoise_insert = " << noise->enable_insert << "\nnoise_reorder = " << noise->enable_reorder
         << "\nnoise_max_swap_distance = " << noise->max_swap_distance << "\nnoise_seed = " << noise->seed << "\n";
    return os.str();
  }
};

struct TrainReport {
  std::vector<std::pair<std::size_t, double>> train_loss;   // (1-based step, batch loss)
  std::vector<std::pair<std::size_t, double>> heldout_nll;  // (1-based step, mean NLL)
  std::vector<double> step_seconds;
  std::string final_checkpoint;

  double initial_loss() const { return train_loss.empty() ? 0.0 : train_loss.front().second; }
  double final_loss() const { return train_loss.empty() ? 0.0 : train_loss.back().second; }

  /// Mean training loss over the last `window` steps.
  double tail_loss(std::size_t window) const {
    if (train_loss.empty()) return 0.0;
    const std::size_t n = std::min(window, train_loss.size());
    double s = 0.0;
    for (std::size_t i = train_loss.size() - n; i < train_loss.size(); ++i) s += train_loss[i].second;
    return s / static_cast<double>(n);
  }
};

// ---------------------------------------------------------------------------
// Example streams

template <typename T>
class ExampleStream {
 public:
  virtual ~ExampleStream() = default;
  virtual bool next(T& out) = 0;
  /// Restarts from the beginning for the given (0-based) epoch.
  virtual void rewind(std::uint64_t epoch) = 0;
};

/// In-memory examples visited in a fresh seeded permutation each epoch.
template <typename T>
class VectorStream : public ExampleStream<T> {
 public:
  VectorStream(const std::vector<T>& items, std::uint64_t seed) : items_(items), seed_(seed) { rewind(0); }

  bool next(T& out) override {
    if (pos_ >= order_.size()) return false;
    out = items_[order_[pos_++]];
    return true;
  }

  void rewind(std::uint64_t epoch) override {
    order_.resize(items_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, 0x5eed, epoch));
    rng.shuffle(order_);
    pos_ = 0;
  }

 private:
  const std::vector<T>& items_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Parallel TSV read sequentially, reopened on rewind.
class TsvPairStream : public ExampleStream<ParallelPair> {
 public:
  explicit TsvPairStream(std::string path, std::vector<std::string> languages = {})
      : path_(std::move(path)), languages_(std::move(languages)) {
    rewind(0);
  }
  bool next(ParallelPair& out) override { return reader_->next(out); }
  void rewind(std::uint64_t) override { reader_ = std::make_unique<ParallelTsvReader>(path_, languages_); }

 private:
  std::string path_;
  std::vector<std::string> languages_;
  std::unique_ptr<ParallelTsvReader> reader_;
};

/// Monolingual text file (one sentence per line) in a single language.
class MonoFileStream : public ExampleStream<MonolingualSentence> {
 public:
  MonoFileStream(std::string path, std::string lang) : path_(std::move(path)), lang_(std::move(lang)) { rewind(0); }

  bool next(MonolingualSentence& out) override {
    std::string line;
    while (std::getline(in_, line)) {
      ++lineno_;
      if (!valid_utf8(line)) throw ParseError(path_ + ":" + std::to_string(lineno_) + ": invalid UTF-8");
      auto toks = split_ws(line);
      if (toks.empty()) continue;
      out = {lang_, std::move(toks)};
      return true;
    }
    return false;
  }

  void rewind(std::uint64_t) override {
    in_ = std::ifstream(path_, std::ios::binary);
    if (!in_) throw IoError("cannot open " + path_);
    lineno_ = 0;
  }

 private:
  std::string path_, lang_;
  std::ifstream in_;
  std::size_t lineno_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

/// Mean NLL per counted token. Per-sequence sums are accumulated in sorted
/// order, so the result does not depend on corpus order.
inline double evaluate_heldout_nll(const TransformerLM& m, const std::vector<TrainingSequence>& corpus) {
  if (corpus.empty()) throw ContractError("evaluate_heldout_nll: empty corpus");
  NoGradGuard no_grad;
  std::vector<std::pair<double, std::size_t>> parts;
  parts.reserve(corpus.size());
  for (const auto& s : corpus) {
    auto r = sequence_nll(m, s);
    parts.emplace_back(r.sum.item(), r.count);
  }
  std::sort(parts.begin(), parts.end());
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& [s, c] : parts) {
    sum += s;
    count += c;
  }
  return sum / static_cast<double>(count);
}

/// Fraction of counted positions in the target segment (after the
/// delimiter, or the whole sequence when there is none) whose argmax
/// prediction matches the target under `same`.
inline double heldout_accuracy(const TransformerLM& m, const std::vector<TrainingSequence>& corpus,
                               const std::function<bool(TokenId, TokenId)>& same = std::equal_to<TokenId>{}) {
  if (corpus.empty()) throw ContractError("heldout_accuracy: empty corpus");
  NoGradGuard no_grad;
  std::size_t hit = 0, total = 0;
  const std::size_t V = m.config().vocab_size;
  for (const auto& s : corpus) {
    const TrainingSequence* one[] = {&s};
    const Batch b = make_batch(one, SpecialIds{}.pad);
    const Tensor logits = m.forward_flat(b.ids, b.lang, 1, b.seq_len);
    const std::size_t start = s.delim_index ? *s.delim_index : 0;
    for (std::size_t t = start; t < b.seq_len; ++t) {
      if (!b.mask[t]) continue;
      const double* row = logits.values().data() + t * V;
      const auto pred = static_cast<TokenId>(std::max_element(row, row + V) - row);
      hit += same(pred, b.targets[t]);
      ++total;
    }
  }
  if (total == 0) throw ContractError("heldout_accuracy: no counted target positions");
  return static_cast<double>(hit) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Training loop

namespace detail {

inline constexpr std::size_t kBatchesPerChunk = 8;

template <typename T>
std::vector<std::vector<TrainingSequence>> next_chunk(
    ExampleStream<T>& stream, std::uint64_t& epoch, std::size_t& example_index, const TrainConfig& cfg,
    const std::function<TrainingSequence(const T&, std::size_t)>& assemble, std::uint64_t chunk_no) {
  std::vector<TrainingSequence> seqs;
  const std::size_t want = cfg.batch_size * kBatchesPerChunk;
  bool fresh_pass = false;
  T item;
  while (seqs.size() < want) {
    if (stream.next(item)) {
      seqs.push_back(assemble(item, example_index++));
      fresh_pass = false;
      continue;
    }
    if (example_index == 0 || fresh_pass) throw ContractError("training: empty corpus");
    stream.rewind(++epoch);
    fresh_pass = true;
    if (!seqs.empty()) break;  // an epoch boundary closes the chunk
  }
  std::stable_sort(seqs.begin(), seqs.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
  std::vector<std::vector<TrainingSequence>> batches;
  for (std::size_t i = 0; i < seqs.size(); i += cfg.batch_size) {
    const std::size_t end = std::min(seqs.size(), i + cfg.batch_size);
    batches.emplace_back(std::make_move_iterator(seqs.begin() + static_cast<std::ptrdiff_t>(i)),
                         std::make_move_iterator(seqs.begin() + static_cast<std::ptrdiff_t>(end)));
  }
  Rng rng(derive_seed(cfg.seed, 0xba7c, chunk_no));
  rng.shuffle(batches);
  return batches;
}

template <typename T>
TrainReport train_loop(TransformerLM& m, ExampleStream<T>& stream, const TrainConfig& cfg,
                       const std::function<TrainingSequence(const T&, std::size_t)>& assemble,
                       const std::vector<TrainingSequence>* heldout, const Vocabulary* vocab) {
  cfg.validate();
  TrainReport report;
  std::deque<std::vector<TrainingSequence>> queue;
  std::uint64_t epoch = 0, chunk_no = 0;
  std::size_t example_index = 0;
  const TokenId pad = SpecialIds{}.pad;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    if (queue.empty()) {
      auto batches = next_chunk<T>(stream, epoch, example_index, cfg, assemble, chunk_no++);
      for (auto& b : batches) queue.push_back(std::move(b));
    }
    const std::vector<TrainingSequence> batch = std::move(queue.front());
    queue.pop_front();
    std::vector<const TrainingSequence*> ptrs;
    for (const auto& s : batch) {
      if (s.size() > m.config().max_len + 1)
        throw LengthError("training sequence of " + std::to_string(s.size()) + " tokens exceeds max_len " +
                          std::to_string(m.config().max_len));
      ptrs.push_back(&s);
    }
    m.params().zero_grad();
    Tensor loss = m.batch_loss(make_batch(ptrs, pad));
    backward(loss);
    AdamConfig adam = cfg.adam;
    adam.learning_rate = cfg.learning_rate_at(step);
    adam_step(m.params(), adam);
    report.train_loss.emplace_back(step + 1, loss.item());
    if (cfg.eval_every && heldout && (step + 1) % cfg.eval_every == 0)
      report.heldout_nll.emplace_back(step + 1, evaluate_heldout_nll(m, *heldout));
    if (cfg.checkpoint_every && !cfg.checkpoint_path.empty() && (step + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(m, cfg.checkpoint_path, vocab);
    report.step_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  if (!cfg.checkpoint_path.empty()) {
    save_checkpoint(m, cfg.checkpoint_path, vocab);
    report.final_checkpoint = cfg.checkpoint_path;
  }
  return report;
}

}  // namespace detail

/// Trains on [bos, <lang>, sentence, eos] sequences.
inline TrainReport pretrain(TransformerLM& m, const Vocabulary& v, ExampleStream<MonolingualSentence>& corpus,
                            const TrainConfig& cfg, const std::vector<TrainingSequence>* heldout = nullptr) {
  if (cfg.phase != Phase::pretrain) throw ContractError("pretrain: config phase is " + phase_name(cfg.phase));
  std::function<TrainingSequence(const MonolingualSentence&, std::size_t)> assemble =
      [&v](const MonolingualSentence& s, std::size_t) { return assemble_monolingual(s.tokens, s.lang, v); };
  return detail::train_loop(m, corpus, cfg, assemble, heldout, &v);
}

inline TrainReport pretrain(TransformerLM& m, const Vocabulary& v, const std::vector<MonolingualSentence>& corpus,
                            const TrainConfig& cfg, const std::vector<TrainingSequence>* heldout = nullptr) {
  if (corpus.empty()) throw ContractError("pretrain: empty corpus");
  VectorStream<MonolingualSentence> stream(corpus, cfg.seed);
  return pretrain(m, v, stream, cfg, heldout);
}

/// Trains on bilingual sequences, with DAE noise on the source when
/// configured. Same-language pairs are rejected.
inline TrainReport finetune(TransformerLM& m, const Vocabulary& v, ExampleStream<ParallelPair>& corpus,
                            const TrainConfig& cfg, const std::vector<TrainingSequence>* heldout = nullptr) {
  if (cfg.phase != Phase::finetune) throw ContractError("finetune: config phase is " + phase_name(cfg.phase));
  std::function<TrainingSequence(const ParallelPair&, std::size_t)> assemble = [&v, &cfg](const ParallelPair& p,
                                                                                          std::size_t index) {
    if (p.src_lang == p.tgt_lang)
      throw ContractError("finetune: same-language pair " + p.src_lang + "->" + p.tgt_lang +
                          " rejected (training data must be cross-lingual)");
    Rng rng(derive_seed(cfg.noise ? cfg.noise->seed : 0, cfg.seed, index));
    return assemble_bilingual(p, cfg.noise, v, rng);
  };
  return detail::train_loop(m, corpus, cfg, assemble, heldout, &v);
}

inline TrainReport finetune(TransformerLM& m, const Vocabulary& v, const std::vector<ParallelPair>& corpus,
                            const TrainConfig& cfg, const std::vector<TrainingSequence>* heldout = nullptr) {
  if (corpus.empty()) throw ContractError("finetune: empty corpus");
  VectorStream<ParallelPair> stream(corpus, cfg.seed);
  return finetune(m, v, stream, cfg, heldout);
}

/// Clean bilingual sequences for held-out evaluation.
inline std::vector<TrainingSequence> clean_sequences(const std::vector<ParallelPair>& pairs, const Vocabulary& v) {
  std::vector<TrainingSequence> out;
  Rng unused(0);
  for (const auto& p : pairs) out.push_back(assemble_bilingual(p, std::nullopt, v, unused));
  return out;
}

inline std::vector<TrainingSequence> clean_sequences(const std::vector<MonolingualSentence>& sents,
                                                     const Vocabulary& v) {
  std::vector<TrainingSequence> out;
  for (const auto& s : sents) out.push_back(assemble_monolingual(s.tokens, s.lang, v));
  return out;
}

}  // namespace zsp
