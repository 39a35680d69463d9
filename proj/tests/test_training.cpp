#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "zsp/synthetic.hpp"
#include "zsp/training.hpp"

namespace zsp {
namespace {

KeyValues kv(const std::string& text) {
  std::istringstream in(text);
  return parse_key_values(in);
}

struct Toy {
  SyntheticWorld world{SyntheticLangSpec{}};
  Vocabulary vocab;
  Toy() {
    std::vector<std::string> lines;
    for (const auto& l : world.spec().languages)
      for (std::size_t c = 0; c < world.spec().n_concepts; ++c)
        for (std::size_t s = 0; s < world.spec().synonyms_per_concept; ++s)
          lines.push_back(world.surface(world.lang_index(l), c, s));
    vocab = build_vocab(lines, world.spec().languages, 1);
  }
  ModelConfig config(std::size_t d = 32) const {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = d;
    c.n_heads = 4;
    c.d_ff = 4 * d;
    c.d_lang = 8;
    c.max_len = 32;
    c.vocab_size = vocab.size();
    c.n_languages = vocab.num_languages();
    return c;
  }
  // concept-level equality of two token ids
  bool same_concept(TokenId a, TokenId b) const {
    if (a == b) return true;
    if (vocab.is_control(a) || vocab.is_control(b)) return false;
    const auto x = world.lookup(vocab.token(a)), y = world.lookup(vocab.token(b));
    return x && y && *x == *y;
  }
};

const Toy& toy() {
  static const Toy t;
  return t;
}

TrainConfig pre_cfg(std::size_t steps, std::uint64_t seed = 1) {
  TrainConfig c;
  c.phase = Phase::pretrain;
  c.steps = steps;
  c.batch_size = 16;
  c.adam.learning_rate = 3e-3;
  c.seed = seed;
  return c;
}

TEST(TrainConfig, ParsesEveryKey) {
  const auto c = TrainConfig::from_key_values(
      kv("phase = finetune\nsteps = 7\nbatch_size = 3\nlearning_rate = 0.002\nbeta1 = 0.8\nbeta2 = 0.95\n"
         "epsilon = 1e-6\nweight_decay = 0.1\nseed = 9\ncheckpoint_every = 2\neval_every = 3\n"
         "warmup_fraction = 0.5\ncheckpoint_path = /tmp/x\nnoise = true\nnoise_rate = 0.2\nnoise_delete = false\n"
         "noise_insert = true\nnoise_reorder = false\nnoise_max_swap_distance = 3\nnoise_seed = 4\n"));
  EXPECT_EQ(c.phase, Phase::finetune);
  EXPECT_EQ(c.steps, 7u);
  EXPECT_EQ(c.batch_size, 3u);
  EXPECT_EQ(c.adam.learning_rate, 0.002);
  EXPECT_EQ(c.adam.beta1, 0.8);
  EXPECT_EQ(c.adam.beta2, 0.95);
  EXPECT_EQ(c.adam.epsilon, 1e-6);
  EXPECT_EQ(c.adam.weight_decay, 0.1);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.checkpoint_every, 2u);
  EXPECT_EQ(c.eval_every, 3u);
  EXPECT_EQ(c.warmup_fraction, 0.5);
  EXPECT_EQ(c.checkpoint_path, "/tmp/x");
  ASSERT_TRUE(c.noise);
  EXPECT_EQ(c.noise->rate, 0.2);
  EXPECT_FALSE(c.noise->enable_delete);
  EXPECT_TRUE(c.noise->enable_insert);
  EXPECT_FALSE(c.noise->enable_reorder);
  EXPECT_EQ(c.noise->max_swap_distance, 3u);
  EXPECT_EQ(c.noise->seed, 4u);
  EXPECT_EQ(TrainConfig::from_key_values(kv(c.to_text())).to_text(), c.to_text());
}

TEST(TrainConfig, Errors) {
  EXPECT_THROW(TrainConfig::from_key_values(kv("stepz = 3\n")), ParseError);
  EXPECT_THROW(TrainConfig::from_key_values(kv("phase = warmup\n")), ParseError);
  EXPECT_THROW(TrainConfig::from_key_values(kv("steps = -1\n")), ParseError);
  EXPECT_THROW(TrainConfig::from_key_values(kv("phase = pretrain\nnoise = true\n")), ContractError);
  EXPECT_THROW(TrainConfig::from_key_values(kv("batch_size = 0\n")), ContractError);
  const auto off = TrainConfig::from_key_values(kv("noise_rate = 0.3\nnoise = false\n"));
  EXPECT_FALSE(off.noise);
}

TEST(TrainConfig, WarmupSchedule) {
  TrainConfig c;
  c.steps = 100;
  c.adam.learning_rate = 1e-4;
  EXPECT_DOUBLE_EQ(c.learning_rate_at(0), 1e-4 / 5);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(4), 1e-4);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(99), 1e-4);
  c.warmup_fraction = 0;
  EXPECT_DOUBLE_EQ(c.learning_rate_at(0), 1e-4);
}

TEST(Pretrain, ZeroStepsLeavesParameters) {
  TransformerLM m(toy().config(), 2);
  const auto before = m.params().checksum();
  const auto sents = gen_synthetic_monolingual(toy().world, 20, {3, 6}, {"en"}, 1);
  const auto rep = pretrain(m, toy().vocab, sents, pre_cfg(0));
  EXPECT_TRUE(rep.train_loss.empty());
  EXPECT_EQ(m.params().checksum(), before);
}

TEST(Pretrain, EmptyCorpusAndWrongPhase) {
  TransformerLM m(toy().config(), 2);
  EXPECT_THROW(pretrain(m, toy().vocab, std::vector<MonolingualSentence>{}, pre_cfg(5)), ContractError);
  TrainConfig ft = pre_cfg(5);
  ft.phase = Phase::finetune;
  const auto sents = gen_synthetic_monolingual(toy().world, 20, {3, 6}, {"en"}, 1);
  EXPECT_THROW(pretrain(m, toy().vocab, sents, ft), ContractError);
}

TEST(Pretrain, SmokeLossDrops) {
  TransformerLM m(toy().config(), 3);
  const auto sents = gen_synthetic_monolingual(toy().world, 200, {3, 6}, toy().world.spec().languages, 2);
  const auto rep = pretrain(m, toy().vocab, sents, pre_cfg(300));
  ASSERT_EQ(rep.train_loss.size(), 300u);
  EXPECT_LT(rep.tail_loss(20), 0.6 * rep.initial_loss()) << rep.initial_loss() << " -> " << rep.tail_loss(20);
}

TEST(Pretrain, SameSeedGivesIdenticalCheckpoints) {
  const auto sents = gen_synthetic_monolingual(toy().world, 100, {3, 6}, {"en", "zh"}, 3);
  const auto dir = std::filesystem::temp_directory_path();
  std::string bytes[2];
  for (int run = 0; run < 2; ++run) {
    TransformerLM m(toy().config(16), 4);
    TrainConfig c = pre_cfg(40, 5);
    c.checkpoint_path = (dir / ("zsp_det_" + std::to_string(run) + ".ckpt")).string();
    const auto rep = pretrain(m, toy().vocab, sents, c);
    EXPECT_EQ(rep.final_checkpoint, c.checkpoint_path);
    std::ifstream in(c.checkpoint_path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    bytes[run] = ss.str();
    std::filesystem::remove(c.checkpoint_path);
  }
  EXPECT_FALSE(bytes[0].empty());
  EXPECT_EQ(bytes[0], bytes[1]);
}

TEST(Pretrain, HeldoutSeriesFollowsEvalEvery) {
  TransformerLM m(toy().config(16), 4);
  const auto sents = gen_synthetic_monolingual(toy().world, 60, {3, 6}, {"en"}, 3);
  const auto held = clean_sequences(gen_synthetic_monolingual(toy().world, 10, {3, 6}, {"en"}, 4), toy().vocab);
  TrainConfig c = pre_cfg(25);
  c.eval_every = 10;
  const auto rep = pretrain(m, toy().vocab, sents, c, &held);
  ASSERT_EQ(rep.heldout_nll.size(), 2u);
  EXPECT_EQ(rep.heldout_nll[0].first, 10u);
  EXPECT_EQ(rep.heldout_nll[1].first, 20u);
  EXPECT_EQ(rep.step_seconds.size(), 25u);
}

TEST(Finetune, RejectsSameLanguagePairs) {
  TransformerLM m(toy().config(16), 5);
  auto pairs = gen_synthetic_corpus(toy().world, 20, {2, 4}, {{"en", "es"}}, 6);
  pairs[7].tgt_lang = "en";
  pairs[7].tgt_tokens = pairs[7].src_tokens;
  TrainConfig c;
  c.steps = 5;
  c.batch_size = 4;
  try {
    finetune(m, toy().vocab, pairs, c);
    FAIL() << "same-language pair was accepted";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("cross-lingual"), std::string::npos);
  }
}

TEST(Finetune, NoiseOnlyChangesSourceSegments) {
  const auto pairs = gen_synthetic_corpus(toy().world, 300, {4, 8}, all_cross_directions(toy().world.spec().languages), 7);
  NoiseConfig noise;
  noise.rate = 0.2;
  noise.enable_insert = true;
  bool changed = false;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Rng a(i), b(i);
    const auto clean = assemble_bilingual(pairs[i], std::nullopt, toy().vocab, a);
    const auto noisy = assemble_bilingual(pairs[i], noise, toy().vocab, b);
    const std::size_t tail_clean = clean.size() - *clean.delim_index, tail_noisy = noisy.size() - *noisy.delim_index;
    ASSERT_EQ(tail_clean, tail_noisy);
    EXPECT_TRUE(std::equal(clean.ids.begin() + *clean.delim_index, clean.ids.end(), noisy.ids.begin() + *noisy.delim_index));
    EXPECT_EQ(clean.ids[1], noisy.ids[1]);
    changed |= clean.ids != noisy.ids;
  }
  EXPECT_TRUE(changed);
}

TEST(HeldoutNll, MatchesSequenceLossAndIsOrderFree) {
  TransformerLM m(toy().config(16), 8);
  const auto pairs = gen_synthetic_corpus(toy().world, 30, {2, 6}, all_cross_directions(toy().world.spec().languages), 9);
  auto seqs = clean_sequences(pairs, toy().vocab);
  const std::vector<TrainingSequence> one = {seqs[0]};
  EXPECT_EQ(evaluate_heldout_nll(m, one), sequence_loss(m, seqs[0]).item());
  const auto before = m.params().checksum();
  const double a = evaluate_heldout_nll(m, seqs);
  std::reverse(seqs.begin(), seqs.end());
  std::swap(seqs[3], seqs[11]);
  EXPECT_EQ(evaluate_heldout_nll(m, seqs), a);
  EXPECT_EQ(m.params().checksum(), before);
  const double lnv = std::log(static_cast<double>(toy().vocab.size()));
  EXPECT_GT(a, 0.9 * lnv);
  EXPECT_LT(a, 1.1 * lnv);
  EXPECT_THROW(evaluate_heldout_nll(m, {}), ContractError);
}

TEST(TsvPairStream, RewindsAcrossEpochs) {
  const auto path = (std::filesystem::temp_directory_path() / "zsp_stream.tsv").string();
  write_parallel_tsv(path, gen_synthetic_corpus(toy().world, 7, {2, 4}, {{"en", "ru"}, {"ru", "en"}}, 10));
  TsvPairStream s(path, toy().vocab.languages());
  ParallelPair p;
  std::size_t n = 0;
  while (s.next(p)) ++n;
  EXPECT_EQ(n, 7u);
  s.rewind(1);
  EXPECT_TRUE(s.next(p));
  TransformerLM m(toy().config(16), 11);
  TrainConfig c;
  c.steps = 6;
  c.batch_size = 4;
  const auto rep = finetune(m, toy().vocab, s, c);
  EXPECT_EQ(rep.train_loss.size(), 6u);
  std::filesystem::remove(path);
}

// The multilingual toy setting: 4 languages, all 12 directions. 2k pairs
// overfit well before 0.9, so the corpus is 20k pairs.
TEST(Finetune, MultilingualToyReachesTargetAccuracy) {
  const Toy& t = toy();
  const auto dirs = all_cross_directions(t.world.spec().languages);
  const auto train = gen_synthetic_corpus(t.world, 20000, {3, 6}, dirs, 11);
  const auto held = clean_sequences(gen_synthetic_corpus(t.world, 200, {3, 6}, dirs, 12), t.vocab);
  TransformerLM m(t.config(48), 7);
  TrainConfig c;
  c.steps = 2500;
  c.batch_size = 32;
  c.adam.learning_rate = 1e-3;
  c.seed = 3;
  finetune(m, t.vocab, train, c);
  const double acc = heldout_accuracy(m, held, [&](TokenId a, TokenId b) { return t.same_concept(a, b); });
  RecordProperty("concept_accuracy", std::to_string(acc));
  EXPECT_GT(acc, 0.9);
}

// Pre-training on monolingual text shortens fine-tuning to a loss threshold.
TEST(Finetune, PretrainedReachesThresholdFaster) {
  const Toy& t = toy();
  const auto langs = t.world.spec().languages;
  const auto mono = gen_synthetic_monolingual(t.world, 4000, {3, 6}, langs, 13);
  const auto pairs = gen_synthetic_corpus(t.world, 4000, {3, 6}, all_cross_directions(langs), 14);
  TrainConfig ft;
  ft.steps = 600;
  ft.batch_size = 16;
  ft.adam.learning_rate = 3e-3;
  ft.seed = 15;
  const double threshold = 2.6;
  auto steps_to = [&](const TrainReport& r) {
    for (std::size_t i = 20; i <= r.train_loss.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = i - 20; j < i; ++j) s += r.train_loss[j].second;
      if (s / 20.0 < threshold) return i;
    }
    return r.train_loss.size() + 1;
  };
  TransformerLM scratch(t.config(), 16);
  TransformerLM pre(t.config(), 16);
  pretrain(pre, t.vocab, mono, pre_cfg(600, 17));
  const std::size_t a = steps_to(finetune(scratch, t.vocab, pairs, ft));
  const std::size_t b = steps_to(finetune(pre, t.vocab, pairs, ft));
  RecordProperty("scratch_steps", std::to_string(a));
  RecordProperty("pretrained_steps", std::to_string(b));
  EXPECT_LT(b, a) << "pretrained " << b << " vs scratch " << a;
}

}  // namespace
}  // namespace zsp
