#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "zsp/checkpoint.hpp"
#include "zsp/gradcheck.hpp"
#include "zsp/synthetic.hpp"
#include "zsp/training.hpp"

namespace zsp {
namespace {

ModelConfig tiny_config(std::size_t vocab = 20, std::size_t langs = 2) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.d_lang = 4;
  c.max_len = 12;
  c.vocab_size = vocab;
  c.n_languages = langs;
  return c;
}

struct Inputs {
  std::vector<TokenId> ids;
  std::vector<std::size_t> lang;
};

Inputs random_inputs(std::size_t n, std::size_t vocab, std::size_t langs, Rng& rng) {
  Inputs in;
  for (std::size_t i = 0; i < n; ++i) {
    in.ids.push_back(static_cast<TokenId>(rng.below(vocab)));
    in.lang.push_back(rng.below(langs));
  }
  return in;
}

std::vector<double> logits_of(const TransformerLM& m, const Inputs& in, std::size_t batch, std::size_t len) {
  const Tensor t = m.forward(in.ids, in.lang, batch, len);
  return {t.values().begin(), t.values().end()};
}

TEST(Forward, Shape) {
  const TransformerLM m(tiny_config(), 1);
  Rng rng(2);
  const auto in = random_inputs(14, 20, 2, rng);
  const Tensor t = m.forward(in.ids, in.lang, 2, 7);
  EXPECT_EQ(t.shape(), (Shape{2, 7, 20}));
}

TEST(Forward, ParameterShapesFollowConfig) {
  const TransformerLM m(tiny_config(), 1);
  EXPECT_EQ(m.param("tok_emb").shape(), (Shape{20, 16}));
  EXPECT_EQ(m.param("pos_emb").shape(), (Shape{12, 16}));
  EXPECT_EQ(m.param("lang_emb").shape(), (Shape{2, 4}));
  EXPECT_EQ(m.param("out_proj").shape(), (Shape{20, 20}));
  EXPECT_EQ(m.param("layer1.ffn.w1").shape(), (Shape{16, 32}));
}

TEST(Forward, CausalInvarianceIsExact) {
  const TransformerLM m(tiny_config(), 3);
  Rng rng(4);
  const std::size_t T = 10;
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_inputs(2 * T, 20, 2, rng);
    const auto la = logits_of(m, a, 2, T);
    const std::size_t t = rng.below(T - 1);
    auto b = a;
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t j = t + 1; j < T; ++j) {
        b.ids[r * T + j] = static_cast<TokenId>(rng.below(20));
        b.lang[r * T + j] = rng.below(2);
      }
    const auto lb = logits_of(m, b, 2, T);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t j = 0; j <= t; ++j)
        for (std::size_t v = 0; v < 20; ++v) ASSERT_EQ(la[(r * T + j) * 20 + v], lb[(r * T + j) * 20 + v]);
  }
}

TEST(Forward, LanguageEmbeddingConditionsPredictions) {
  const TransformerLM m(tiny_config(), 5);
  Rng rng(6);
  auto a = random_inputs(6, 20, 2, rng);
  for (auto& l : a.lang) l = 0;
  auto b = a;
  b.lang[3] = 1;
  const auto la = logits_of(m, a, 1, 6), lb = logits_of(m, b, 1, 6);
  for (std::size_t t = 0; t < 6; ++t) {
    double diff = 0.0;
    for (std::size_t v = 0; v < 20; ++v) diff += std::abs(la[t * 20 + v] - lb[t * 20 + v]);
    if (t == 3)
      EXPECT_GT(diff, 1e-6);
    else
      EXPECT_EQ(diff, 0.0) << t;
  }
}

TEST(Forward, ZeroLangWidthDegeneratesToPlainOutput) {
  ModelConfig with = tiny_config();
  ModelConfig without = with;
  without.d_lang = 0;
  TransformerLM a(with, 7);
  TransformerLM b(without, 8);
  EXPECT_FALSE(b.params().contains("lang_emb"));
  EXPECT_EQ(b.param("out_proj").shape(), (Shape{16, 20}));
  // zeroed language vectors contribute nothing, so only the first d_model rows of W_o matter
  for (double& x : a.params().at("lang_emb").mutable_values()) x = 0.0;
  for (auto& e : b.params().entries()) {
    auto dst = e.tensor.mutable_values();
    const auto src = a.param(e.name).values();
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
  }
  Rng rng(9);
  const auto in = random_inputs(16, 20, 2, rng);
  const auto la = logits_of(a, in, 2, 8), lb = logits_of(b, in, 2, 8);
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_NEAR(la[i], lb[i], 1e-12);
  auto other = in;
  for (auto& l : other.lang) l = 1 - l;
  EXPECT_EQ(logits_of(b, other, 2, 8), lb);
}

TEST(Forward, SoftmaxOfLogitsIsNormalized) {
  const TransformerLM m(tiny_config(), 10);
  Rng rng(11);
  const auto in = random_inputs(12, 20, 2, rng);
  const Tensor p = softmax(m.forward_flat(in.ids, in.lang, 1, 12), 1);
  for (std::size_t r = 0; r < 12; ++r) {
    double s = 0.0;
    for (std::size_t v = 0; v < 20; ++v) s += p.values()[r * 20 + v];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Forward, Errors) {
  const TransformerLM m(tiny_config(), 1);
  std::vector<TokenId> ids(13, 5);
  std::vector<std::size_t> lang(13, 0);
  EXPECT_THROW(m.forward(ids, lang, 1, 13), LengthError);
  lang.assign(4, 2);
  ids.assign(4, 5);
  EXPECT_THROW(m.forward(ids, lang, 1, 4), IndexError);
  ModelConfig bad = tiny_config();
  bad.n_heads = 3;
  EXPECT_THROW(TransformerLM(bad, 1), ContractError);
}

TEST(Forward, Deterministic) {
  const TransformerLM a(tiny_config(), 12), b(tiny_config(), 12);
  Rng rng(13);
  const auto in = random_inputs(8, 20, 2, rng);
  EXPECT_EQ(logits_of(a, in, 1, 8), logits_of(b, in, 1, 8));
  EXPECT_EQ(logits_of(a, in, 1, 8), logits_of(a, in, 1, 8));
}

TEST(Forward, InputTagAblationReplacesTagsWithPad) {
  ModelConfig c = tiny_config();
  c.input_lang_tags = false;
  const TransformerLM m(c, 14);
  Inputs a{{2, 5, 9, 10, 4, 6, 11}, {0, 0, 0, 0, 1, 1, 1}};
  Inputs b = a;
  b.ids[1] = 6;   // <es> instead of <en>
  Inputs p = a;
  p.ids[1] = 0;
  EXPECT_EQ(logits_of(m, a, 1, 7), logits_of(m, b, 1, 7));
  EXPECT_EQ(logits_of(m, a, 1, 7), logits_of(m, p, 1, 7));
}

TEST(IncrementalDecoder, MatchesFullForward) {
  const TransformerLM m(tiny_config(), 15);
  Rng rng(16);
  for (int trial = 0; trial < 5; ++trial) {
    const auto in = random_inputs(12, 20, 2, rng);
    const auto full = logits_of(m, in, 1, 12);
    IncrementalDecoder dec(m);
    for (std::size_t t = 0; t < 12; ++t) {
      const auto step = dec.step(in.ids[t], in.lang[t]);
      ASSERT_EQ(step.size(), 20u);
      for (std::size_t v = 0; v < 20; ++v) EXPECT_NEAR(step[v], full[t * 20 + v], 1e-9);
    }
    EXPECT_EQ(dec.position(), 12u);
    EXPECT_THROW(dec.step(3, 0), LengthError);
  }
}

TEST(Loss, GradientCheckTwoLayersD16) {
  TransformerLM m(tiny_config(13), 17);
  Rng rng(18);
  Batch b;
  b.batch = 2;
  b.seq_len = 6;
  for (std::size_t i = 0; i < 12; ++i) {
    b.ids.push_back(static_cast<TokenId>(rng.below(13)));
    b.lang.push_back(rng.below(2));
    b.targets.push_back(static_cast<TokenId>(rng.below(13)));
    b.mask.push_back(i % 4 != 0);
  }
  GradCheckOptions opt;
  opt.coordinates = 300;
  opt.seed = 19;
  const auto rep = gradient_check([&] { return m.batch_loss(b); }, m.params(), 1e-4, opt);
  EXPECT_TRUE(rep.passed) << rep.summary();
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

TEST(Loss, RandomInitIsNearLogV) {
  SyntheticWorld w{SyntheticLangSpec{}};
  std::vector<std::string> lines;
  for (const auto& s : gen_synthetic_monolingual(w, 400, {3, 6}, w.spec().languages, 1)) lines.push_back(join(s.tokens));
  const Vocabulary v = build_vocab(lines, w.spec().languages, 1);
  ModelConfig c = tiny_config(v.size(), v.num_languages());
  c.max_len = 16;
  const TransformerLM m(c, 20);
  const auto seqs = clean_sequences(gen_synthetic_monolingual(w, 50, {3, 6}, w.spec().languages, 2), v);
  const double expected = std::log(static_cast<double>(v.size()));
  for (const auto& s : seqs) {
    const double loss = sequence_loss(m, s).item();
    EXPECT_GT(loss, 0.9 * expected);
    EXPECT_LT(loss, 1.1 * expected);
  }
}

TEST(Loss, DuplicatingBatchKeepsMean) {
  const Vocabulary v = build_vocab({"a b c d e f g"}, {"en", "fr"}, 1);
  const TransformerLM m(tiny_config(v.size(), 2), 21);
  const auto s1 = assemble_monolingual(encode(v, "a b c"), "en", v);
  const auto s2 = assemble_monolingual(encode(v, "d e f g a"), "fr", v);
  const TrainingSequence* one[] = {&s1, &s2};
  const TrainingSequence* two[] = {&s1, &s2, &s1, &s2};
  EXPECT_NEAR(m.batch_loss(make_batch(one, 0)).item(), m.batch_loss(make_batch(two, 0)).item(), 1e-12);
}

TEST(Loss, EmptyMaskIsAnError) {
  const Vocabulary v = build_vocab({"a b"}, {"en"}, 1);
  const TransformerLM m(tiny_config(v.size(), 1), 22);
  auto s = assemble_monolingual(encode(v, "a b"), "en", v);
  std::fill(s.loss_mask.begin(), s.loss_mask.end(), 0);
  EXPECT_THROW(sequence_loss(m, s), Error);
}

TEST(MakeBatch, ShiftsAndPads) {
  const Vocabulary v = build_vocab({"a b c"}, {"en", "fr"}, 1);
  ParallelPair p{"en", "fr", {"a"}, {"b", "c"}};
  Rng rng(0);
  const auto s = assemble_bilingual(p, std::nullopt, v, rng);
  const auto m = assemble_monolingual(encode(v, "a"), "en", v);
  const TrainingSequence* seqs[] = {&s, &m};
  const Batch b = make_batch(seqs, 0);
  EXPECT_EQ(b.seq_len, s.size() - 1);
  for (std::size_t t = 0; t < b.seq_len; ++t) {
    EXPECT_EQ(b.ids[t], s.ids[t]);
    EXPECT_EQ(b.targets[t], s.targets[t + 1]);
    EXPECT_EQ(b.lang[t], s.lang_per_position[t + 1]);
    EXPECT_EQ(b.mask[t], s.loss_mask[t + 1]);
  }
  for (std::size_t t = m.size() - 1; t < b.seq_len; ++t) {
    EXPECT_EQ(b.ids[b.seq_len + t], 0);
    EXPECT_EQ(b.mask[b.seq_len + t], 0);
  }
}

TEST(Training, OverfitsSmallCorpus) {
  SyntheticWorld w{SyntheticLangSpec{}};
  const auto sents = gen_synthetic_monolingual(w, 50, {3, 6}, {"en"}, 3);
  std::vector<std::string> lines;
  for (const auto& s : sents) lines.push_back(join(s.tokens));
  const Vocabulary v = build_vocab(lines, {"en"}, 1);
  ModelConfig c = tiny_config(v.size(), 1);
  c.d_model = 32;
  c.d_ff = 64;
  TransformerLM m(c, 23);
  TrainConfig tc;
  tc.phase = Phase::pretrain;
  tc.steps = 200;
  tc.batch_size = 10;
  tc.adam.learning_rate = 3e-3;
  tc.seed = 4;
  const auto rep = pretrain(m, v, sents, tc);
  EXPECT_LT(rep.tail_loss(10), 0.5 * rep.initial_loss()) << rep.initial_loss() << " -> " << rep.tail_loss(10);
}

std::string checkpoint_bytes(TransformerLM& m, const Vocabulary* v = nullptr) {
  narrow_to_float32(m);
  return serialize_checkpoint(m, v);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TransformerLM m(tiny_config(), 24);
  const std::string bytes = checkpoint_bytes(m);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.model.config(), m.config());
  EXPECT_FALSE(back.vocab);
  EXPECT_EQ(back.model.params().checksum(), m.params().checksum());
  Rng rng(25);
  const auto in = random_inputs(10, 20, 2, rng);
  EXPECT_EQ(logits_of(m, in, 1, 10), logits_of(back.model, in, 1, 10));
  EXPECT_EQ(serialize_checkpoint(back.model), bytes);
}

TEST(Checkpoint, FileRoundTripWithVocabulary) {
  const Vocabulary v = build_vocab({"x y z w"}, {"en", "es"}, 1);
  TransformerLM m(tiny_config(v.size(), 2), 26);
  narrow_to_float32(m);
  const std::string path = (std::filesystem::temp_directory_path() / "zsp_model_ckpt.bin").string();
  save_checkpoint(m, path, &v);
  const auto back = load_checkpoint_bundle(path);
  ASSERT_TRUE(back.vocab);
  EXPECT_TRUE(*back.vocab == v);
  EXPECT_EQ(load_checkpoint(path).params().checksum(), m.params().checksum());
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), IoError);
  const Vocabulary wrong = build_vocab({"x"}, {"en"}, 1);
  EXPECT_THROW(serialize_checkpoint(m, &wrong), ContractError);
}

TEST(Checkpoint, TruncationIsIntegrityError) {
  TransformerLM m(tiny_config(), 27);
  const std::string bytes = checkpoint_bytes(m);
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{19}, std::size_t{100}, bytes.size() - 1})
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, cut)), CheckpointIntegrityError) << cut;
  std::string flipped = bytes;
  flipped.back() ^= 0x40;
  EXPECT_THROW(deserialize_checkpoint(flipped), CheckpointIntegrityError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), CheckpointIntegrityError);
}

TEST(Checkpoint, VersionMismatch) {
  TransformerLM m(tiny_config(), 28);
  std::string bytes = checkpoint_bytes(m);
  bytes[8] = 2;
  EXPECT_THROW(deserialize_checkpoint(bytes), CheckpointVersionError);
}

TEST(Checkpoint, ConfigTensorMismatchIsShapeError) {
  TransformerLM m(tiny_config(), 29);
  std::string bytes = checkpoint_bytes(m);
  const auto pos = bytes.find("d_ff = 32\n");
  ASSERT_NE(pos, std::string::npos);
  bytes.replace(pos, 10, "d_ff = 48\n");
  EXPECT_THROW(deserialize_checkpoint(bytes), CheckpointShapeError);
  std::string heads = checkpoint_bytes(m);
  heads.replace(heads.find("n_heads = 2\n"), 12, "n_heads = 3\n");
  EXPECT_THROW(deserialize_checkpoint(heads), CheckpointShapeError);
}

}  // namespace
}  // namespace zsp
