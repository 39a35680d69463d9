#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "zsp/experiment.hpp"

namespace zsp {
namespace {

Sentence S(const std::string& s) { return split_ws(s); }

TEST(DistinctN, Examples) {
  EXPECT_NEAR(distinct_n({S("a b a b")}, 2), 2.0 / 3.0, 1e-12);
  // pooled over the corpus, so repeats dilute the ratio
  EXPECT_NEAR(distinct_n({S("a b a b"), S("a b a b"), S("a b a b")}, 2), 2.0 / 9.0, 1e-12);
  EXPECT_EQ(distinct_n({S("a b c d e")}, 2), 1.0);
  EXPECT_NEAR(distinct_n({S("a b"), S("b a"), S("a b c")}, 2), 3.0 / 4.0, 1e-12);
  EXPECT_THROW(distinct_n({S("a"), S("b")}, 2), ContractError);
  EXPECT_THROW(distinct_n({}, 2), ContractError);
}

TEST(DistinctN, PermutationInvariant) {
  std::vector<Sentence> s = {S("x y z x"), S("y y"), S("z x y")};
  const double a = distinct_n(s, 2);
  std::reverse(s.begin(), s.end());
  EXPECT_EQ(distinct_n(s, 2), a);
}

TEST(Bleu, HandEnumeratedExample) {
  const double want = std::pow(3.0 / 4.0 * 2.0 / 3.0 * 1.0 / 2.0 * 1.0 / 2.0, 0.25);
  EXPECT_NEAR(bleu(S("a b c d"), {S("a b c e")}), want, 1e-12);
}

TEST(Bleu, IdentityAndDisjoint) {
  EXPECT_NEAR(bleu(S("the cat sat on the mat"), {S("the cat sat on the mat")}), 1.0, 1e-12);
  EXPECT_EQ(bleu(S("p q r"), {S("x y z")}), 0.0);
  EXPECT_NEAR(bleu(S("a b"), {S("a b")}), 1.0, 1e-12);  // empty orders 3 and 4 smooth to 1
  EXPECT_THROW(bleu({}, {S("a")}), ContractError);
  EXPECT_THROW(bleu(S("a"), {}), ContractError);
}

TEST(Bleu, BrevityPenaltyAndClipping) {
  // clipped unigrams: "the" counts at most twice
  const double p1 = 2.0 / 4.0;
  const double want = std::pow(p1 * (1.0 / 4.0) * (1.0 / 3.0) * (1.0 / 2.0), 0.25);  // smoothed empty orders
  EXPECT_NEAR(bleu(S("the the the the"), {S("the cat the mat")}), want, 1e-12);
  // candidate shorter than the closest reference
  const double bp = std::exp(1.0 - 4.0 / 2.0);
  EXPECT_NEAR(bleu(S("a b"), {S("a b c d")}), bp, 1e-12);
  // closest reference length wins over the shortest
  EXPECT_NEAR(bleu(S("a b c"), {S("a"), S("a b c d")}), std::exp(1.0 - 4.0 / 3.0), 1e-12);
  EXPECT_NEAR(bleu(S("a b c"), {S("a"), S("a b c x y z w")}), 1.0, 1e-12);
}

TEST(Bleu, ReferenceOrderDoesNotMatter) {
  const std::vector<Sentence> refs = {S("a b c d e"), S("e d c b a"), S("a c e")};
  std::vector<Sentence> rev(refs.rbegin(), refs.rend());
  EXPECT_EQ(bleu(S("a b c e d"), refs), bleu(S("a b c e d"), rev));
}

TEST(InverseSelfBleu, Examples) {
  EXPECT_EQ(inverse_self_bleu({S("a b c d"), S("a b c d"), S("a b c d")}), 0.0);
  EXPECT_EQ(inverse_self_bleu({S("a b"), S("c d"), S("e f")}), 1.0);
  const std::vector<Sentence> s = {S("a b c d"), S("a b c e"), S("b c d e f")};
  const double brute =
      (bleu(s[0], {s[1], s[2]}) + bleu(s[1], {s[0], s[2]}) + bleu(s[2], {s[0], s[1]})) / 3.0;
  EXPECT_NEAR(inverse_self_bleu(s), 1.0 - brute, 1e-12);
  EXPECT_THROW(inverse_self_bleu({S("a")}), ContractError);
}

TEST(InverseSelfBleu, ReplacingWithDisjointIncreases) {
  std::vector<Sentence> s = {S("a b c"), S("a b c"), S("a b c")};
  const double before = inverse_self_bleu(s);
  s[1] = S("x y z");
  EXPECT_GT(inverse_self_bleu(s), before);
}

EmbeddingTable hand_table() {
  EmbeddingTable t(5);
  t.add("a", {1.0, -2.0, 0.5, 0.0, 3.0});
  t.add("b", {-3.0, 1.0, 0.25, 2.0, -1.0});
  t.add("c", {2.0, 0.5, -1.0, -2.5, 0.0});
  t.add("d", {0.0, 0.0, 4.0, 1.0, -0.5});
  t.add("e", {-1.0, 3.0, 0.0, 0.5, 2.0});
  return t;
}

TEST(VectorExtrema, HandComputed) {
  const auto t = hand_table();
  // extrema of {a, b, c}: dim0 -3 (b), dim1 -2 (a), dim2 -1 (c), dim3 -2.5 (c), dim4 3 (a)
  const std::vector<double> x = {-3.0, -2.0, -1.0, -2.5, 3.0};
  // extrema of {c, d, e}: dim0 2 (c), dim1 3 (e), dim2 4 (d), dim3 -2.5 (c), dim4 2 (e)
  const std::vector<double> y = {2.0, 3.0, 4.0, -2.5, 2.0};
  EXPECT_EQ(*vector_extrema(S("a b c"), t), x);
  EXPECT_EQ(*vector_extrema(S("c d e"), t), y);
  double dot = 0, nx = 0, ny = 0;
  for (int i = 0; i < 5; ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  const double want = dot / std::sqrt(nx * ny);
  EXPECT_NEAR(vector_extrema_relevance(S("a b c"), S("c d e"), t), want, 1e-12);
  EXPECT_NEAR(vector_extrema_relevance(S("c d e"), S("a b c"), t), want, 1e-12);
  EXPECT_NEAR(vector_extrema_relevance(S("a b zz c"), S("c d e"), t), want, 1e-12);  // OOV skipped
}

TEST(VectorExtrema, IdentityOrthogonalAndErrors) {
  EmbeddingTable t(3);
  t.add("x", {1, 0, 0});
  t.add("y", {0, 1, 0});
  EXPECT_NEAR(vector_extrema_relevance(S("x y"), S("x y"), t), 1.0, 1e-12);
  EXPECT_EQ(vector_extrema_relevance(S("x"), S("y"), t), 0.0);
  EXPECT_THROW(vector_extrema_relevance(S("q"), S("x"), t), ContractError);
  EXPECT_THROW(vector_extrema_relevance(S("x"), S("q r"), t), ContractError);
  EXPECT_THROW(t.add("z", {1, 2}), DimensionError);
}

TEST(EmbeddingTable, TextRoundTrip) {
  const auto t = hand_table();
  std::stringstream ss;
  t.write(ss);
  const auto back = EmbeddingTable::read(ss);
  EXPECT_EQ(back.dim(), 5u);
  EXPECT_EQ(back.size(), 5u);
  EXPECT_EQ(*back.find("c"), *t.find("c"));
  std::stringstream bad("a 1 2\nb 1\n");
  EXPECT_THROW(EmbeddingTable::read(bad), ParseError);
}

TEST(EmbeddingTable, FromWorldSharesConceptDirections) {
  SyntheticWorld w{SyntheticLangSpec{}};
  const auto t = EmbeddingTable::from_world(w, 32, 0.05, 1);
  const Sentence en = {w.surface(0, 3, 0), w.surface(0, 7, 1)};
  const Sentence es = {w.surface(1, 3, 1), w.surface(1, 7, 0)};
  const Sentence other = {w.surface(0, 11, 0), w.surface(0, 19, 1)};
  EXPECT_GT(vector_extrema_relevance(en, es, t), 0.8);
  EXPECT_LT(vector_extrema_relevance(en, other, t), vector_extrema_relevance(en, es, t));
}

// Brute-force add-k estimate computed from raw event lists.
double brute_add_k(const std::vector<Sentence>& corpus, std::size_t order, double k, const Sentence& ctx,
                   const std::string& tok) {
  std::set<std::string> V = {"<eos>", "<unk>"};
  for (const auto& s : corpus) V.insert(s.begin(), s.end());
  double c = 0, total = 0;
  for (const auto& s : corpus) {
    Sentence seq(order - 1, "<bos>");
    seq.insert(seq.end(), s.begin(), s.end());
    seq.push_back("<eos>");
    for (std::size_t i = order - 1; i < seq.size(); ++i) {
      if (!std::equal(ctx.begin(), ctx.end(), seq.begin() + static_cast<std::ptrdiff_t>(i - (order - 1)))) continue;
      ++total;
      c += seq[i] == tok;
    }
  }
  return (c + k) / (total + k * static_cast<double>(V.size()));
}

TEST(NGramLM, UnigramClosedForm) {
  const double k = 0.5;
  const NGramLM lm = train_ngram_lm({S("a a b")}, 1, k);
  EXPECT_EQ(lm.event_vocab_size(), 4u);  // a, b, <eos>, <unk>
  EXPECT_NEAR(lm.prob("a", {}), (2 + k) / (4 + 4 * k), 1e-12);
  EXPECT_NEAR(lm.prob("b", {}), (1 + k) / (4 + 4 * k), 1e-12);
  EXPECT_NEAR(lm.prob("<eos>", {}), (1 + k) / (4 + 4 * k), 1e-12);
  EXPECT_NEAR(lm.prob("zzz", {}), k / (4 + 4 * k), 1e-12);
}

TEST(NGramLM, MatchesBruteForceAndNormalizes) {
  const std::vector<Sentence> corpus = {S("a b c a"), S("b c"), S("a a b"), S("c b a c b")};
  for (std::size_t order : {1u, 2u, 3u}) {
    const NGramLM lm(corpus, order, 0.1);
    std::vector<Sentence> contexts = {{}, S("a"), S("b c"), S("c a"), S("q")};
    for (const auto& full : contexts) {
      double sum = 0.0;
      for (const auto& ev : lm.events()) sum += lm.prob(ev, full);
      EXPECT_NEAR(sum, 1.0, 1e-9) << order;
      Sentence ctx;
      for (std::size_t i = 0; i + 1 < order; ++i) {
        const std::size_t back = order - 1 - i;
        ctx.push_back(back <= full.size() ? (lm.events().count(full[full.size() - back]) ? full[full.size() - back] : "<unk>")
                                          : "<bos>");
      }
      for (const std::string tok : {"a", "b", "c", "<eos>"}) {
        EXPECT_NEAR(lm.prob(tok, full), brute_add_k(corpus, order, 0.1, ctx, tok), 1e-9) << order << " " << tok;
      }
    }
  }
  EXPECT_GT(NGramLM(corpus, 3, 0.01).prob("c", S("c c")), 0.0);
  EXPECT_THROW(NGramLM(corpus, 0, 0.1), ContractError);
  EXPECT_THROW(NGramLM({}, 2, 0.1), ContractError);
}

TEST(Fluency, MemorizedCorpusOnlyPaysForFirstTokens) {
  const std::vector<Sentence> corpus = {S("the cat sat on the mat"), S("a dog ran in the park"),
                                        S("birds fly over green hills"), S("my friend reads old books"),
                                        S("rain fell on quiet streets")};
  const NGramLM lm(corpus, 4, 1e-4);
  const double f = fluency_logprob(lm, corpus);
  // every continuation is deterministic; each opening word has probability 1/5
  EXPECT_NEAR(f, 5 * std::log(0.2) / 32.0, 0.01);
  EXPECT_LE(f, 0.0);
  EXPECT_GT(fluency_logprob(NGramLM({corpus[0]}, 4, 1e-4), {corpus[0]}), -0.01);
  std::vector<Sentence> rev(corpus.rbegin(), corpus.rend());
  EXPECT_EQ(fluency_logprob(lm, rev), f);
  EXPECT_LT(fluency_logprob(lm, {S("mat the on sat cat the")}), f);
  EXPECT_THROW(fluency_logprob(lm, {}), ContractError);
}

TEST(Fluency, EventCountIncludesEos) {
  const NGramLM lm({S("a b")}, 1, 1.0);
  // events a, b, eos each seen once; V' = 4
  const double p = 2.0 / 7.0;
  EXPECT_NEAR(fluency_logprob(lm, {S("a b")}), std::log(p), 1e-12);
}

TEST(SemanticPreservation, OracleCases) {
  SyntheticWorld w{SyntheticLangSpec{}};
  Rng rng(3);
  const ConceptSeq c1 = {1, 2, 3}, c2 = {4, 5};
  const std::vector<Sentence> in = {w.render(c1, "en", rng), w.render(c2, "en", rng)};
  EXPECT_EQ(semantic_preservation(in, {{in[0]}, {in[1]}}, "en", w), 1.0);
  EXPECT_EQ(semantic_preservation(in, {{w.render(c1, "es", rng)}, {w.render(c2, "zh", rng)}}, "en", w), 0.0);
  Sentence syn;
  for (std::size_t c : c1) syn.push_back(w.surface(0, c, 1));
  Sentence syn2;
  for (std::size_t c : c1) syn2.push_back(w.surface(0, c, 0));
  EXPECT_EQ(semantic_preservation({in[0]}, {{syn, syn2}}, "en", w), 1.0);
  EXPECT_EQ(semantic_preservation({in[0]}, {{syn, in[1]}}, "en", w), 0.5);
  EXPECT_THROW(semantic_preservation(in, {{in[0]}}, "en", w), ContractError);
}

TEST(LanguagePurity, CountsLexiconMembership) {
  SyntheticWorld w{SyntheticLangSpec{}};
  const Sentence s = {w.surface(0, 1, 0), w.surface(0, 2, 1), w.surface(2, 1, 0), "zzz"};
  EXPECT_EQ(language_purity({s}, "en", w), 0.5);
}

TEST(ScoreOutputs, PerInputAggregation) {
  EmbeddingTable t(2);
  t.add("a", {1, 0});
  t.add("b", {0, 1});
  const NGramLM lm({S("a b"), S("b a")}, 2, 0.1);
  const std::vector<SweepItem> items = {{S("a b"), "en", ""}, {S("b a"), "en", ""}};
  SystemOutputs outs;
  outs.outputs = {{S("a b"), S("a a")}, {S("b a"), {}}};
  SamplerConfig cfg;
  const auto r = score_outputs("direct", cfg, items, outs, 2, {&t, &lm, nullptr});
  const double rel = (1.0 + std::sqrt(0.5) + 1.0 + 0.0) / 4.0;
  EXPECT_NEAR(r.relevance, rel, 1e-12);
  EXPECT_NEAR(r.distinct2, (1.0 + 1.0) / 2.0, 1e-12);
  EXPECT_NEAR(r.inverse_self_bleu, 1.0 - (bleu(S("a b"), {S("a a")}) + bleu(S("a a"), {S("a b")})) / 2.0, 1e-12);
  EXPECT_FALSE(r.semantic_preservation);
  EXPECT_NE(r.tsv_row().find("\tNA"), std::string::npos);
}

}  // namespace
}  // namespace zsp
