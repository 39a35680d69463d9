#include <gtest/gtest.h>

#include <sstream>

#include "zsp/vocab.hpp"

namespace zsp {
namespace {

TEST(BuildVocab, FrequencyOrderAfterSpecialsAndTags) {
  const Vocabulary v = build_vocab({"a b", "a"}, {"en"}, 1);
  ASSERT_EQ(v.size(), 8u);
  EXPECT_EQ(v.token(0), "<pad>");
  EXPECT_EQ(v.token(1), "<unk>");
  EXPECT_EQ(v.token(2), "<bos>");
  EXPECT_EQ(v.token(3), "<eos>");
  EXPECT_EQ(v.token(4), "<delim>");
  EXPECT_EQ(v.token(5), "<en>");
  EXPECT_EQ(v.lang_tag("en"), 5);
  EXPECT_LT(v.id("a"), v.id("b"));
  EXPECT_EQ(v.id("a"), 6);
  EXPECT_EQ(v.first_content_id(), 6);
}

TEST(BuildVocab, MinCountDropsEverything) {
  const Vocabulary v = build_vocab({"a b", "a"}, {"en"}, 3);
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.content_size(), 0u);
}

TEST(BuildVocab, Errors) {
  EXPECT_THROW(build_vocab({"a"}, {"en", "en"}, 1), ContractError);
  EXPECT_THROW(build_vocab({}, {"en"}, 1), ContractError);
  EXPECT_THROW(build_vocab({"a"}, {}, 1), ContractError);
  EXPECT_THROW(build_vocab({"a"}, {"en"}, 0), ContractError);
}

TEST(BuildVocab, TieBreakIsLexicographic) {
  const Vocabulary v = build_vocab({"z y x", "y z x"}, {"en", "fr"}, 1);
  EXPECT_EQ(v.token(v.first_content_id()), "x");
  EXPECT_EQ(v.token(v.first_content_id() + 1), "y");
  EXPECT_EQ(v.token(v.first_content_id() + 2), "z");
}

TEST(BuildVocab, Deterministic) {
  std::vector<std::string> lines = {"the cat sat", "on the mat", "the dog", "mat cat"};
  const Vocabulary a = build_vocab(lines, {"en", "fr"}, 1);
  std::reverse(lines.begin(), lines.end());
  const Vocabulary b = build_vocab(lines, {"en", "fr"}, 1);
  EXPECT_TRUE(a == b);
}

TEST(Vocabulary, MutualInverseAndReservedLowIds) {
  const Vocabulary v = build_vocab({"q w e r t y", "q w"}, {"en", "es", "zh"}, 1);
  for (TokenId i = 0; i < static_cast<TokenId>(v.size()); ++i) EXPECT_EQ(v.id(v.token(i)), i);
  std::set<TokenId> control;
  for (auto s : kSpecialTokens) control.insert(v.id(s));
  for (const auto& l : v.languages()) control.insert(v.lang_tag(l));
  EXPECT_EQ(control.size(), 8u);
  EXPECT_EQ(*control.rbegin(), v.first_content_id() - 1);
}

TEST(Encode, CatSatOnTheMat) {
  const Vocabulary v = build_vocab({"cat sat on the mat"}, {"en"}, 1);
  EXPECT_EQ(encode(v, "cat sat on the mat"),
            (std::vector<TokenId>{v.id("cat"), v.id("sat"), v.id("on"), v.id("the"), v.id("mat")}));
  EXPECT_TRUE(encode(v, "").empty());
  EXPECT_EQ(encode(v, "zebra"), std::vector<TokenId>{v.special().unk});
}

TEST(Decode, StripsControlByDefault) {
  const Vocabulary v = build_vocab({"a"}, {"en"}, 1);
  const std::vector<TokenId> ids = {v.special().bos, v.id("a"), v.special().eos};
  EXPECT_EQ(decode(v, ids), "a");
  EXPECT_EQ(decode(v, std::vector<TokenId>{v.special().unk}, false), "<unk>");
  EXPECT_EQ(decode(v, std::vector<TokenId>{v.lang_tag("en"), v.id("a")}), "a");
  EXPECT_THROW(decode(v, std::vector<TokenId>{static_cast<TokenId>(v.size())}), IndexError);
  EXPECT_THROW(decode(v, std::vector<TokenId>{-1}), IndexError);
}

TEST(Decode, RoundTripsInVocabularyText) {
  const std::vector<std::string> lines = {"the quick brown fox", "jumps over the lazy dog"};
  const Vocabulary v = build_vocab(lines, {"en"}, 1);
  Rng rng(5);
  const auto toks = v.content_tokens();
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> s;
    const std::size_t n = 1 + rng.below(8);
    for (std::size_t i = 0; i < n; ++i) s.push_back(toks[rng.below(toks.size())]);
    const std::string text = join(s);
    EXPECT_EQ(decode(v, encode(v, text)), text);
  }
}

TEST(Vocabulary, FileRoundTrip) {
  const Vocabulary v = build_vocab({"b a c", "a"}, {"en", "zh"}, 1);
  std::stringstream ss;
  v.write(ss);
  EXPECT_EQ(ss.str(), "<pad>\n<unk>\n<bos>\n<eos>\n<delim>\n<en>\n<zh>\na\nb\nc\n");
  const Vocabulary w = Vocabulary::read(ss);
  EXPECT_TRUE(v == w);
  EXPECT_EQ(w.languages(), (std::vector<std::string>{"en", "zh"}));
}

TEST(Vocabulary, ReadRejectsMalformedFiles) {
  std::stringstream missing("<pad>\n<unk>\n");
  EXPECT_THROW(Vocabulary::read(missing), ParseError);
  std::stringstream wrong("<pad>\n<bos>\n<unk>\n<eos>\n<delim>\n<en>\n");
  EXPECT_THROW(Vocabulary::read(wrong), ParseError);
  std::stringstream spaced("<pad>\n<unk>\n<bos>\n<eos>\n<delim>\n<en>\na b\n");
  EXPECT_THROW(Vocabulary::read(spaced), ParseError);
  std::stringstream dup("<pad>\n<unk>\n<bos>\n<eos>\n<delim>\n<en>\na\na\n");
  EXPECT_THROW(Vocabulary::read(dup), ParseError);
}

TEST(Vocabulary, ReservedFormsAreNotContent) {
  const Vocabulary v = build_vocab({"<en> a <eos>"}, {"en"}, 1);
  EXPECT_EQ(v.content_size(), 1u);
  EXPECT_THROW(Vocabulary({"en"}, {"<x>"}), ContractError);
  EXPECT_THROW(Vocabulary({"e n"}, {"a"}), ContractError);
}

TEST(Vocabulary, CasingPreserved) {
  const Vocabulary v = build_vocab({"Cat cat"}, {"en"}, 1);
  EXPECT_NE(v.id("Cat"), v.id("cat"));
  EXPECT_EQ(decode(v, encode(v, "Cat cat")), "Cat cat");
}

TEST(Vocabulary, UnknownLanguage) {
  const Vocabulary v = build_vocab({"a"}, {"en"}, 1);
  EXPECT_THROW(v.lang_tag("fr"), ContractError);
  EXPECT_TRUE(v.has_language("en"));
  EXPECT_FALSE(v.has_language("fr"));
}

}  // namespace
}  // namespace zsp
