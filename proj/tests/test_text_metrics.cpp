#include <gtest/gtest.h>

#include <cmath>

#include "memaudit/error.hpp"
#include "memaudit/text_metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace memaudit;
using testsupport::random_tokens;

namespace {

TokenSeq seq(std::vector<std::string> t) { return TokenSeq{std::move(t), TokenizerMode::whitespace}; }

}  // namespace

TEST(Tokenize, SplitsOnAsciiWhitespaceAndLowercases) {
  auto t = tokenize("  Hello\tWORLD\n foo  ");
  EXPECT_EQ(t.tokens, (std::vector<std::string>{"hello", "world", "foo"}));
  auto raw = tokenize("Hello World", TokenizerMode::whitespace);
  EXPECT_EQ(raw.tokens, (std::vector<std::string>{"Hello", "World"}));
  EXPECT_TRUE(tokenize("   \n ").empty());
}

TEST(Tokenize, LeavesNonAsciiBytesAlone) {
  auto t = tokenize("Ärger ÉCOLE");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0], "\xC3\x84rger");
  EXPECT_EQ(t[1], "\xC3\x89" "cole");
}

TEST(Tokenize, SpansCoverTokens) {
  const std::string text = " ab  c\td ";
  auto spans = token_spans(text);
  ASSERT_EQ(spans.size(), 3u);
  EXPECT_EQ(text.substr(spans[0].first, spans[0].second - spans[0].first), "ab");
  EXPECT_EQ(text.substr(spans[2].first, spans[2].second - spans[2].first), "d");
}

TEST(Tokenize, ModeRoundTrip) {
  for (auto m : {TokenizerMode::whitespace, TokenizerMode::whitespace_lowercased})
    EXPECT_EQ(tokenizer_mode_from_string(to_string(m)), m);
  EXPECT_THROW(tokenizer_mode_from_string("bpe"), ValidationError);
}

TEST(Lcs, KnownValues) {
  EXPECT_EQ(lcs_length(seq({"a", "b", "c", "d"}), seq({"a", "c", "d"})), 3u);
  EXPECT_EQ(lcs_length(seq({}), seq({"a"})), 0u);
  EXPECT_EQ(lcs_length(seq({"x"}), seq({"y"})), 0u);
}

TEST(RougeL, KnownValues) {
  // lcs 3, P = 3/4, R = 3/3 -> F = 6/7
  EXPECT_NEAR(rouge_l(seq({"a", "b", "c", "d"}), seq({"a", "c", "d"})), 6.0 / 7.0, 1e-12);
  EXPECT_EQ(rouge_l(seq({}), seq({"a"})), 0.0);
  EXPECT_EQ(rouge_l(seq({"a"}), seq({})), 0.0);
  EXPECT_EQ(rouge_l("The cat", "the CAT"), 1.0);
}

TEST(RougeL, MatchesOracleOnRandomPairs) {
  Rng rng(1234);
  for (int i = 0; i < 500; ++i) {
    auto a = random_tokens(rng, uniform_index(rng, 31), 6);
    auto b = random_tokens(rng, uniform_index(rng, 31), 6);
    EXPECT_EQ(lcs_length(seq(a), seq(b)), oracle::lcs(a, b));
    EXPECT_NEAR(rouge_l(seq(a), seq(b)), oracle::rouge_l(a, b), 1e-12);
  }
}

// Invariants: symmetry, bounds, identity.
TEST(RougeL, Properties) {
  Rng rng(99);
  for (int i = 0; i < 300; ++i) {
    auto a = seq(random_tokens(rng, 1 + uniform_index(rng, 40), 8));
    auto b = seq(random_tokens(rng, 1 + uniform_index(rng, 40), 8));
    const double ab = rouge_l(a, b);
    EXPECT_DOUBLE_EQ(ab, rouge_l(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_DOUBLE_EQ(rouge_l(a, a), 1.0);
    EXPECT_LE(lcs_length(a, b), std::min(a.size(), b.size()));
  }
}

TEST(EditDistance, MatchesOracleAndIsNormalized) {
  Rng rng(5);
  for (int i = 0; i < 300; ++i) {
    auto a = random_tokens(rng, uniform_index(rng, 20), 5);
    auto b = random_tokens(rng, uniform_index(rng, 20), 5);
    const double d = normalized_edit_distance(seq(a), seq(b));
    const auto longest = std::max(a.size(), b.size());
    const double expected =
        longest == 0 ? 0.0 : static_cast<double>(oracle::edit_distance(a, b)) / static_cast<double>(longest);
    EXPECT_NEAR(d, expected, 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(VectorStats, ClosedForms) {
  const std::vector<double> e1{1, 0}, e2{0, 1};
  auto s = score_vector_stats(e1, e2);
  EXPECT_NEAR(*s.cosine, 0.0, 1e-12);

  const std::vector<double> x{1, 2, 3, 4}, y{3, 5, 7, 9};
  EXPECT_NEAR(*score_vector_stats(x, y).pearson, 1.0, 1e-12);

  const std::vector<double> a{0, 0}, b{3, 4};
  auto t = score_vector_stats(a, b);
  EXPECT_NEAR(t.l2, 5.0, 1e-12);
  EXPECT_FALSE(t.cosine.has_value());
  EXPECT_FALSE(t.pearson.has_value());
}

TEST(VectorStats, RejectsBadInput) {
  const std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(score_vector_stats(a, b), ValidationError);
  EXPECT_THROW(score_vector_stats(std::vector<double>{}, std::vector<double>{}), ValidationError);
}

TEST(VectorStats, Properties) {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x, y;
    const auto n = 2 + uniform_index(rng, 30);
    for (std::size_t j = 0; j < n; ++j) {
      x.push_back(uniform01(rng) * 2 - 1);
      y.push_back(uniform01(rng) * 2 - 1);
    }
    auto s = score_vector_stats(x, y);
    EXPECT_LE(std::abs(*s.cosine), 1.0 + 1e-12);
    EXPECT_LE(std::abs(*s.pearson), 1.0 + 1e-12);
    EXPECT_NEAR(*score_vector_stats(x, x).cosine, 1.0, 1e-12);
    EXPECT_NEAR(score_vector_stats(x, x).l2, 0.0, 1e-12);
  }
}

TEST(TopNgrams, MatchesOracle) {
  Rng rng(77);
  std::vector<TokenSeq> prompts;
  std::vector<oracle::Tokens> raw;
  for (int i = 0; i < 100; ++i) {
    raw.push_back(random_tokens(rng, 3 + uniform_index(rng, 15), 7));
    prompts.push_back(seq(raw.back()));
  }
  auto got = top_ngrams(prompts, 1, 4, 12);
  auto want = oracle::top_ngrams(raw, 1, 4, 12);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].ngram, want[i].first) << "entry " << i;
    EXPECT_EQ(got[i].count, want[i].second) << "entry " << i;
  }
}

TEST(TopNgrams, RejectsBadRange) {
  std::vector<TokenSeq> p{seq({"a"})};
  EXPECT_THROW(top_ngrams(p, 0, 2, 3), ValidationError);
  EXPECT_THROW(top_ngrams(p, 3, 2, 3), ValidationError);
}
