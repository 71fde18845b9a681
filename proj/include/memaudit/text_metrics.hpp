#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace memaudit {

enum class TokenizerMode { whitespace, whitespace_lowercased };

// Lowercased whitespace tokens are what every metric in the toolkit uses
// unless a caller asks otherwise.
inline constexpr TokenizerMode kDefaultTokenizer =
    TokenizerMode::whitespace_lowercased;

std::string_view to_string(TokenizerMode mode);
TokenizerMode tokenizer_mode_from_string(std::string_view name);

// A whitespace-split token sequence. Tokens are never empty.
struct TokenSeq {
  std::vector<std::string> tokens;
  TokenizerMode mode = kDefaultTokenizer;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
  const std::string& operator[](std::size_t i) const { return tokens[i]; }

  friend bool operator==(const TokenSeq& a, const TokenSeq& b) {
    return a.tokens == b.tokens;
  }
};

// Splits on runs of ASCII whitespace. Lowercasing is ASCII-only; bytes
// outside the ASCII range pass through untouched.
TokenSeq tokenize(std::string_view text, TokenizerMode mode = kDefaultTokenizer);

// Byte offsets [begin, end) of every token in `text`, in order.
std::vector<std::pair<std::size_t, std::size_t>> token_spans(
    std::string_view text);

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b);

// Balanced (beta = 1) F-measure of LCS precision and recall. 0 when either
// side is empty.
double rouge_l(const TokenSeq& candidate, const TokenSeq& reference);

// Convenience overload that tokenizes both strings with the default mode.
double rouge_l(std::string_view candidate, std::string_view reference);

// Token-level Levenshtein distance over max(|a|, |b|).
double normalized_edit_distance(const TokenSeq& a, const TokenSeq& b);

// cosine is unset when either vector is all zeros, pearson when either is
// constant (which includes single-entry vectors).
struct VectorStats {
  std::optional<double> cosine;
  double l2 = 0.0;
  std::optional<double> pearson;
};

// Throws ValidationError on length mismatch or empty input.
VectorStats score_vector_stats(std::span<const double> x,
                               std::span<const double> y);

struct NgramCount {
  std::vector<std::string> ngram;
  std::size_t count = 0;

  friend bool operator==(const NgramCount&, const NgramCount&) = default;
};

// For each n in [n_min, n_max] the k most frequent n-grams, ordered by
// descending count then lexicographically. Output is grouped by ascending n.
std::vector<NgramCount> top_ngrams(std::span<const TokenSeq> prompts,
                                   std::size_t n_min, std::size_t n_max,
                                   std::size_t k);

}  // namespace memaudit
