#include "memaudit/text_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "memaudit/error.hpp"

namespace memaudit {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' ||
         c == '\r';
}

char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace

std::string_view to_string(TokenizerMode mode) {
  switch (mode) {
    case TokenizerMode::whitespace:
      return "whitespace";
    case TokenizerMode::whitespace_lowercased:
      return "whitespace_lowercased";
  }
  return "whitespace_lowercased";
}

TokenizerMode tokenizer_mode_from_string(std::string_view name) {
  if (name == "whitespace") return TokenizerMode::whitespace;
  if (name == "whitespace_lowercased")
    return TokenizerMode::whitespace_lowercased;
  throw ValidationError("unknown tokenizer mode '" + std::string(name) + "'");
}

std::vector<std::pair<std::size_t, std::size_t>> token_spans(
    std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && is_space(text[i])) ++i;
    if (i == n) break;
    const std::size_t begin = i;
    while (i < n && !is_space(text[i])) ++i;
    spans.emplace_back(begin, i);
  }
  return spans;
}

TokenSeq tokenize(std::string_view text, TokenizerMode mode) {
  TokenSeq seq;
  seq.mode = mode;
  for (auto [begin, end] : token_spans(text)) {
    std::string tok(text.substr(begin, end - begin));
    if (mode == TokenizerMode::whitespace_lowercased)
      std::transform(tok.begin(), tok.end(), tok.begin(), ascii_lower);
    seq.tokens.push_back(std::move(tok));
  }
  return seq;
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  // Two-row DP with the shorter sequence along the row.
  const TokenSeq& outer = a.size() >= b.size() ? a : b;
  const TokenSeq& inner = a.size() >= b.size() ? b : a;
  if (inner.empty()) return 0;

  std::vector<std::size_t> prev(inner.size() + 1, 0);
  std::vector<std::size_t> cur(inner.size() + 1, 0);
  for (std::size_t i = 1; i <= outer.size(); ++i) {
    for (std::size_t j = 1; j <= inner.size(); ++j) {
      if (outer[i - 1] == inner[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[inner.size()];
}

double rouge_l(const TokenSeq& candidate, const TokenSeq& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(candidate.size());
  const double recall = lcs / static_cast<double>(reference.size());
  return 2.0 * precision * recall / (precision + recall);
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(tokenize(candidate), tokenize(reference));
}

double normalized_edit_distance(const TokenSeq& a, const TokenSeq& b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 0.0;

  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[b.size()]) / static_cast<double>(longest);
}

VectorStats score_vector_stats(std::span<const double> x,
                               std::span<const double> y) {
  if (x.size() != y.size())
    throw ValidationError("score vectors differ in length (" +
                          std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()) + ")");
  if (x.empty()) throw ValidationError("score vectors are empty");

  const auto n = static_cast<double>(x.size());
  double dot = 0, xx = 0, yy = 0, sq = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
    sq += (x[i] - y[i]) * (x[i] - y[i]);
    sx += x[i];
    sy += y[i];
  }

  const double mx = sx / n;
  const double my = sy / n;
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (x[i] - mx) * (y[i] - my);
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
  }

  VectorStats stats;
  if (xx > 0.0 && yy > 0.0) stats.cosine = dot / (std::sqrt(xx) * std::sqrt(yy));
  stats.l2 = std::sqrt(sq);
  if (vx > 0.0 && vy > 0.0) stats.pearson = cov / (std::sqrt(vx) * std::sqrt(vy));
  return stats;
}

std::vector<NgramCount> top_ngrams(std::span<const TokenSeq> prompts,
                                   std::size_t n_min, std::size_t n_max,
                                   std::size_t k) {
  if (n_min < 1 || n_min > n_max)
    throw ValidationError("n-gram range must satisfy 1 <= n_min <= n_max");
  if (k < 1) throw ValidationError("k must be at least 1");

  std::vector<NgramCount> out;
  for (std::size_t n = n_min; n <= n_max; ++n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    for (const auto& prompt : prompts) {
      if (prompt.size() < n) continue;
      for (std::size_t i = 0; i + n <= prompt.size(); ++i) {
        std::vector<std::string> gram(prompt.tokens.begin() + i,
                                      prompt.tokens.begin() + i + n);
        ++counts[std::move(gram)];
      }
    }
    std::vector<NgramCount> ranked;
    ranked.reserve(counts.size());
    for (auto& [gram, c] : counts) ranked.push_back({gram, c});
    // counts is already lexicographic, so a stable sort on count is enough.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const NgramCount& a, const NgramCount& b) {
                       return a.count > b.count;
                     });
    if (ranked.size() > k) ranked.resize(k);
    out.insert(out.end(), ranked.begin(), ranked.end());
  }
  return out;
}

}  // namespace memaudit
