#pragma once

// Brute-force reference implementations. Deliberately naive and written
// independently of the library code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace oracle {

using Tokens = std::vector<std::string>;

// Top-down memoized LCS over suffixes.
inline std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
  auto go = [&](auto&& self, std::size_t i, std::size_t j) -> long {
    if (i == a.size() || j == b.size()) return 0;
    long& m = memo[i][j];
    if (m >= 0) return m;
    if (a[i] == b[j])
      m = 1 + self(self, i + 1, j + 1);
    else
      m = std::max(self(self, i + 1, j), self(self, i, j + 1));
    return m;
  };
  return static_cast<std::size_t>(go(go, 0, 0));
}

inline double rouge_l(const Tokens& cand, const Tokens& ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(lcs(cand, ref));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(cand.size());
  const double r = l / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

// Levenshtein on token sequences, full table.
inline std::size_t edit_distance(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
  return d[a.size()][b.size()];
}

// Every n-gram occurrence counted with a linear scan, then sorted by
// (-count, ngram) and cut to k per n.
inline std::vector<std::pair<Tokens, std::size_t>> top_ngrams(const std::vector<Tokens>& prompts,
                                                             std::size_t n_min,
                                                             std::size_t n_max, std::size_t k) {
  std::vector<std::pair<Tokens, std::size_t>> out;
  for (std::size_t n = n_min; n <= n_max; ++n) {
    std::vector<std::pair<Tokens, std::size_t>> counts;
    for (const auto& p : prompts) {
      for (std::size_t i = 0; i + n <= p.size(); ++i) {
        Tokens g(p.begin() + static_cast<long>(i), p.begin() + static_cast<long>(i + n));
        bool found = false;
        for (auto& [seen, c] : counts)
          if (seen == g) {
            ++c;
            found = true;
            break;
          }
        if (!found) counts.emplace_back(g, 1);
      }
    }
    std::sort(counts.begin(), counts.end(), [](const auto& x, const auto& y) {
      return std::tie(y.second, x.first) < std::tie(x.second, y.first);
    });
    if (counts.size() > k) counts.resize(k);
    out.insert(out.end(), counts.begin(), counts.end());
  }
  return out;
}

}  // namespace oracle
