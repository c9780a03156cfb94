#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <vector>

// Reference metric implementations written independently of the library:
// n-gram multisets through std::map, LCS through memoized recursion.
namespace csmn::oracle {

using Seq = std::vector<std::size_t>;

inline std::map<Seq, long> ngrams(const Seq& s, std::size_t n) {
  std::map<Seq, long> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out[Seq(s.begin() + i, s.begin() + i + n)]++;
  return out;
}

inline double bleu(const std::vector<Seq>& preds, const std::vector<Seq>& refs, int max_n) {
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    long matched = 0, total = 0;
    for (std::size_t k = 0; k < preds.size(); ++k) {
      const auto p = ngrams(preds[k], n), r = ngrams(refs[k], n);
      for (const auto& [g, c] : p) {
        total += c;
        const auto it = r.find(g);
        if (it != r.end()) matched += std::min(c, it->second);
      }
    }
    if (matched == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
  }
  double c = 0, r = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    c += static_cast<double>(preds[k].size());
    r += static_cast<double>(refs[k].size());
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / max_n);
}

inline std::size_t lcs(const Seq& a, const Seq& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    memo[key] = v;
    return v;
  };
  return go(0, 0);
}

inline double rouge_l(const std::vector<Seq>& preds, const std::vector<Seq>& refs, double beta = 1.2) {
  double total = 0.0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const double l = static_cast<double>(lcs(preds[k], refs[k]));
    if (l == 0) continue;
    const double p = l / static_cast<double>(preds[k].size());
    const double r = l / static_cast<double>(refs[k].size());
    total += (1 + beta * beta) * p * r / (r + beta * beta * p);
  }
  return total / static_cast<double>(preds.size());
}

}  // namespace csmn::oracle
