#pragma once

// Brute-force references for rank statistics and nearest neighbors.

#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

namespace oracle {

/// Fraction of (positive, negative) pairs ranked correctly; ties count half.
inline double concordance(const std::vector<int>& labels, const std::vector<double>& scores) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / double(pairs);
}

/// k nearest rows to `query` among `candidates` by full distance sort,
/// ties by index.
inline std::vector<std::size_t> knn_sort(const std::vector<double>& x, std::size_t d,
                                         std::size_t query,
                                         const std::vector<std::size_t>& candidates,
                                         std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t c : candidates) {
    if (c == query) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (x[c * d + j] - x[query * d + j]) * (x[c * d + j] - x[query * d + j]);
    all.emplace_back(s, c);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k && i < all.size(); ++i) out.push_back(all[i].second);
  return out;
}

/// Borderline rule from the majority count among m neighbors:
/// 0 safe, 1 danger, 2 noise.
inline int danger_tag(std::size_t majority, std::size_t m) {
  if (majority == m) return 2;
  if (2 * majority >= m) return 1;
  return 0;
}

}  // namespace oracle
