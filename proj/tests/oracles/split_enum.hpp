#pragma once

// Exhaustive split search: every feature, every threshold halfway between
// consecutive distinct node values, gains computed from scratch by a full
// scan of the node rows.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace oracle {

struct Split {
  int feature;
  double threshold;
  double gain;
  double scale;  // tie tolerance reference: sum of (sum |g|)^2 / (sum h + lambda) over parent and children
};

inline double structure_score(double g, double h, double lambda) { return g * g / (h + lambda); }

/// Row-major x (n x d); `rows` are the node's rows.
inline std::vector<Split> enumerate_splits(const std::vector<double>& x, std::size_t d,
                                           const std::vector<std::size_t>& rows,
                                           const std::vector<double>& g,
                                           const std::vector<double>& h, double lambda,
                                           double gamma, double min_child_weight) {
  double G = 0, H = 0, A = 0;
  for (std::size_t r : rows) {
    G += g[r];
    H += h[r];
    A += std::abs(g[r]);
  }
  std::vector<Split> out;
  for (std::size_t f = 0; f < d; ++f) {
    std::vector<double> values;
    for (std::size_t r : rows) values.push_back(x[r * d + f]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
      double t = (values[i] + values[i + 1]) / 2.0;
      if (!(t > values[i])) t = values[i + 1];
      double gl = 0, hl = 0, al = 0, gr = 0, hr = 0, ar = 0;
      for (std::size_t r : rows) {
        if (x[r * d + f] < t) {
          gl += g[r];
          hl += h[r];
          al += std::abs(g[r]);
        } else {
          gr += g[r];
          hr += h[r];
          ar += std::abs(g[r]);
        }
      }
      if (hl < min_child_weight || hr < min_child_weight) continue;
      const double children = structure_score(gl, hl, lambda) + structure_score(gr, hr, lambda);
      const double gain = 0.5 * (children - structure_score(G, H, lambda)) - gamma;
      const double scale = structure_score(al, hl, lambda) + structure_score(ar, hr, lambda) +
                           structure_score(A, H, lambda);
      out.push_back({int(f), t, gain, scale});
    }
  }
  return out;
}

/// Best split under the tie rule: gains within `tol * scale` of the maximum
/// tie, and the lowest (feature, threshold) among ties wins. nullopt when the
/// best gain is within the same tolerance of zero.
inline std::optional<Split> best(const std::vector<Split>& splits, double tol) {
  const Split* top = nullptr;
  for (const auto& s : splits)
    if (!top || s.gain > top->gain) top = &s;
  if (!top || !(top->gain > tol * top->scale)) return std::nullopt;
  const double bar = top->gain - tol * top->scale;
  for (const auto& s : splits)
    if (s.gain >= bar) return s;  // enumeration order is (feature, threshold)
  return *top;
}

}  // namespace oracle
