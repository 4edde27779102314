#include "pepnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pepnet/error.hpp"
#include "pepnet/seed.hpp"

namespace pepnet {

std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const int> labels, int k,
                                                       std::uint64_t seed) {
  if (k < 2) throw DataError("fold count must be at least 2");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("labels must be 0 or 1");
    by_class[labels[i]].push_back(i);
  }
  for (int c : {1, 0}) {
    if (by_class[c].size() < static_cast<std::size_t>(k)) {
      throw DataError("class " + std::to_string(c) + " has " +
                      std::to_string(by_class[c].size()) + " members, fewer than " +
                      std::to_string(k) + " folds");
    }
    std::mt19937_64 rng(derive_seed(seed, "kfold", static_cast<std::uint64_t>(c)));
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
  }
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::size_t next = 0;
  for (int c : {1, 0}) {
    for (std::size_t idx : by_class[c]) {
      folds[next].push_back(idx);
      next = (next + 1) % folds.size();
    }
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

namespace {

void check_scored(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw DataError("labels and scores differ in length");
  bool has[2] = {false, false};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw DataError("scores must be finite");
    has[labels[i]] = true;
  }
  if (!has[0] || !has[1]) throw DataError("AUC undefined: labels contain a single class");
}

}  // namespace

double auc_rank(std::span<const int> labels, std::span<const double> scores) {
  check_scored(labels, scores);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        positive_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const double p = static_cast<double>(n_pos);
  const double n = static_cast<double>(labels.size() - n_pos);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

std::vector<RocPoint> roc_curve(std::span<const int> labels, std::span<const double> scores) {
  check_scored(labels, scores);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double n_neg = static_cast<double>(labels.size()) - n_pos;
  std::vector<RocPoint> roc{{0.0, 0.0, scores[order.front()] + 1.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
    }
    roc.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos, s});
  }
  return roc;
}

double trapezoid_auc(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
  }
  return area;
}

BinaryMetrics compute_metrics(std::span<const int> labels, std::span<const double> probabilities,
                              double threshold) {
  check_scored(labels, probabilities);
  BinaryMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = probabilities[i];
    if (p < 0.0 || p > 1.0) throw DataError("probabilities must lie in [0, 1]");
    const bool predicted = p >= threshold;
    if (labels[i] == 1) {
      (predicted ? m.confusion.tp : m.confusion.fn) += 1;
    } else {
      (predicted ? m.confusion.fp : m.confusion.tn) += 1;
    }
  }
  const auto& c = m.confusion;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(labels.size());
  m.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  m.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  m.auc = auc_rank(labels, probabilities);
  m.roc = roc_curve(labels, probabilities);
  return m;
}

}  // namespace pepnet
