#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pepnet {

/// k disjoint test-index sets (each ascending) covering 0..n-1. Each class
/// is shuffled under `seed` and dealt round-robin, positives first from fold
/// 0, negatives continuing where the positives stopped. Throws DataError when
/// a class has fewer than k members.
std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const int> labels, int k,
                                                       std::uint64_t seed);

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;  // predict positive when score >= threshold
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct BinaryMetrics {
  double accuracy = 0.0;
  double auc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  Confusion confusion;
  std::vector<RocPoint> roc;
};

/// Mann-Whitney statistic with midranks for tied scores.
double auc_rank(std::span<const int> labels, std::span<const double> scores);

/// One point per distinct score, descending, preceded by (0, 0) at
/// threshold max(score) + 1.
std::vector<RocPoint> roc_curve(std::span<const int> labels, std::span<const double> scores);

double trapezoid_auc(std::span<const RocPoint> roc);

/// Positive class is label 1; a row is predicted positive when p >= threshold.
/// Throws DataError on length mismatch, probabilities outside [0, 1] or a
/// single-class label vector.
BinaryMetrics compute_metrics(std::span<const int> labels, std::span<const double> probabilities,
                              double threshold = 0.5);

}  // namespace pepnet
