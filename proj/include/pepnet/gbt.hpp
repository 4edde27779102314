#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "pepnet/balance.hpp"
#include "pepnet/feature_table.hpp"

namespace pepnet {

struct GbtParams {
  int max_depth = 3;
  int rounds = 100;
  double eta = 0.1;
  double lambda = 1.0;
  double gamma = 0.0;
  double min_child_weight = 1.0;
  double scale_pos_weight = 1.0;

  void validate() const;
};

/// Split node (go left iff x[feature] < threshold) or leaf.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double weight = 0.0;

  bool is_leaf() const noexcept { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double value(std::span<const double> x) const;
  /// Largest number of splits on any root-to-leaf path.
  int depth() const;
};

struct TreeEnsemble {
  std::vector<Tree> trees;
  double eta = 0.1;
  double base_raw = 0.0;
  GbtParams params;
  std::size_t width = 0;

  /// base_raw + eta * sum of tree values.
  double raw_score(std::span<const double> x) const;
};

double sigmoid(double x);

/// n_negative / n_positive. Throws DataError when there is no positive label.
double compute_pos_weight(std::span<const int> labels);

/// Logistic gradient and hessian; positive rows are scaled by pos_weight and
/// hessians are floored at 1e-16.
void grad_hess(std::span<const int> labels, std::span<const double> raw, double pos_weight,
               std::vector<double>& g, std::vector<double>& h);

/// Weighted binary log loss summed over rows (positives weighted by pos_weight).
double weighted_logloss(std::span<const int> labels, std::span<const double> raw,
                        double pos_weight);

/// Per-feature row order, ascending by value then by row index.
class SortedColumns {
 public:
  explicit SortedColumns(const MatrixView& x);

  const MatrixView& matrix() const noexcept { return x_; }
  std::span<const std::size_t> order(std::size_t feature) const { return order_[feature]; }

 private:
  MatrixView x_;
  std::vector<std::vector<std::size_t>> order_;
};

struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

/// Gains closer than this are ties, relative to the rounding scale of the
/// best split: sum over parent and children of (sum |g|)^2 / (sum h + lambda).
inline constexpr double kGainTieTolerance = 1e-12;

/// Regularized structure gain of a (left, right) partition.
double split_gain(double g_left, double h_left, double g_right, double h_right,
                  const GbtParams& params);

/// Newton leaf weight -G / (H + lambda) over `rows`; 0 when |G| is within
/// kGainTieTolerance of the absolute gradient mass.
double leaf_weight(std::span<const double> g, std::span<const double> h,
                   std::span<const std::size_t> rows, const GbtParams& params);

/// Exact greedy search over all features and midpoints between consecutive
/// distinct values of the node rows. Candidates with a child hessian sum below
/// min_child_weight are skipped. Among gains within kGainTieTolerance of the
/// best, the lowest (feature, threshold) wins. Returns nullopt when the best
/// gain does not exceed that tolerance.
std::optional<SplitCandidate> best_split(const SortedColumns& columns, std::span<const double> g,
                                         std::span<const double> h,
                                         std::span<const std::size_t> node_rows,
                                         const GbtParams& params);

struct SplitEvent {
  std::size_t round;
  int depth;
  std::span<const std::size_t> node_rows;
  std::span<const double> g;
  std::span<const double> h;
  std::optional<SplitCandidate> chosen;
};

struct FitTrace {
  /// Weighted training log loss before any tree, then after each round.
  std::vector<double> train_loss;
};

/// Newton boosting with depth-wise exact greedy trees and leaf weights
/// -G / (H + lambda). Every split search is reported to `observer`.
TreeEnsemble fit_gbt(const FeatureTable& table, const GbtParams& params,
                     FitTrace* trace = nullptr,
                     const std::function<void(const SplitEvent&)>& observer = {});

std::vector<double> predict_proba(const TreeEnsemble& model, const FeatureTable& rows);
double predict_proba(const TreeEnsemble& model, std::span<const double> row);

nlohmann::ordered_json to_json(const TreeEnsemble& model);
TreeEnsemble ensemble_from_json(const nlohmann::json& j);

}  // namespace pepnet
