#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pepnet/feature_table.hpp"

namespace pepnet {

/// Default number of retained components.
inline constexpr int kDefaultPcaComponents = 100;

struct PcaModel {
  std::size_t dim = 0;
  std::vector<double> mean;                // dim
  std::vector<double> components;          // rank x dim, row-major, orthonormal rows
  std::vector<double> explained_variance;  // rank, nonincreasing

  std::size_t rank() const noexcept { return explained_variance.size(); }
  std::span<const double> component(std::size_t i) const {
    return {components.data() + i * dim, dim};
  }
  /// (x - mean) projected onto the components.
  std::vector<double> project(std::span<const double> x) const;
  /// Inverse map of project() onto the original feature space.
  std::vector<double> reconstruct(std::span<const double> z) const;
};

/// Top-`components` eigenvectors of the sample covariance (divisor n - 1).
/// The count is clamped to min(n - 1, d), with a message appended to
/// `warnings`. Each component's largest-magnitude entry is made nonnegative
/// (first occurrence on ties). Throws DataError on identical rows.
PcaModel fit_pca(const FeatureTable& table, int components,
                 std::vector<std::string>* warnings = nullptr);

/// Projects every row; ids, labels and synthetic flags are preserved.
FeatureTable transform(const PcaModel& model, const FeatureTable& table);

nlohmann::ordered_json to_json(const PcaModel& model);
PcaModel pca_from_json(const nlohmann::json& j);

}  // namespace pepnet
