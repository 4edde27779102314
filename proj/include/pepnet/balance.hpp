#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pepnet/feature_table.hpp"

namespace pepnet {

/// Non-owning row-major matrix.
struct MatrixView {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::span<const double> row(std::size_t i) const { return data.subspan(i * cols, cols); }
  static MatrixView of(const FeatureTable& t) { return {t.values(), t.rows(), t.width()}; }
};

/// Indices of the k nearest rows to `query` by Euclidean distance, nearest
/// first, ties broken by ascending index. The query itself is never
/// returned. When `eligible` is non-empty only rows with eligible[i] != 0
/// are candidates. Throws DataError when fewer than k candidates exist.
std::vector<std::size_t> knn(const MatrixView& points, std::size_t query, int k,
                             std::span<const char> eligible = {});

struct SmoteParams {
  int k_neighbors = 5;
  int m_neighbors = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class DangerTag { safe, danger, noise };

const char* to_string(DangerTag tag);

struct DangerReport {
  int minority_label = 1;
  std::vector<std::size_t> minority_rows;  // ascending
  std::vector<DangerTag> tags;             // aligned with minority_rows
};

/// Label with fewer rows; label 1 on a tie.
int minority_label(const FeatureTable& table);

/// Borderline tags: among each minority row's m nearest neighbors (all
/// classes), m' majority rows give noise when m' = m, danger when
/// m/2 <= m' < m, safe otherwise.
DangerReport classify_danger(const FeatureTable& table, const SmoteParams& params);

/// Where a synthetic row came from: row = base + lambda * (neighbor - base).
struct SyntheticProvenance {
  std::size_t row;       // index in the resampled table
  std::size_t base;      // index in the input table
  std::size_t neighbor;  // index in the input table
  double lambda;
};

struct ResampleResult {
  FeatureTable table;
  std::vector<SyntheticProvenance> provenance;
  std::vector<std::string> warnings;
};

/// base + lambda * (neighbor - base), elementwise.
std::vector<double> interpolate(std::span<const double> base, std::span<const double> neighbor,
                                double lambda);

/// Borderline-SMOTE1 with the "auto" strategy: appends synthetic minority
/// rows until both classes have equal counts. Bases are danger rows taken
/// round-robin in ascending order; each synthetic row interpolates towards a
/// uniformly chosen one of the base's k nearest minority neighbors with
/// lambda ~ U(0, 1). Original rows are copied unchanged and in order.
ResampleResult fit_resample(const FeatureTable& table, const SmoteParams& params);

}  // namespace pepnet
