#include "pepnet/balance.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <utility>

#include "pepnet/error.hpp"

namespace pepnet {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<std::size_t> knn(const MatrixView& points, std::size_t query, int k,
                             std::span<const char> eligible) {
  if (k < 1) throw DataError("knn requires k >= 1");
  if (query >= points.rows) throw DataError("knn query index out of range");
  if (!eligible.empty() && eligible.size() != points.rows) {
    throw DataError("knn eligibility mask length mismatch");
  }
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(points.rows);
  const auto q = points.row(query);
  for (std::size_t i = 0; i < points.rows; ++i) {
    if (i == query || (!eligible.empty() && !eligible[i])) continue;
    cand.emplace_back(squared_distance(q, points.row(i)), i);
  }
  if (cand.size() < static_cast<std::size_t>(k)) {
    throw DataError("knn needs " + std::to_string(k) + " neighbors but only " +
                    std::to_string(cand.size()) + " points are eligible");
  }
  std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
  std::vector<std::size_t> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = cand[static_cast<std::size_t>(i)].second;
  return out;
}

void SmoteParams::validate() const {
  if (k_neighbors < 1) throw DataError("SMOTE k_neighbors must be >= 1");
  if (m_neighbors < k_neighbors) throw DataError("SMOTE m_neighbors must be >= k_neighbors");
}

const char* to_string(DangerTag tag) {
  switch (tag) {
    case DangerTag::safe: return "safe";
    case DangerTag::danger: return "danger";
    case DangerTag::noise: return "noise";
  }
  return "?";
}

int minority_label(const FeatureTable& table) {
  return table.count_label(0) < table.count_label(1) ? 0 : 1;
}

DangerReport classify_danger(const FeatureTable& table, const SmoteParams& params) {
  params.validate();
  if (table.count_label(0) == 0 || table.count_label(1) == 0) {
    throw DataError("Borderline-SMOTE needs both classes present");
  }
  DangerReport report;
  report.minority_label = minority_label(table);
  for (std::size_t i = 0; i < table.rows(); ++i) {
    if (table.label(i) == report.minority_label) report.minority_rows.push_back(i);
  }
  if (report.minority_rows.size() < 2) throw DataError("minority class has fewer than 2 samples");
  const auto view = MatrixView::of(table);
  const int m = params.m_neighbors;
  for (std::size_t r : report.minority_rows) {
    const auto nn = knn(view, r, m);
    const auto majority = std::count_if(nn.begin(), nn.end(), [&](std::size_t j) {
      return table.label(j) != report.minority_label;
    });
    DangerTag tag = DangerTag::safe;
    if (majority == m) {
      tag = DangerTag::noise;
    } else if (2 * majority >= m) {
      tag = DangerTag::danger;
    }
    report.tags.push_back(tag);
  }
  return report;
}

std::vector<double> interpolate(std::span<const double> base, std::span<const double> neighbor,
                                double lambda) {
  std::vector<double> out(base.size());
  for (std::size_t j = 0; j < base.size(); ++j) out[j] = base[j] + lambda * (neighbor[j] - base[j]);
  return out;
}

ResampleResult fit_resample(const FeatureTable& table, const SmoteParams& params) {
  const DangerReport danger = classify_danger(table, params);
  const int minority = danger.minority_label;
  const std::size_t n_min = danger.minority_rows.size();
  const std::size_t n_maj = table.rows() - n_min;
  if (n_min < static_cast<std::size_t>(params.k_neighbors) + 1) {
    throw DataError("SMOTE needs at least k_neighbors + 1 minority samples");
  }

  ResampleResult result{table, {}, {}};
  if (n_maj <= n_min) return result;
  const std::size_t budget = n_maj - n_min;

  std::vector<std::size_t> bases;
  for (std::size_t i = 0; i < n_min; ++i) {
    if (danger.tags[i] == DangerTag::danger) bases.push_back(danger.minority_rows[i]);
  }
  if (bases.empty()) {
    result.warnings.push_back(
        "no minority sample is in danger; using every minority sample as a SMOTE base");
    bases = danger.minority_rows;
  }

  std::vector<char> eligible(table.rows(), 0);
  for (std::size_t r : danger.minority_rows) eligible[r] = 1;
  const auto view = MatrixView::of(table);
  std::vector<std::vector<std::size_t>> neighbors(bases.size());
  for (std::size_t b = 0; b < bases.size(); ++b) {
    neighbors[b] = knn(view, bases[b], params.k_neighbors, eligible);
  }

  std::mt19937_64 rng(params.seed);
  std::uniform_int_distribution<int> pick(0, params.k_neighbors - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> per_base(bases.size(), 0);
  for (std::size_t s = 0; s < budget; ++s) {
    const std::size_t b = s % bases.size();
    const std::size_t base = bases[b];
    const std::size_t nb = neighbors[b][static_cast<std::size_t>(pick(rng))];
    const double lambda = unit(rng);
    const auto row = interpolate(table.row(base), table.row(nb), lambda);
    const std::size_t out_row = result.table.rows();
    result.table.add_row(table.id(base) + "#syn" + std::to_string(per_base[b]++), minority, row,
                         /*synthetic=*/true);
    result.provenance.push_back({out_row, base, nb, lambda});
  }
  return result;
}

}  // namespace pepnet
