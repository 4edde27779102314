#include "pepnet/pca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "pepnet/error.hpp"

namespace pepnet {

std::vector<double> PcaModel::project(std::span<const double> x) const {
  if (x.size() != dim) {
    throw DataError("PCA input width " + std::to_string(x.size()) + " does not match model width " +
                    std::to_string(dim));
  }
  std::vector<double> z(rank(), 0.0);
  for (std::size_t r = 0; r < rank(); ++r) {
    const auto c = component(r);
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += (x[j] - mean[j]) * c[j];
    z[r] = s;
  }
  return z;
}

std::vector<double> PcaModel::reconstruct(std::span<const double> z) const {
  if (z.size() != rank()) throw DataError("PCA reconstruction width mismatch");
  std::vector<double> x(mean);
  for (std::size_t r = 0; r < rank(); ++r) {
    const auto c = component(r);
    for (std::size_t j = 0; j < dim; ++j) x[j] += z[r] * c[j];
  }
  return x;
}

PcaModel fit_pca(const FeatureTable& table, int components, std::vector<std::string>* warnings) {
  const std::size_t n = table.rows();
  const std::size_t d = table.width();
  if (n < 2) throw DataError("PCA needs at least 2 samples");
  if (components < 1) throw DataError("PCA component count must be positive");
  const auto first = table.row(0);
  bool identical = true;
  for (std::size_t i = 1; i < n && identical; ++i) {
    identical = std::equal(first.begin(), first.end(), table.row(i).begin());
  }
  if (identical) throw DataError("degenerate data: all PCA input rows are identical");

  std::size_t rank = static_cast<std::size_t>(components);
  const std::size_t limit = std::min(n - 1, d);
  if (rank > limit) {
    if (warnings) {
      warnings->push_back("PCA components clamped from " + std::to_string(rank) + " to " +
                          std::to_string(limit));
    }
    rank = limit;
  }

  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMatrix> X(table.values().data(), static_cast<Eigen::Index>(n),
                                static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mu;
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw DataError("PCA eigendecomposition failed");

  PcaModel model;
  model.dim = d;
  model.mean.assign(mu.data(), mu.data() + d);
  model.components.resize(rank * d);
  model.explained_variance.resize(rank);
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  for (std::size_t r = 0; r < rank; ++r) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - r);
    model.explained_variance[r] = std::max(0.0, values(col));
    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(vectors(static_cast<Eigen::Index>(j), col)) >
          std::abs(vectors(static_cast<Eigen::Index>(arg), col))) {
        arg = j;
      }
    }
    const double sign = vectors(static_cast<Eigen::Index>(arg), col) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      model.components[r * d + j] = sign * vectors(static_cast<Eigen::Index>(j), col);
    }
  }
  return model;
}

FeatureTable transform(const PcaModel& model, const FeatureTable& table) {
  if (table.width() != model.dim) {
    throw DataError("PCA input width " + std::to_string(table.width()) +
                    " does not match model width " + std::to_string(model.dim));
  }
  FeatureTable out(model.rank());
  for (std::size_t i = 0; i < table.rows(); ++i) {
    out.add_row(table.id(i), table.label(i), model.project(table.row(i)), table.synthetic(i));
  }
  return out;
}

nlohmann::ordered_json to_json(const PcaModel& m) {
  nlohmann::ordered_json j;
  j["mean"] = m.mean;
  auto comps = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < m.rank(); ++r) {
    const auto c = m.component(r);
    comps.push_back(std::vector<double>(c.begin(), c.end()));
  }
  j["components"] = comps;
  j["explained_variance"] = m.explained_variance;
  return j;
}

PcaModel pca_from_json(const nlohmann::json& j) {
  PcaModel m;
  try {
    m.mean = j.at("mean").get<std::vector<double>>();
    m.dim = m.mean.size();
    m.explained_variance = j.at("explained_variance").get<std::vector<double>>();
    const auto& comps = j.at("components");
    if (comps.size() != m.explained_variance.size()) {
      throw DataError("PCA components/explained_variance length mismatch");
    }
    for (const auto& c : comps) {
      auto row = c.get<std::vector<double>>();
      if (row.size() != m.dim) throw DataError("PCA component width mismatch");
      m.components.insert(m.components.end(), row.begin(), row.end());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed PCA model: ") + e.what());
  }
  return m;
}

}  // namespace pepnet
