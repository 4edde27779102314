#pragma once

// Random inputs and geometry helpers shared by the unit tests and the
// acceptance run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oracles/naive_resnet.hpp"
#include "pepnet/feature_table.hpp"
#include "pepnet/pca.hpp"
#include "pepnet/resnet3d.hpp"
#include "pepnet/weights.hpp"

namespace testing {

// Random BN statistics and affine terms so the oracle comparison exercises
// every term of the inference-mode normalization.
inline pepnet::WeightStore randomized(const pepnet::NetworkConfig& c, std::uint64_t seed) {
  pepnet::WeightStore s = pepnet::init_weights(c, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f), pos(0.5f, 2.0f);
  for (const auto& [name, t] : s.entries()) {
    auto& d = s.at(name).data;
    if (name.ends_with("running_var") || (name.find("bn") != std::string::npos && name.ends_with(".weight"))) {
      for (auto& v : d) v = pos(rng);
    } else if (name.ends_with("running_mean") || name.ends_with(".bias")) {
      for (auto& v : d) v = u(rng);
    }
  }
  return s;
}

inline pepnet::Volume3D random_input(pepnet::Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(d.count()));
  for (auto& x : v) x = n(rng);
  return {d, {1, 1, 1}, pepnet::VolumeKind::intensity, std::move(v)};
}

inline oracle::Grid to_grid(const pepnet::Volume3D& v) {
  const pepnet::Dims& d = v.dims();
  oracle::Grid g = oracle::make_grid(1, int(d.z), int(d.y), int(d.x));
  for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = v.voxels()[i];
  return g;
}

inline double max_relative(const std::vector<double>& a, const std::vector<double>& b) {
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    err = std::max(err, std::abs(a[i] - b[i]));
  }
  return err / std::max(scale, 1e-12);
}

inline std::vector<double> features(const pepnet::NetworkConfig& c, const pepnet::WeightStore& s,
                                    const pepnet::Volume3D& v) {
  pepnet::ResNet3d<float> net(c, s);
  std::vector<pepnet::Volume3D> batch{v};
  return pepnet::forward_features(net, batch).front();
}

inline pepnet::FeatureTable random_table(std::size_t n_pos, std::size_t n_neg, std::size_t d,
                                         std::uint64_t seed, double shift = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<int> labels(n_pos, 1);
  labels.resize(n_pos + n_neg, 0);
  std::shuffle(labels.begin(), labels.end(), rng);
  pepnet::FeatureTable t(d);
  std::vector<double> row(d);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (auto& v : row) v = n(rng) + (labels[i] == 1 ? shift : 0.0);
    t.add_row("s" + std::to_string(i), labels[i], row);
  }
  return t;
}

// Coefficient c with x - base = c (neighbor - base), or NaN when x is off the line.
inline double segment_coefficient(std::span<const double> x, std::span<const double> base,
                                  std::span<const double> neighbor) {
  double dot = 0.0, norm = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    dot += (x[j] - base[j]) * (neighbor[j] - base[j]);
    norm += (neighbor[j] - base[j]) * (neighbor[j] - base[j]);
  }
  if (norm == 0.0) return 0.0;
  const double c = dot / norm;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double residual = x[j] - base[j] - c * (neighbor[j] - base[j]);
    if (std::abs(residual) > 1e-9 * (1.0 + std::abs(x[j]))) return std::nan("");
  }
  return c;
}

inline pepnet::FeatureTable matrix_table(const std::vector<double>& x, std::size_t n, std::size_t d) {
  pepnet::FeatureTable t(d);
  for (std::size_t i = 0; i < n; ++i) {
    t.add_row("r" + std::to_string(i), int(i % 2), std::span<const double>(x.data() + i * d, d));
  }
  return t;
}

inline std::vector<double> random_matrix(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> scale(d);
  for (auto& s : scale) s = 0.2 + 3.0 * std::abs(g(rng));
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = scale[j] * g(rng) + 1.5;
  return x;
}

inline double reconstruction_error(const pepnet::PcaModel& full, const pepnet::FeatureTable& t,
                                   std::size_t r) {
  pepnet::PcaModel m = full;
  m.components.resize(r * m.dim);
  m.explained_variance.resize(r);
  double err = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const auto back = m.reconstruct(m.project(t.row(i)));
    for (std::size_t j = 0; j < m.dim; ++j) err += (back[j] - t.row(i)[j]) * (back[j] - t.row(i)[j]);
  }
  return err;
}

}  // namespace testing
