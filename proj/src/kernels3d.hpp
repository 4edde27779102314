#pragma once

// Dense 3D layer kernels. Storage type T is float or double; every reduction
// accumulates in double.

#include <span>
#include <vector>

#include "pepnet/activation.hpp"
#include "pepnet/network_config.hpp"

namespace pepnet::kernels {

struct ConvGeometry {
  int out_channels;
  Triple kernel;
  Triple stride;
  Triple padding;
};

template <typename T>
Activation<T> conv3d_forward(const Activation<T>& x, std::span<const T> weight,
                             const ConvGeometry& g);

/// Accumulates the weight gradient into `grad_weight` and, when `dx` is
/// non-null, writes the input gradient.
template <typename T>
void conv3d_backward(const Activation<T>& x, std::span<const T> weight, const ConvGeometry& g,
                     const Activation<T>& dy, std::span<double> grad_weight, Activation<T>* dx);

inline constexpr double kBatchNormEps = 1e-5;

template <typename T>
struct BatchNormParams {
  std::span<const T> gamma, beta;
};

/// Normalization with stored statistics, in place.
template <typename T>
void batchnorm_inference(Activation<T>& x, const BatchNormParams<T>& p, std::span<const T> mean,
                         std::span<const T> var);

template <typename T>
struct BatchNormTape {
  std::vector<double> mean, var, invstd;
  Activation<T> xhat;
};

/// Normalization with batch statistics (biased variance); fills `tape`.
template <typename T>
Activation<T> batchnorm_train(const Activation<T>& x, const BatchNormParams<T>& p,
                              BatchNormTape<T>& tape);

template <typename T>
Activation<T> batchnorm_backward(const Activation<T>& dy, std::span<const T> gamma,
                                 const BatchNormTape<T>& tape, std::span<double> grad_gamma,
                                 std::span<double> grad_beta);

template <typename T>
void relu_inplace(Activation<T>& x);

/// Zeroes dy wherever the ReLU output was not positive.
template <typename T>
void relu_backward_inplace(Activation<T>& dy, const Activation<T>& out);

/// 3x3x3 max pool, stride 2, padding 1. `argmax` receives flat input indices.
template <typename T>
Activation<T> maxpool3d_forward(const Activation<T>& x, std::vector<std::int64_t>* argmax);

template <typename T>
Activation<T> maxpool3d_backward(const Activation<T>& dy, const std::vector<std::int64_t>& argmax,
                                 const Activation<T>& x_shape);

/// Spatial mean per (sample, channel), row-major n x c.
template <typename T>
std::vector<double> global_avg_pool(const Activation<T>& x);

}  // namespace pepnet::kernels
