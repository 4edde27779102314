#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pepnet/activation.hpp"
#include "pepnet/network_config.hpp"
#include "pepnet/volume.hpp"
#include "pepnet/weights.hpp"

namespace pepnet {

template <typename T>
struct Param {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<T> value;
  bool trainable = true;
};

/// Training-only 2-logit linear classifier on pooled features.
template <typename T>
struct LinearHead {
  int in_features = 0;
  std::vector<T> weight;  // 2 x in_features, row-major
  std::vector<T> bias;    // 2

  static LinearHead zeros(int in_features);
  static LinearHead random(int in_features, std::uint64_t seed);
};

/// Gradient buffers aligned with ResNet3d::params() plus the head.
struct Gradients {
  std::vector<std::vector<double>> params;
  std::vector<double> head_weight;
  std::vector<double> head_bias;
};

/// Tensor-name prefixes excluded from updates. "stage" freezes the body.
struct FreezeMask {
  std::vector<std::string> prefixes;

  bool frozen(std::string_view name) const;
};

/// ADAM moments keyed by tensor name.
struct TrainState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, std::vector<double>, std::less<>> m, v;
};

/// Batch normalization running-statistics momentum during fine-tuning.
inline constexpr double kBatchNormMomentum = 0.1;

/// Basic-block residual network. T is the storage type (float for
/// production, double for gradient verification); reductions use double.
template <typename T>
class ResNet3d {
 public:
  ResNet3d(NetworkConfig config, const WeightStore& store);

  const NetworkConfig& config() const noexcept { return config_; }
  std::span<Param<T>> params() noexcept { return params_; }
  std::span<const Param<T>> params() const noexcept { return params_; }
  const Param<T>& param(std::string_view name) const;

  /// Pooled features (n x feature_dim, row-major) with BN in inference mode.
  /// `trace`, when given, receives the executed per-layer shapes of sample 0.
  std::vector<double> forward_features(const Activation<T>& input,
                                       std::vector<LayerShape>* trace = nullptr) const;

  /// Mean softmax cross-entropy of the head over the batch with BN in
  /// training mode; fills `grads` when non-null. Running statistics of
  /// unfrozen BN layers are updated when `update_running_stats` is set.
  double loss_and_gradients(const Activation<T>& input, std::span<const int> labels,
                            const LinearHead<T>& head, Gradients* grads,
                            bool update_running_stats = false, const FreezeMask& freeze = {});

  /// Hash of every ReLU on/off state and max-pool argmax reached by the
  /// training-mode forward pass; equal signatures mean the same linear piece.
  std::uint64_t nonlinearity_signature(const Activation<T>& input) const;

  WeightStore to_weight_store() const;

 private:
  struct Conv {
    std::size_t weight;
    Triple kernel, stride, padding;
    int out_channels;
  };
  struct Norm {
    std::size_t gamma, beta, mean, var;
  };
  struct Block {
    Conv conv1, conv2;
    Norm bn1, bn2;
    bool projection = false;
    Conv down_conv{};
    Norm down_bn{};
    std::string name;
  };
  struct Tape;

  Conv make_conv(const std::string& name, int out_channels, Triple k, Triple s, Triple p);
  Norm make_norm(const std::string& prefix);
  Activation<T> conv(const Activation<T>& x, const Conv& c) const;
  void norm_inference(Activation<T>& x, const Norm& n) const;
  Activation<T> run(const Activation<T>& input, Tape* tape, std::vector<LayerShape>* trace) const;

  NetworkConfig config_;
  std::vector<Param<T>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
  Conv stem_conv_{};
  Norm stem_bn_{};
  std::vector<Block> blocks_;
};

/// Stacks single-channel volumes of identical dims into a batch.
template <typename T>
Activation<T> make_batch(std::span<const Volume3D> volumes);

/// Pooled features for each volume; items fan out over `threads` workers
/// and are gathered in input order.
std::vector<std::vector<double>> forward_features(const ResNet3d<float>& model,
                                                  std::span<const Volume3D> volumes,
                                                  unsigned threads = 1);

/// One ADAM step on the mean batch loss over every unfrozen tensor and the
/// head. Returns the pre-step loss; throws DataError on a non-finite loss.
template <typename T>
double train_step(ResNet3d<T>& model, LinearHead<T>& head, TrainState& state,
                  std::span<const Volume3D> batch, std::span<const int> labels,
                  const FreezeMask& freeze = {});

}  // namespace pepnet
