#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pepnet/volume.hpp"

namespace pepnet {

/// Per-axis (depth, height, width) integers; depth runs along z and width
/// along x, matching the x-fastest voxel order.
using Triple = std::array<int, 3>;

struct StemConfig {
  Triple kernel{7, 7, 7};
  Triple stride{2, 2, 2};
  Triple padding{3, 3, 3};
  int out_channels = 64;
  /// 3x3x3 max pool, stride 2, padding 1, after the stem activation.
  bool max_pool = true;
};

struct StageConfig {
  int blocks = 2;
  int channels = 64;
};

/// Basic-block residual network with a global-average-pool head and no
/// fully connected layer.
struct NetworkConfig {
  int in_channels = 1;
  StemConfig stem;
  std::vector<StageConfig> stages{{2, 64}, {2, 128}, {2, 256}, {2, 512}};

  static NetworkConfig resnet18() { return {}; }

  /// Throws DataError on a malformed configuration.
  void validate() const;
  int feature_dim() const { return stages.back().channels; }
  /// Stages after the first open with a stride-2 block.
  static int stage_stride(std::size_t stage_index) { return stage_index == 0 ? 1 : 2; }
  /// Whether block `block` of stage `stage` needs a projection shortcut.
  bool needs_projection(std::size_t stage, int block) const;
};

struct TensorSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  bool trainable = true;

  std::int64_t numel() const;
};

/// Every tensor the configuration requires, in forward order.
std::vector<TensorSpec> required_tensors(const NetworkConfig& config);

/// Learnable parameters only (conv weights, BN scale/shift).
std::int64_t trainable_parameter_count(const NetworkConfig& config);

/// Activation shape (channels, depth, height, width) after a named layer.
struct LayerShape {
  std::string name;
  std::array<std::int64_t, 4> shape{};

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/// Declared per-layer output shapes for a single-sample input of `input`
/// voxels, walking the configuration without executing it.
std::vector<LayerShape> declared_shapes(const NetworkConfig& config, Dims input);

inline std::int64_t conv_out_size(std::int64_t n, int kernel, int stride, int padding) {
  return (n + 2 * padding - kernel) / stride + 1;
}

nlohmann::ordered_json to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const nlohmann::json& j);

}  // namespace pepnet
