#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pepnet/network_config.hpp"

namespace pepnet {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named float tensors, kept sorted by name so serialization is canonical.
class WeightStore {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  void set(std::string name, Tensor t);
  bool erase(std::string_view name);

  const Map& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  Map entries_;
};

/// Every missing, mis-shaped or unexpected tensor, one message per name.
std::vector<std::string> validate_weights(const WeightStore& store, const NetworkConfig& config);
/// Throws DataError listing all problems reported by validate_weights.
void require_valid_weights(const WeightStore& store, const NetworkConfig& config);

/// MWTS container: "MWTS\n", a one-line JSON manifest of
/// {"name","shape","offset","len"} entries (offset and len in bytes, relative
/// to the payload start), "\n", then concatenated little-endian f32 data.
std::string encode_weights(const WeightStore& store);
WeightStore decode_weights(std::string_view bytes);
WeightStore load_weights(const std::filesystem::path& path);
void save_weights(const WeightStore& store, const std::filesystem::path& path);

/// Fresh weights for `config`: He-normal conv weights (std = sqrt(2 / fan_in)),
/// BN scale 1, shift 0, running mean 0, running variance 1. Each tensor draws
/// from its own stream derived from `seed` and its name.
WeightStore init_weights(const NetworkConfig& config, std::uint64_t seed);

/// Re-initializes the stem convolution for `in_channels` input channels with
/// He-normal weights and keeps every other tensor. A missing stem BN is
/// added with identity statistics.
WeightStore replace_stem(WeightStore store, std::uint64_t seed, const StemConfig& stem = {},
                         int in_channels = 1);

}  // namespace pepnet
