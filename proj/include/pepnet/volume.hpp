#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pepnet {

/// Voxel counts along x, y, z.
struct Dims {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  std::int64_t count() const noexcept { return x * y * z; }
  bool positive() const noexcept { return x > 0 && y > 0 && z > 0; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Millimeters per voxel along x, y, z.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

enum class VolumeKind { intensity, mask };

std::string_view to_string(VolumeKind kind);
VolumeKind parse_volume_kind(std::string_view s);

/// Dense scalar grid, x-fastest. A default-constructed volume is empty
/// (all dims zero); every other instance satisfies the invariants checked in
/// the constructor. Immutable after construction.
class Volume3D {
 public:
  Volume3D() = default;
  Volume3D(Dims dims, Spacing spacing, VolumeKind kind, std::vector<float> voxels);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  VolumeKind kind() const noexcept { return kind_; }
  std::span<const float> voxels() const noexcept { return voxels_; }
  bool empty() const noexcept { return voxels_.empty(); }

  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return static_cast<std::size_t>(x + dims_.x * (y + dims_.y * z));
  }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return voxels_[index(x, y, z)];
  }

  friend bool operator==(const Volume3D&, const Volume3D&) = default;

 private:
  Dims dims_{};
  Spacing spacing_{};
  VolumeKind kind_ = VolumeKind::intensity;
  std::vector<float> voxels_;
};

/// Default HU window covering lung parenchyma through contrast-enhanced vessels.
inline constexpr double kDefaultHuLow = -1000.0;
inline constexpr double kDefaultHuHigh = 400.0;

/// Parses an MVOL container held in memory.
Volume3D decode_volume(std::string_view bytes);
/// Canonical MVOL bytes for a volume.
std::string encode_volume(const Volume3D& v);

Volume3D read_volume(const std::filesystem::path& path);
void write_volume(const Volume3D& v, const std::filesystem::path& path);

/// Clamps to [lo, hi] and maps affinely onto [0, 1].
Volume3D normalize_intensity(const Volume3D& v, double lo = kDefaultHuLow,
                             double hi = kDefaultHuHigh);

}  // namespace pepnet
