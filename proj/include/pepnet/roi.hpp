#pragma once

#include <array>
#include <cstdint>

#include "pepnet/volume.hpp"

namespace pepnet {

/// Axis-aligned box of inclusive voxel indices (x, y, z).
struct RoiBox {
  std::array<std::int64_t, 3> min{};
  std::array<std::int64_t, 3> max{};

  Dims extent() const noexcept {
    return {max[0] - min[0] + 1, max[1] - min[1] + 1, max[2] - min[2] + 1};
  }
  bool valid_for(const Dims& d) const noexcept;
  friend bool operator==(const RoiBox&, const RoiBox&) = default;
};

/// Default margin (voxels) added around the tight box before cropping.
inline constexpr std::int64_t kDefaultCropMargin = 2;
/// Default network input grid.
inline constexpr Dims kDefaultGrid{64, 64, 64};

/// Minimal box containing every nonzero voxel of the mask. All components of
/// a multi-part mask share one box. Throws DataError("empty mask") when the
/// mask has no nonzero voxel.
RoiBox tight_bbox(const Volume3D& mask);

/// Sub-volume over `box` grown by `margin` on every face, clamped to bounds.
Volume3D crop(const Volume3D& v, const RoiBox& box, std::int64_t margin = 0);

/// Trilinear resample onto `out` voxels using voxel-center alignment; the
/// spacing is rescaled so the physical extent is unchanged.
Volume3D resize_trilinear(const Volume3D& v, Dims out);

}  // namespace pepnet
