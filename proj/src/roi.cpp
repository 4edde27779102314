#include "pepnet/roi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "pepnet/error.hpp"

namespace pepnet {

bool RoiBox::valid_for(const Dims& d) const noexcept {
  const std::array<std::int64_t, 3> n{d.x, d.y, d.z};
  for (int a = 0; a < 3; ++a) {
    if (min[a] < 0 || max[a] >= n[a] || min[a] > max[a]) return false;
  }
  return true;
}

RoiBox tight_bbox(const Volume3D& mask) {
  if (mask.kind() != VolumeKind::mask) throw DataError("tight_bbox expects a mask volume");
  const Dims& d = mask.dims();
  constexpr auto big = std::numeric_limits<std::int64_t>::max();
  RoiBox box{{big, big, big}, {-1, -1, -1}};
  auto vox = mask.voxels();
  std::size_t i = 0;
  for (std::int64_t z = 0; z < d.z; ++z) {
    for (std::int64_t y = 0; y < d.y; ++y) {
      for (std::int64_t x = 0; x < d.x; ++x, ++i) {
        if (vox[i] == 0.0f) continue;
        box.min = {std::min(box.min[0], x), std::min(box.min[1], y), std::min(box.min[2], z)};
        box.max = {std::max(box.max[0], x), std::max(box.max[1], y), std::max(box.max[2], z)};
      }
    }
  }
  if (box.max[0] < 0) throw DataError("empty mask");
  return box;
}

Volume3D crop(const Volume3D& v, const RoiBox& box, std::int64_t margin) {
  if (margin < 0) throw DataError("crop margin must be nonnegative");
  const Dims& d = v.dims();
  if (!box.valid_for(d)) throw DataError("ROI box out of bounds");
  const std::array<std::int64_t, 3> n{d.x, d.y, d.z};
  std::array<std::int64_t, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<std::int64_t>(0, box.min[a] - margin);
    hi[a] = std::min<std::int64_t>(n[a] - 1, box.max[a] + margin);
  }
  const Dims out{hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
  std::vector<float> vox;
  vox.reserve(static_cast<std::size_t>(out.count()));
  for (std::int64_t z = lo[2]; z <= hi[2]; ++z) {
    for (std::int64_t y = lo[1]; y <= hi[1]; ++y) {
      const float* row = v.voxels().data() + v.index(lo[0], y, z);
      vox.insert(vox.end(), row, row + out.x);
    }
  }
  return Volume3D(out, v.spacing(), v.kind(), std::move(vox));
}

namespace {

struct Tap {
  std::int64_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> axis_taps(std::int64_t n_in, std::int64_t n_out) {
  std::vector<Tap> taps(static_cast<std::size_t>(n_out));
  const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::int64_t o = 0; o < n_out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    const std::int64_t i1 = std::min(i0 + 1, n_in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Volume3D resize_trilinear(const Volume3D& v, Dims out) {
  if (!out.positive()) throw DataError("resize target dims must be positive");
  const Dims& in = v.dims();
  const auto tx = axis_taps(in.x, out.x);
  const auto ty = axis_taps(in.y, out.y);
  const auto tz = axis_taps(in.z, out.z);
  auto src = v.voxels();
  std::vector<float> vox(static_cast<std::size_t>(out.count()));
  std::size_t i = 0;
  for (const Tap& cz : tz) {
    for (const Tap& cy : ty) {
      for (const Tap& cx : tx) {
        auto sample = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
          return static_cast<double>(src[v.index(x, y, z)]);
        };
        auto lerp_x = [&](std::int64_t y, std::int64_t z) {
          return (1.0 - cx.w1) * sample(cx.i0, y, z) + cx.w1 * sample(cx.i1, y, z);
        };
        auto lerp_xy = [&](std::int64_t z) {
          return (1.0 - cy.w1) * lerp_x(cy.i0, z) + cy.w1 * lerp_x(cy.i1, z);
        };
        vox[i++] = static_cast<float>((1.0 - cz.w1) * lerp_xy(cz.i0) + cz.w1 * lerp_xy(cz.i1));
      }
    }
  }
  auto ratio = [](std::int64_t a, std::int64_t b) {
    return static_cast<double>(a) / static_cast<double>(b);
  };
  const Spacing sp{v.spacing().x * ratio(in.x, out.x), v.spacing().y * ratio(in.y, out.y),
                   v.spacing().z * ratio(in.z, out.z)};
  // Interpolated masks are no longer binary.
  return Volume3D(out, sp, VolumeKind::intensity, std::move(vox));
}

}  // namespace pepnet
