#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace pepnet {

/// Dense batch of feature maps laid out as (n, c, d, h, w), w fastest.
template <typename T>
struct Activation {
  std::int64_t n = 0, c = 0, d = 0, h = 0, w = 0;
  std::vector<T> data;

  Activation() = default;
  Activation(std::int64_t n_, std::int64_t c_, std::int64_t d_, std::int64_t h_, std::int64_t w_)
      : n(n_), c(c_), d(d_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_ * c_ * d_ * h_ * w_), T{}) {}

  std::int64_t spatial() const noexcept { return d * h * w; }
  std::array<std::int64_t, 4> shape() const noexcept { return {c, d, h, w}; }
  T* channel(std::int64_t i, std::int64_t ch) noexcept {
    return data.data() + (i * c + ch) * spatial();
  }
  const T* channel(std::int64_t i, std::int64_t ch) const noexcept {
    return data.data() + (i * c + ch) * spatial();
  }
};

}  // namespace pepnet
