#include "kernels3d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pepnet::kernels {

namespace {

// Output voxels processed together; the column tile is (K x kTile).
constexpr int kTile = 16;

struct ConvDims {
  std::int64_t od, oh, ow, P, K;
  int kd, kh, kw;
};

template <typename T>
ConvDims conv_dims(const Activation<T>& x, const ConvGeometry& g) {
  ConvDims cd{};
  cd.od = conv_out_size(x.d, g.kernel[0], g.stride[0], g.padding[0]);
  cd.oh = conv_out_size(x.h, g.kernel[1], g.stride[1], g.padding[1]);
  cd.ow = conv_out_size(x.w, g.kernel[2], g.stride[2], g.padding[2]);
  cd.P = cd.od * cd.oh * cd.ow;
  cd.kd = g.kernel[0];
  cd.kh = g.kernel[1];
  cd.kw = g.kernel[2];
  cd.K = x.c * cd.kd * cd.kh * cd.kw;
  return cd;
}

// Gathers the receptive fields of output voxels [p0, p0 + kTile) of sample i
// into col[k * kTile + t]; out-of-range taps and voxels past P are zero.
template <typename T>
void gather_columns(const Activation<T>& x, std::int64_t i, const ConvGeometry& g,
                    const ConvDims& cd, std::int64_t p0, std::vector<double>& col) {
  std::fill(col.begin(), col.end(), 0.0);
  const std::int64_t tn = std::min<std::int64_t>(kTile, cd.P - p0);
  for (std::int64_t t = 0; t < tn; ++t) {
    const std::int64_t p = p0 + t;
    const std::int64_t ox = p % cd.ow;
    const std::int64_t oy = (p / cd.ow) % cd.oh;
    const std::int64_t oz = p / (cd.ow * cd.oh);
    const std::int64_t z0 = oz * g.stride[0] - g.padding[0];
    const std::int64_t y0 = oy * g.stride[1] - g.padding[1];
    const std::int64_t x0 = ox * g.stride[2] - g.padding[2];
    std::int64_t k = 0;
    for (std::int64_t ch = 0; ch < x.c; ++ch) {
      const T* src = x.channel(i, ch);
      for (int a = 0; a < cd.kd; ++a) {
        const std::int64_t iz = z0 + a;
        if (iz < 0 || iz >= x.d) {
          k += cd.kh * cd.kw;
          continue;
        }
        for (int b = 0; b < cd.kh; ++b) {
          const std::int64_t iy = y0 + b;
          if (iy < 0 || iy >= x.h) {
            k += cd.kw;
            continue;
          }
          const T* row = src + (iz * x.h + iy) * x.w;
          for (int c = 0; c < cd.kw; ++c, ++k) {
            const std::int64_t ix = x0 + c;
            if (ix >= 0 && ix < x.w) col[static_cast<std::size_t>(k * kTile + t)] = row[ix];
          }
        }
      }
    }
  }
}

// Inverse of gather_columns: adds dcol back onto the input positions.
template <typename T>
void scatter_columns(std::vector<double>& dx, const Activation<T>& x, std::int64_t i,
                     const ConvGeometry& g, const ConvDims& cd, std::int64_t p0,
                     const std::vector<double>& dcol) {
  const std::int64_t tn = std::min<std::int64_t>(kTile, cd.P - p0);
  const std::int64_t base = i * x.c * x.spatial();
  for (std::int64_t t = 0; t < tn; ++t) {
    const std::int64_t p = p0 + t;
    const std::int64_t ox = p % cd.ow;
    const std::int64_t oy = (p / cd.ow) % cd.oh;
    const std::int64_t oz = p / (cd.ow * cd.oh);
    const std::int64_t z0 = oz * g.stride[0] - g.padding[0];
    const std::int64_t y0 = oy * g.stride[1] - g.padding[1];
    const std::int64_t x0 = ox * g.stride[2] - g.padding[2];
    std::int64_t k = 0;
    for (std::int64_t ch = 0; ch < x.c; ++ch) {
      for (int a = 0; a < cd.kd; ++a) {
        for (int b = 0; b < cd.kh; ++b) {
          for (int c = 0; c < cd.kw; ++c, ++k) {
            const std::int64_t iz = z0 + a, iy = y0 + b, ix = x0 + c;
            if (iz < 0 || iz >= x.d || iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
            dx[static_cast<std::size_t>(base + ch * x.spatial() + (iz * x.h + iy) * x.w + ix)] +=
                dcol[static_cast<std::size_t>(k * kTile + t)];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Activation<T> conv3d_forward(const Activation<T>& x, std::span<const T> weight,
                             const ConvGeometry& g) {
  const ConvDims cd = conv_dims(x, g);
  Activation<T> y(x.n, g.out_channels, cd.od, cd.oh, cd.ow);
  std::vector<double> col(static_cast<std::size_t>(cd.K * kTile));
  for (std::int64_t i = 0; i < x.n; ++i) {
    for (std::int64_t p0 = 0; p0 < cd.P; p0 += kTile) {
      gather_columns(x, i, g, cd, p0, col);
      const std::int64_t tn = std::min<std::int64_t>(kTile, cd.P - p0);
      for (int oc = 0; oc < g.out_channels; ++oc) {
        const T* wr = weight.data() + oc * cd.K;
        double acc[kTile] = {};
        const double* c = col.data();
        for (std::int64_t k = 0; k < cd.K; ++k, c += kTile) {
          const double wv = static_cast<double>(wr[k]);
          for (int t = 0; t < kTile; ++t) acc[t] += wv * c[t];
        }
        T* out = y.channel(i, oc) + p0;
        for (std::int64_t t = 0; t < tn; ++t) out[t] = static_cast<T>(acc[t]);
      }
    }
  }
  return y;
}

template <typename T>
void conv3d_backward(const Activation<T>& x, std::span<const T> weight, const ConvGeometry& g,
                     const Activation<T>& dy, std::span<double> grad_weight, Activation<T>* dx) {
  const ConvDims cd = conv_dims(x, g);
  std::vector<double> col(static_cast<std::size_t>(cd.K * kTile));
  std::vector<double> dcol(static_cast<std::size_t>(cd.K * kTile));
  std::vector<double> dx_acc;
  if (dx) dx_acc.assign(x.data.size(), 0.0);
  for (std::int64_t i = 0; i < x.n; ++i) {
    for (std::int64_t p0 = 0; p0 < cd.P; p0 += kTile) {
      gather_columns(x, i, g, cd, p0, col);
      const std::int64_t tn = std::min<std::int64_t>(kTile, cd.P - p0);
      std::fill(dcol.begin(), dcol.end(), 0.0);
      for (int oc = 0; oc < g.out_channels; ++oc) {
        double d[kTile] = {};
        const T* src = dy.channel(i, oc) + p0;
        for (std::int64_t t = 0; t < tn; ++t) d[t] = static_cast<double>(src[t]);
        const T* wr = weight.data() + oc * cd.K;
        double* gw = grad_weight.data() + oc * cd.K;
        const double* c = col.data();
        double* dc = dcol.data();
        for (std::int64_t k = 0; k < cd.K; ++k, c += kTile, dc += kTile) {
          double s = 0.0;
          for (int t = 0; t < kTile; ++t) s += d[t] * c[t];
          gw[k] += s;
          if (dx) {
            const double wv = static_cast<double>(wr[k]);
            for (int t = 0; t < kTile; ++t) dc[t] += wv * d[t];
          }
        }
      }
      if (dx) scatter_columns(dx_acc, x, i, g, cd, p0, dcol);
    }
  }
  if (dx) {
    *dx = Activation<T>(x.n, x.c, x.d, x.h, x.w);
    std::transform(dx_acc.begin(), dx_acc.end(), dx->data.begin(),
                   [](double v) { return static_cast<T>(v); });
  }
}

template <typename T>
void batchnorm_inference(Activation<T>& x, const BatchNormParams<T>& p, std::span<const T> mean,
                         std::span<const T> var) {
  for (std::int64_t ch = 0; ch < x.c; ++ch) {
    const double scale = static_cast<double>(p.gamma[ch]) /
                         std::sqrt(static_cast<double>(var[ch]) + kBatchNormEps);
    const double shift = static_cast<double>(p.beta[ch]) - scale * static_cast<double>(mean[ch]);
    for (std::int64_t i = 0; i < x.n; ++i) {
      T* v = x.channel(i, ch);
      for (std::int64_t s = 0; s < x.spatial(); ++s) {
        v[s] = static_cast<T>(scale * static_cast<double>(v[s]) + shift);
      }
    }
  }
}

template <typename T>
Activation<T> batchnorm_train(const Activation<T>& x, const BatchNormParams<T>& p,
                              BatchNormTape<T>& tape) {
  const std::int64_t M = x.n * x.spatial();
  tape.mean.assign(static_cast<std::size_t>(x.c), 0.0);
  tape.var.assign(static_cast<std::size_t>(x.c), 0.0);
  tape.invstd.assign(static_cast<std::size_t>(x.c), 0.0);
  tape.xhat = Activation<T>(x.n, x.c, x.d, x.h, x.w);
  Activation<T> y(x.n, x.c, x.d, x.h, x.w);
  for (std::int64_t ch = 0; ch < x.c; ++ch) {
    double sum = 0.0;
    for (std::int64_t i = 0; i < x.n; ++i) {
      const T* v = x.channel(i, ch);
      for (std::int64_t s = 0; s < x.spatial(); ++s) sum += static_cast<double>(v[s]);
    }
    const double mean = sum / static_cast<double>(M);
    double sq = 0.0;
    for (std::int64_t i = 0; i < x.n; ++i) {
      const T* v = x.channel(i, ch);
      for (std::int64_t s = 0; s < x.spatial(); ++s) {
        const double dv = static_cast<double>(v[s]) - mean;
        sq += dv * dv;
      }
    }
    const double var = sq / static_cast<double>(M);
    const double invstd = 1.0 / std::sqrt(var + kBatchNormEps);
    tape.mean[ch] = mean;
    tape.var[ch] = var;
    tape.invstd[ch] = invstd;
    const double gamma = static_cast<double>(p.gamma[ch]);
    const double beta = static_cast<double>(p.beta[ch]);
    for (std::int64_t i = 0; i < x.n; ++i) {
      const T* v = x.channel(i, ch);
      T* xh = tape.xhat.channel(i, ch);
      T* out = y.channel(i, ch);
      for (std::int64_t s = 0; s < x.spatial(); ++s) {
        const double n = (static_cast<double>(v[s]) - mean) * invstd;
        xh[s] = static_cast<T>(n);
        out[s] = static_cast<T>(gamma * n + beta);
      }
    }
  }
  return y;
}

template <typename T>
Activation<T> batchnorm_backward(const Activation<T>& dy, std::span<const T> gamma,
                                 const BatchNormTape<T>& tape, std::span<double> grad_gamma,
                                 std::span<double> grad_beta) {
  const std::int64_t M = dy.n * dy.spatial();
  Activation<T> dx(dy.n, dy.c, dy.d, dy.h, dy.w);
  for (std::int64_t ch = 0; ch < dy.c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t i = 0; i < dy.n; ++i) {
      const T* g = dy.channel(i, ch);
      const T* xh = tape.xhat.channel(i, ch);
      for (std::int64_t s = 0; s < dy.spatial(); ++s) {
        sum_dy += static_cast<double>(g[s]);
        sum_dy_xhat += static_cast<double>(g[s]) * static_cast<double>(xh[s]);
      }
    }
    grad_beta[ch] += sum_dy;
    grad_gamma[ch] += sum_dy_xhat;
    const double k = static_cast<double>(gamma[ch]) * tape.invstd[ch] / static_cast<double>(M);
    for (std::int64_t i = 0; i < dy.n; ++i) {
      const T* g = dy.channel(i, ch);
      const T* xh = tape.xhat.channel(i, ch);
      T* out = dx.channel(i, ch);
      for (std::int64_t s = 0; s < dy.spatial(); ++s) {
        out[s] = static_cast<T>(k * (static_cast<double>(M) * static_cast<double>(g[s]) - sum_dy -
                                     static_cast<double>(xh[s]) * sum_dy_xhat));
      }
    }
  }
  return dx;
}

template <typename T>
void relu_inplace(Activation<T>& x) {
  for (T& v : x.data) v = v < T{0} ? T{0} : v;  // NaN passes through
}

template <typename T>
void relu_backward_inplace(Activation<T>& dy, const Activation<T>& out) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    if (!(out.data[i] > T{0})) dy.data[i] = T{0};
  }
}

template <typename T>
Activation<T> maxpool3d_forward(const Activation<T>& x, std::vector<std::int64_t>* argmax) {
  const std::int64_t od = conv_out_size(x.d, 3, 2, 1);
  const std::int64_t oh = conv_out_size(x.h, 3, 2, 1);
  const std::int64_t ow = conv_out_size(x.w, 3, 2, 1);
  Activation<T> y(x.n, x.c, od, oh, ow);
  if (argmax) argmax->assign(y.data.size(), 0);
  std::size_t o = 0;
  for (std::int64_t i = 0; i < x.n; ++i) {
    for (std::int64_t ch = 0; ch < x.c; ++ch) {
      const T* src = x.channel(i, ch);
      const std::int64_t base = (i * x.c + ch) * x.spatial();
      for (std::int64_t z = 0; z < od; ++z) {
        for (std::int64_t yy = 0; yy < oh; ++yy) {
          for (std::int64_t xx = 0; xx < ow; ++xx, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t best_idx = -1;
            for (int a = 0; a < 3; ++a) {
              const std::int64_t iz = 2 * z - 1 + a;
              if (iz < 0 || iz >= x.d) continue;
              for (int b = 0; b < 3; ++b) {
                const std::int64_t iy = 2 * yy - 1 + b;
                if (iy < 0 || iy >= x.h) continue;
                for (int c = 0; c < 3; ++c) {
                  const std::int64_t ix = 2 * xx - 1 + c;
                  if (ix < 0 || ix >= x.w) continue;
                  const std::int64_t idx = (iz * x.h + iy) * x.w + ix;
                  if (best_idx < 0 || src[idx] > best) {
                    best = src[idx];
                    best_idx = idx;
                  }
                }
              }
            }
            y.data[o] = best;
            if (argmax) (*argmax)[o] = base + best_idx;
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Activation<T> maxpool3d_backward(const Activation<T>& dy, const std::vector<std::int64_t>& argmax,
                                 const Activation<T>& x_shape) {
  Activation<T> dx(x_shape.n, x_shape.c, x_shape.d, x_shape.h, x_shape.w);
  std::vector<double> acc(dx.data.size(), 0.0);
  for (std::size_t o = 0; o < dy.data.size(); ++o) {
    acc[static_cast<std::size_t>(argmax[o])] += static_cast<double>(dy.data[o]);
  }
  std::transform(acc.begin(), acc.end(), dx.data.begin(),
                 [](double v) { return static_cast<T>(v); });
  return dx;
}

template <typename T>
std::vector<double> global_avg_pool(const Activation<T>& x) {
  std::vector<double> out(static_cast<std::size_t>(x.n * x.c));
  for (std::int64_t i = 0; i < x.n; ++i) {
    for (std::int64_t ch = 0; ch < x.c; ++ch) {
      const T* v = x.channel(i, ch);
      double s = 0.0;
      for (std::int64_t k = 0; k < x.spatial(); ++k) s += static_cast<double>(v[k]);
      out[static_cast<std::size_t>(i * x.c + ch)] = s / static_cast<double>(x.spatial());
    }
  }
  return out;
}

#define PEPNET_INSTANTIATE_KERNELS(T)                                                           \
  template Activation<T> conv3d_forward(const Activation<T>&, std::span<const T>,              \
                                        const ConvGeometry&);                                   \
  template void conv3d_backward(const Activation<T>&, std::span<const T>, const ConvGeometry&, \
                                const Activation<T>&, std::span<double>, Activation<T>*);      \
  template void batchnorm_inference(Activation<T>&, const BatchNormParams<T>&,                 \
                                    std::span<const T>, std::span<const T>);                    \
  template Activation<T> batchnorm_train(const Activation<T>&, const BatchNormParams<T>&,      \
                                         BatchNormTape<T>&);                                    \
  template Activation<T> batchnorm_backward(const Activation<T>&, std::span<const T>,          \
                                            const BatchNormTape<T>&, std::span<double>,         \
                                            std::span<double>);                                 \
  template void relu_inplace(Activation<T>&);                                                   \
  template void relu_backward_inplace(Activation<T>&, const Activation<T>&);                    \
  template Activation<T> maxpool3d_forward(const Activation<T>&, std::vector<std::int64_t>*);  \
  template Activation<T> maxpool3d_backward(const Activation<T>&,                               \
                                            const std::vector<std::int64_t>&,                   \
                                            const Activation<T>&);                              \
  template std::vector<double> global_avg_pool(const Activation<T>&);

PEPNET_INSTANTIATE_KERNELS(float)
PEPNET_INSTANTIATE_KERNELS(double)

#undef PEPNET_INSTANTIATE_KERNELS

}  // namespace pepnet::kernels
