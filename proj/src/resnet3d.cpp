#include "pepnet/resnet3d.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "kernels3d.hpp"
#include "pepnet/error.hpp"
#include "pepnet/parallel.hpp"
#include "pepnet/seed.hpp"

namespace pepnet {

using kernels::BatchNormTape;

template <typename T>
LinearHead<T> LinearHead<T>::zeros(int in_features) {
  LinearHead h;
  h.in_features = in_features;
  h.weight.assign(static_cast<std::size_t>(2 * in_features), T{0});
  h.bias.assign(2, T{0});
  return h;
}

template <typename T>
LinearHead<T> LinearHead<T>::random(int in_features, std::uint64_t seed) {
  LinearHead h = zeros(in_features);
  std::mt19937_64 rng(derive_seed(seed, "head.weight"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  std::uniform_real_distribution<double> uni(-bound, bound);
  for (T& w : h.weight) w = static_cast<T>(uni(rng));
  return h;
}

bool FreezeMask::frozen(std::string_view name) const {
  return std::any_of(prefixes.begin(), prefixes.end(),
                     [&](const std::string& p) { return name.starts_with(p); });
}

template <typename T>
struct ResNet3d<T>::Tape {
  struct BlockTape {
    Activation<T> in, mid, out;
    BatchNormTape<T> bn1, bn2, down_bn;
  };
  Activation<T> input;
  Activation<T> stem_out;
  BatchNormTape<T> stem_bn;
  std::vector<std::int64_t> pool_argmax;
  std::vector<BlockTape> blocks;
  Activation<T> last;
};

template <typename T>
ResNet3d<T>::ResNet3d(NetworkConfig config, const WeightStore& store) : config_(std::move(config)) {
  config_.validate();
  require_valid_weights(store, config_);
  for (const auto& spec : required_tensors(config_)) {
    const Tensor& t = store.at(spec.name);
    Param<T> p{spec.name, spec.shape, std::vector<T>(t.data.begin(), t.data.end()), spec.trainable};
    index_.emplace(spec.name, params_.size());
    params_.push_back(std::move(p));
  }
  const auto& st = config_.stem;
  stem_conv_ = make_conv("stem.conv", st.out_channels, st.kernel, st.stride, st.padding);
  stem_bn_ = make_norm("stem.bn");
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    const int ch = config_.stages[s].channels;
    for (int b = 0; b < config_.stages[s].blocks; ++b) {
      const int stride = b == 0 ? NetworkConfig::stage_stride(s) : 1;
      Block blk;
      blk.name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const std::string p = blk.name + ".";
      blk.conv1 = make_conv(p + "conv1", ch, {3, 3, 3}, {stride, stride, stride}, {1, 1, 1});
      blk.bn1 = make_norm(p + "bn1");
      blk.conv2 = make_conv(p + "conv2", ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1});
      blk.bn2 = make_norm(p + "bn2");
      blk.projection = config_.needs_projection(s, b);
      if (blk.projection) {
        blk.down_conv =
            make_conv(p + "downsample.conv", ch, {1, 1, 1}, {stride, stride, stride}, {0, 0, 0});
        blk.down_bn = make_norm(p + "downsample.bn");
      }
      blocks_.push_back(std::move(blk));
    }
  }
}

template <typename T>
const Param<T>& ResNet3d<T>::param(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("no parameter named '" + std::string(name) + "'");
  return params_[it->second];
}

template <typename T>
typename ResNet3d<T>::Conv ResNet3d<T>::make_conv(const std::string& name, int out_channels,
                                                   Triple k, Triple s, Triple p) {
  return Conv{index_.at(name + ".weight"), k, s, p, out_channels};
}

template <typename T>
typename ResNet3d<T>::Norm ResNet3d<T>::make_norm(const std::string& prefix) {
  return Norm{index_.at(prefix + ".weight"), index_.at(prefix + ".bias"),
              index_.at(prefix + ".running_mean"), index_.at(prefix + ".running_var")};
}

template <typename T>
Activation<T> ResNet3d<T>::conv(const Activation<T>& x, const Conv& c) const {
  return kernels::conv3d_forward<T>(x, params_[c.weight].value,
                                    {c.out_channels, c.kernel, c.stride, c.padding});
}

template <typename T>
void ResNet3d<T>::norm_inference(Activation<T>& x, const Norm& n) const {
  kernels::batchnorm_inference<T>(x, {params_[n.gamma].value, params_[n.beta].value},
                                  params_[n.mean].value, params_[n.var].value);
}

template <typename T>
Activation<T> ResNet3d<T>::run(const Activation<T>& input, Tape* tape,
                               std::vector<LayerShape>* trace) const {
  if (input.c != config_.in_channels) {
    throw DataError("input has " + std::to_string(input.c) + " channels, network expects " +
                    std::to_string(config_.in_channels));
  }
  auto norm = [&](Activation<T>& x, const Norm& n, BatchNormTape<T>* bt) {
    if (bt) {
      x = kernels::batchnorm_train<T>(x, {params_[n.gamma].value, params_[n.beta].value}, *bt);
    } else {
      norm_inference(x, n);
    }
  };
  auto record = [&](const std::string& name, const Activation<T>& x) {
    if (trace) trace->push_back({name, x.shape()});
  };

  if (tape) tape->input = input;
  Activation<T> x = conv(input, stem_conv_);
  norm(x, stem_bn_, tape ? &tape->stem_bn : nullptr);
  kernels::relu_inplace(x);
  record("stem", x);
  if (config_.stem.max_pool) {
    if (tape) tape->stem_out = x;
    x = kernels::maxpool3d_forward<T>(x, tape ? &tape->pool_argmax : nullptr);
    record("stem.pool", x);
  } else if (tape) {
    tape->stem_out = x;
  }
  if (tape) tape->blocks.resize(blocks_.size());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& blk = blocks_[i];
    auto* bt = tape ? &tape->blocks[i] : nullptr;
    Activation<T> a = conv(x, blk.conv1);
    norm(a, blk.bn1, bt ? &bt->bn1 : nullptr);
    kernels::relu_inplace(a);
    Activation<T> b = conv(a, blk.conv2);
    norm(b, blk.bn2, bt ? &bt->bn2 : nullptr);
    if (blk.projection) {
      Activation<T> sc = conv(x, blk.down_conv);
      norm(sc, blk.down_bn, bt ? &bt->down_bn : nullptr);
      for (std::size_t k = 0; k < b.data.size(); ++k) b.data[k] += sc.data[k];
    } else {
      for (std::size_t k = 0; k < b.data.size(); ++k) b.data[k] += x.data[k];
    }
    kernels::relu_inplace(b);
    record(blk.name, b);
    if (bt) {
      bt->in = std::move(x);
      bt->mid = std::move(a);
      bt->out = b;
    }
    x = std::move(b);
  }
  if (trace) trace->push_back({"pool", {x.c, 1, 1, 1}});
  return x;
}

template <typename T>
std::vector<double> ResNet3d<T>::forward_features(const Activation<T>& input,
                                                  std::vector<LayerShape>* trace) const {
  std::vector<LayerShape> local;
  Activation<T> out = run(input, nullptr, trace ? &local : nullptr);
  if (trace) *trace = std::move(local);
  return kernels::global_avg_pool(out);
}

template <typename T>
double ResNet3d<T>::loss_and_gradients(const Activation<T>& input, std::span<const int> labels,
                                       const LinearHead<T>& head, Gradients* grads,
                                       bool update_running_stats, const FreezeMask& freeze) {
  const std::int64_t n = input.n;
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw DataError("label count does not match batch size");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
  }
  const int F = config_.feature_dim();
  if (head.in_features != F) throw DataError("head width does not match feature dimension");

  Tape tape;
  Activation<T> last = run(input, &tape, nullptr);
  const std::vector<double> feats = kernels::global_avg_pool(last);

  double loss = 0.0;
  std::vector<double> dlogits(static_cast<std::size_t>(2 * n));
  for (std::int64_t i = 0; i < n; ++i) {
    double z[2];
    for (int j = 0; j < 2; ++j) {
      double s = static_cast<double>(head.bias[j]);
      for (int c = 0; c < F; ++c) {
        s += static_cast<double>(head.weight[j * F + c]) * feats[static_cast<std::size_t>(i * F + c)];
      }
      z[j] = s;
    }
    const double zmax = std::max(z[0], z[1]);
    const double lse = zmax + std::log(std::exp(z[0] - zmax) + std::exp(z[1] - zmax));
    const int y = labels[static_cast<std::size_t>(i)];
    loss += lse - z[y];
    for (int j = 0; j < 2; ++j) {
      const double p = std::exp(z[j] - lse);
      dlogits[static_cast<std::size_t>(2 * i + j)] =
          (p - (j == y ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) throw DataError("training diverged: non-finite loss");

  if (update_running_stats) {
    auto update = [&](const Norm& nm, const BatchNormTape<T>& bt, std::int64_t count) {
      if (freeze.frozen(params_[nm.mean].name)) return;
      auto& rm = params_[nm.mean].value;
      auto& rv = params_[nm.var].value;
      const double unbias =
          count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
      for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = static_cast<T>((1.0 - kBatchNormMomentum) * static_cast<double>(rm[c]) +
                               kBatchNormMomentum * bt.mean[c]);
        rv[c] = static_cast<T>((1.0 - kBatchNormMomentum) * static_cast<double>(rv[c]) +
                               kBatchNormMomentum * bt.var[c] * unbias);
      }
    };
    update(stem_bn_, tape.stem_bn, n * tape.stem_out.spatial());
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& bt = tape.blocks[i];
      update(blocks_[i].bn1, bt.bn1, n * bt.mid.spatial());
      update(blocks_[i].bn2, bt.bn2, n * bt.out.spatial());
      if (blocks_[i].projection) update(blocks_[i].down_bn, bt.down_bn, n * bt.out.spatial());
    }
  }
  if (!grads) return loss;

  grads->params.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    grads->params[i].assign(params_[i].value.size(), 0.0);
  }
  grads->head_weight.assign(static_cast<std::size_t>(2 * F), 0.0);
  grads->head_bias.assign(2, 0.0);

  Activation<T> d(last.n, last.c, last.d, last.h, last.w);
  const double inv_spatial = 1.0 / static_cast<double>(last.spatial());
  for (std::int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double g = dlogits[static_cast<std::size_t>(2 * i + j)];
      grads->head_bias[j] += g;
      for (int c = 0; c < F; ++c) {
        grads->head_weight[static_cast<std::size_t>(j * F + c)] +=
            g * feats[static_cast<std::size_t>(i * F + c)];
      }
    }
    for (int c = 0; c < F; ++c) {
      const double df = static_cast<double>(head.weight[c]) * dlogits[2 * i] +
                        static_cast<double>(head.weight[F + c]) * dlogits[2 * i + 1];
      T* dst = d.channel(i, c);
      std::fill(dst, dst + d.spatial(), static_cast<T>(df * inv_spatial));
    }
  }

  auto norm_back = [&](const Activation<T>& dy, const Norm& nm, const BatchNormTape<T>& bt) {
    return kernels::batchnorm_backward<T>(dy, params_[nm.gamma].value, bt,
                                          grads->params[nm.gamma], grads->params[nm.beta]);
  };
  auto conv_back = [&](const Activation<T>& x, const Conv& c, const Activation<T>& dy,
                       Activation<T>* dx) {
    kernels::conv3d_backward<T>(x, params_[c.weight].value,
                                {c.out_channels, c.kernel, c.stride, c.padding}, dy,
                                grads->params[c.weight], dx);
  };

  for (std::size_t bi = blocks_.size(); bi-- > 0;) {
    const Block& blk = blocks_[bi];
    const auto& bt = tape.blocks[bi];
    kernels::relu_backward_inplace(d, bt.out);
    Activation<T> d2 = norm_back(d, blk.bn2, bt.bn2);
    Activation<T> dmid;
    conv_back(bt.mid, blk.conv2, d2, &dmid);
    kernels::relu_backward_inplace(dmid, bt.mid);
    Activation<T> d1 = norm_back(dmid, blk.bn1, bt.bn1);
    Activation<T> din;
    conv_back(bt.in, blk.conv1, d1, &din);
    if (blk.projection) {
      Activation<T> dd = norm_back(d, blk.down_bn, bt.down_bn);
      Activation<T> dsc;
      conv_back(bt.in, blk.down_conv, dd, &dsc);
      for (std::size_t k = 0; k < din.data.size(); ++k) din.data[k] += dsc.data[k];
    } else {
      for (std::size_t k = 0; k < din.data.size(); ++k) din.data[k] += d.data[k];
    }
    d = std::move(din);
  }
  if (config_.stem.max_pool) d = kernels::maxpool3d_backward<T>(d, tape.pool_argmax, tape.stem_out);
  kernels::relu_backward_inplace(d, tape.stem_out);
  Activation<T> ds = norm_back(d, stem_bn_, tape.stem_bn);
  conv_back(tape.input, stem_conv_, ds, nullptr);
  return loss;
}

template <typename T>
std::uint64_t ResNet3d<T>::nonlinearity_signature(const Activation<T>& input) const {
  Tape tape;
  run(input, &tape, nullptr);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001B3ULL;
  };
  auto signs = [&](const Activation<T>& a) {
    for (T v : a.data) mix(v > T(0) ? 1 : 2);
  };
  signs(tape.stem_out);
  for (std::int64_t i : tape.pool_argmax) mix(static_cast<std::uint64_t>(i) + 3);
  for (const auto& b : tape.blocks) {
    signs(b.mid);
    signs(b.out);
  }
  return h;
}

template <typename T>
WeightStore ResNet3d<T>::to_weight_store() const {
  WeightStore store;
  for (const auto& p : params_) {
    store.set(p.name, Tensor{p.shape, std::vector<float>(p.value.begin(), p.value.end())});
  }
  return store;
}

template <typename T>
Activation<T> make_batch(std::span<const Volume3D> volumes) {
  if (volumes.empty()) throw DataError("empty batch");
  const Dims dims = volumes.front().dims();
  Activation<T> batch(static_cast<std::int64_t>(volumes.size()), 1, dims.z, dims.y, dims.x);
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (volumes[i].dims() != dims) throw DataError("batch volumes must share the same dims");
    auto src = volumes[i].voxels();
    std::copy(src.begin(), src.end(), batch.channel(static_cast<std::int64_t>(i), 0));
  }
  return batch;
}

std::vector<std::vector<double>> forward_features(const ResNet3d<float>& model,
                                                  std::span<const Volume3D> volumes,
                                                  unsigned threads) {
  std::vector<std::vector<double>> out(volumes.size());
  parallel_for(volumes.size(), threads, [&](std::size_t i) {
    out[i] = model.forward_features(make_batch<float>(volumes.subspan(i, 1)));
  });
  return out;
}

template <typename T>
double train_step(ResNet3d<T>& model, LinearHead<T>& head, TrainState& state,
                  std::span<const Volume3D> batch, std::span<const int> labels,
                  const FreezeMask& freeze) {
  Gradients grads;
  const double loss = model.loss_and_gradients(make_batch<T>(batch), labels, head, &grads,
                                               /*update_running_stats=*/true, freeze);
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto adam = [&](const std::string& name, std::vector<T>& value, const std::vector<double>& g) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != value.size()) {
      m.assign(value.size(), 0.0);
      v.assign(value.size(), 0.0);
    }
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double step = state.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + state.epsilon);
      value[k] = static_cast<T>(static_cast<double>(value[k]) - step);
    }
  };
  auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable || freeze.frozen(params[i].name)) continue;
    adam(params[i].name, params[i].value, grads.params[i]);
  }
  adam("head.weight", head.weight, grads.head_weight);
  adam("head.bias", head.bias, grads.head_bias);
  return loss;
}

template struct LinearHead<float>;
template struct LinearHead<double>;
template class ResNet3d<float>;
template class ResNet3d<double>;
template Activation<float> make_batch<float>(std::span<const Volume3D>);
template Activation<double> make_batch<double>(std::span<const Volume3D>);
template double train_step<float>(ResNet3d<float>&, LinearHead<float>&, TrainState&,
                                  std::span<const Volume3D>, std::span<const int>,
                                  const FreezeMask&);
template double train_step<double>(ResNet3d<double>&, LinearHead<double>&, TrainState&,
                                   std::span<const Volume3D>, std::span<const int>,
                                   const FreezeMask&);

}  // namespace pepnet
