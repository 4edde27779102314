#include "pepnet/network_config.hpp"

#include <numeric>

#include "pepnet/error.hpp"

namespace pepnet {

namespace {

std::string block_name(std::size_t stage, int block) {
  return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(block);
}

std::string block_prefix(std::size_t stage, int block) { return block_name(stage, block) + "."; }

void add_bn(std::vector<TensorSpec>& out, const std::string& prefix, int channels) {
  const std::vector<std::int64_t> shape{channels};
  out.push_back({prefix + ".weight", shape, true});
  out.push_back({prefix + ".bias", shape, true});
  out.push_back({prefix + ".running_mean", shape, false});
  out.push_back({prefix + ".running_var", shape, false});
}

}  // namespace

void NetworkConfig::validate() const {
  if (in_channels < 1) throw DataError("in_channels must be positive");
  if (stem.out_channels < 1) throw DataError("stem out_channels must be positive");
  for (int a = 0; a < 3; ++a) {
    if (stem.kernel[a] < 1 || stem.stride[a] < 1 || stem.padding[a] < 0) {
      throw DataError("invalid stem kernel/stride/padding");
    }
  }
  if (stages.empty()) throw DataError("network needs at least one stage");
  for (const auto& s : stages) {
    if (s.blocks < 1 || s.channels < 1) throw DataError("stage blocks and channels must be positive");
  }
  if (stem.out_channels != stages.front().channels) {
    throw DataError("stem out_channels must equal the first stage's channels");
  }
}

bool NetworkConfig::needs_projection(std::size_t stage, int block) const {
  if (block != 0) return false;
  const int in_ch = stage == 0 ? stem.out_channels : stages[stage - 1].channels;
  return stage_stride(stage) != 1 || in_ch != stages[stage].channels;
}

std::int64_t TensorSpec::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::vector<TensorSpec> required_tensors(const NetworkConfig& config) {
  config.validate();
  std::vector<TensorSpec> out;
  const auto& k = config.stem.kernel;
  out.push_back({"stem.conv.weight", {config.stem.out_channels, config.in_channels, k[0], k[1], k[2]}});
  add_bn(out, "stem.bn", config.stem.out_channels);
  int in_ch = config.stem.out_channels;
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    const int ch = config.stages[s].channels;
    for (int b = 0; b < config.stages[s].blocks; ++b) {
      const std::string p = block_prefix(s, b);
      out.push_back({p + "conv1.weight", {ch, in_ch, 3, 3, 3}});
      add_bn(out, p + "bn1", ch);
      out.push_back({p + "conv2.weight", {ch, ch, 3, 3, 3}});
      add_bn(out, p + "bn2", ch);
      if (config.needs_projection(s, b)) {
        out.push_back({p + "downsample.conv.weight", {ch, in_ch, 1, 1, 1}});
        add_bn(out, p + "downsample.bn", ch);
      }
      in_ch = ch;
    }
  }
  return out;
}

std::int64_t trainable_parameter_count(const NetworkConfig& config) {
  std::int64_t total = 0;
  for (const auto& t : required_tensors(config)) {
    if (t.trainable) total += t.numel();
  }
  return total;
}

std::vector<LayerShape> declared_shapes(const NetworkConfig& config, Dims input) {
  config.validate();
  std::array<std::int64_t, 4> s{config.in_channels, input.z, input.y, input.x};
  std::vector<LayerShape> out;
  const auto& st = config.stem;
  s = {st.out_channels, conv_out_size(s[1], st.kernel[0], st.stride[0], st.padding[0]),
       conv_out_size(s[2], st.kernel[1], st.stride[1], st.padding[1]),
       conv_out_size(s[3], st.kernel[2], st.stride[2], st.padding[2])};
  out.push_back({"stem", s});
  if (st.max_pool) {
    s = {s[0], conv_out_size(s[1], 3, 2, 1), conv_out_size(s[2], 3, 2, 1),
         conv_out_size(s[3], 3, 2, 1)};
    out.push_back({"stem.pool", s});
  }
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    for (int b = 0; b < config.stages[i].blocks; ++b) {
      const int stride = b == 0 ? NetworkConfig::stage_stride(i) : 1;
      s = {config.stages[i].channels, conv_out_size(s[1], 3, stride, 1),
           conv_out_size(s[2], 3, stride, 1), conv_out_size(s[3], 3, stride, 1)};
      out.push_back({block_name(i, b), s});
    }
  }
  out.push_back({"pool", {s[0], 1, 1, 1}});
  return out;
}

nlohmann::ordered_json to_json(const NetworkConfig& c) {
  nlohmann::ordered_json j;
  j["in_channels"] = c.in_channels;
  j["stem"] = {{"kernel", c.stem.kernel},
               {"stride", c.stem.stride},
               {"padding", c.stem.padding},
               {"out_channels", c.stem.out_channels},
               {"max_pool", c.stem.max_pool}};
  auto stages = nlohmann::ordered_json::array();
  for (const auto& s : c.stages) stages.push_back({s.blocks, s.channels});
  j["stages"] = stages;
  return j;
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    c.in_channels = j.at("in_channels").get<int>();
    const auto& st = j.at("stem");
    c.stem.kernel = st.at("kernel").get<Triple>();
    c.stem.stride = st.at("stride").get<Triple>();
    c.stem.padding = st.at("padding").get<Triple>();
    c.stem.out_channels = st.at("out_channels").get<int>();
    c.stem.max_pool = st.at("max_pool").get<bool>();
    c.stages.clear();
    for (const auto& s : j.at("stages")) c.stages.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed network config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace pepnet
