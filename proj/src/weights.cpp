#include "pepnet/weights.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "pepnet/error.hpp"
#include "pepnet/seed.hpp"

namespace pepnet {

namespace {

constexpr std::string_view kMagic = "MWTS\n";

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

std::string shape_string(const std::vector<std::int64_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor he_normal(const std::vector<std::int64_t>& shape, std::uint64_t seed) {
  Tensor t{shape, {}};
  const std::int64_t fan_in = t.numel() / shape.front();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  t.data.resize(static_cast<std::size_t>(t.numel()));
  for (float& v : t.data) v = static_cast<float>(normal(rng));
  return t;
}

Tensor filled(const std::vector<std::int64_t>& shape, float value) {
  Tensor t{shape, {}};
  t.data.assign(static_cast<std::size_t>(t.numel()), value);
  return t;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

Tensor bn_init(const std::string& name, const std::vector<std::int64_t>& shape) {
  const bool ones = ends_with(name, ".weight") || ends_with(name, ".running_var");
  return filled(shape, ones ? 1.0f : 0.0f);
}

}  // namespace

std::int64_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

const Tensor& WeightStore::at(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw DataError("missing weight tensor '" + std::string(name) + "'");
  return it->second;
}

Tensor& WeightStore::at(std::string_view name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw DataError("missing weight tensor '" + std::string(name) + "'");
  return it->second;
}

void WeightStore::set(std::string name, Tensor t) {
  if (static_cast<std::int64_t>(t.data.size()) != t.numel()) {
    throw DataError("tensor '" + name + "' data length does not match its shape");
  }
  entries_.insert_or_assign(std::move(name), std::move(t));
}

bool WeightStore::erase(std::string_view name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) return false;
  entries_.erase(it);
  return true;
}

std::vector<std::string> validate_weights(const WeightStore& store, const NetworkConfig& config) {
  std::vector<std::string> problems;
  std::map<std::string, bool, std::less<>> expected;
  for (const auto& spec : required_tensors(config)) {
    expected.emplace(spec.name, true);
    if (!store.contains(spec.name)) {
      problems.push_back("missing tensor " + spec.name);
      continue;
    }
    const auto& t = store.at(spec.name);
    if (t.shape != spec.shape) {
      problems.push_back("shape mismatch for " + spec.name + ": expected " +
                         shape_string(spec.shape) + ", found " + shape_string(t.shape));
    }
  }
  for (const auto& [name, t] : store.entries()) {
    if (!expected.contains(name)) problems.push_back("unexpected tensor " + name);
  }
  return problems;
}

void require_valid_weights(const WeightStore& store, const NetworkConfig& config) {
  const auto problems = validate_weights(store, config);
  if (problems.empty()) return;
  std::string msg = "weight store does not match network config:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw DataError(msg);
}

std::string encode_weights(const WeightStore& store) {
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : store.entries()) {
    const std::uint64_t len = 4 * t.data.size();
    manifest.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"len", len}});
    offset += len;
  }
  std::string out(kMagic);
  out += manifest.dump();
  out += '\n';
  const std::size_t base = out.size();
  out.resize(base + offset);
  char* dst = out.data() + base;
  for (const auto& [name, t] : store.entries()) {
    for (float f : t.data) {
      const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(f));
      std::memcpy(dst, &bits, 4);
      dst += 4;
    }
  }
  return out;
}

WeightStore decode_weights(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw FormatError("missing MWTS magic", 0);
  const std::size_t mbegin = kMagic.size();
  const std::size_t mend = bytes.find('\n', mbegin);
  if (mend == std::string_view::npos) throw FormatError("unterminated MWTS manifest", mbegin);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(mbegin, mend - mbegin));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed MWTS manifest: ") + e.what(), mbegin);
  }
  if (!manifest.is_array()) throw FormatError("MWTS manifest must be an array", mbegin);
  const std::size_t payload = mend + 1;
  const std::uint64_t payload_len = bytes.size() - payload;
  WeightStore store;
  for (const auto& entry : manifest) {
    Tensor t;
    std::string name;
    std::uint64_t offset = 0, len = 0;
    try {
      name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      offset = entry.at("offset").get<std::uint64_t>();
      len = entry.at("len").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed MWTS manifest entry: ") + e.what(), mbegin);
    }
    if (store.contains(name)) throw FormatError("duplicate tensor " + name, mbegin);
    for (auto d : t.shape) {
      if (d < 0) throw FormatError("negative dimension in tensor " + name, mbegin);
    }
    if (len != 4 * static_cast<std::uint64_t>(t.numel()) || len % 4 != 0) {
      throw FormatError("tensor " + name + " length does not match its shape", mbegin);
    }
    if (offset > payload_len || len > payload_len - offset) {
      throw FormatError("tensor " + name + " extends past end of payload", payload + offset);
    }
    t.data.resize(len / 4);
    const char* src = bytes.data() + payload + offset;
    for (float& f : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, src, 4);
      f = std::bit_cast<float>(to_little(bits));
      src += 4;
    }
    store.set(std::move(name), std::move(t));
  }
  return store;
}

WeightStore load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open weight file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_weights(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

void save_weights(const WeightStore& store, const std::filesystem::path& path) {
  const std::string bytes = encode_weights(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write weight file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

WeightStore init_weights(const NetworkConfig& config, std::uint64_t seed) {
  WeightStore store;
  for (const auto& spec : required_tensors(config)) {
    if (spec.shape.size() == 5) {
      store.set(spec.name, he_normal(spec.shape, derive_seed(seed, spec.name)));
    } else {
      store.set(spec.name, bn_init(spec.name, spec.shape));
    }
  }
  return store;
}

WeightStore replace_stem(WeightStore store, std::uint64_t seed, const StemConfig& stem,
                         int in_channels) {
  const auto& k = stem.kernel;
  store.set("stem.conv.weight",
            he_normal({stem.out_channels, in_channels, k[0], k[1], k[2]},
                      derive_seed(seed, "stem.conv.weight")));
  for (const char* suffix : {".weight", ".bias", ".running_mean", ".running_var"}) {
    const std::string name = std::string("stem.bn") + suffix;
    if (!store.contains(name)) store.set(name, bn_init(name, {stem.out_channels}));
  }
  return store;
}

}  // namespace pepnet
