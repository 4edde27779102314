#include "pepnet/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "pepnet/error.hpp"

namespace pepnet {

namespace {

constexpr std::string_view kMagic = "MVOL\n";

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

void check_binary(std::span<const float> voxels, std::uint64_t payload_offset) {
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    float v = voxels[i];
    if (v != 0.0f && v != 1.0f) {
      std::ostringstream os;
      os << "non-binary mask value " << v << " at voxel " << i;
      throw FormatError(os.str(), payload_offset + 4 * i);
    }
  }
}

}  // namespace

std::string_view to_string(VolumeKind kind) {
  return kind == VolumeKind::mask ? "mask" : "intensity";
}

VolumeKind parse_volume_kind(std::string_view s) {
  if (s == "intensity") return VolumeKind::intensity;
  if (s == "mask") return VolumeKind::mask;
  throw DataError("unknown volume kind '" + std::string(s) + "'");
}

Volume3D::Volume3D(Dims dims, Spacing spacing, VolumeKind kind, std::vector<float> voxels)
    : dims_(dims), spacing_(spacing), kind_(kind), voxels_(std::move(voxels)) {
  if (!dims_.positive()) throw DataError("volume dims must be positive");
  if (!(spacing_.x > 0 && spacing_.y > 0 && spacing_.z > 0) ||
      !std::isfinite(spacing_.x) || !std::isfinite(spacing_.y) || !std::isfinite(spacing_.z)) {
    throw DataError("volume spacing must be strictly positive");
  }
  if (static_cast<std::int64_t>(voxels_.size()) != dims_.count()) {
    throw DataError("voxel count " + std::to_string(voxels_.size()) + " does not match dims (" +
                    std::to_string(dims_.count()) + ")");
  }
  if (kind_ == VolumeKind::mask) check_binary(voxels_, 0);
}

std::string encode_volume(const Volume3D& v) {
  if (v.empty()) throw DataError("cannot write an empty volume");
  nlohmann::ordered_json header;
  header["dims"] = {v.dims().x, v.dims().y, v.dims().z};
  header["spacing"] = {v.spacing().x, v.spacing().y, v.spacing().z};
  header["kind"] = std::string(to_string(v.kind()));
  header["dtype"] = "f32le";
  std::string out(kMagic);
  out += header.dump();
  out += '\n';
  const std::size_t base = out.size();
  out.resize(base + 4 * v.voxels().size());
  char* dst = out.data() + base;
  for (float f : v.voxels()) {
    std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(f));
    std::memcpy(dst, &bits, 4);
    dst += 4;
  }
  return out;
}

Volume3D decode_volume(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw FormatError("missing MVOL magic", 0);
  const std::size_t header_begin = kMagic.size();
  const std::size_t header_end = bytes.find('\n', header_begin);
  if (header_end == std::string_view::npos) {
    throw FormatError("unterminated MVOL header", header_begin);
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_begin, header_end - header_begin));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed MVOL header: ") + e.what(), header_begin);
  }

  Dims dims;
  Spacing spacing;
  VolumeKind kind;
  try {
    const auto& d = header.at("dims");
    const auto& s = header.at("spacing");
    if (!d.is_array() || d.size() != 3 || !s.is_array() || s.size() != 3) {
      throw FormatError("dims and spacing must be 3-element arrays", header_begin);
    }
    for (const auto& e : d) {
      if (!e.is_number_integer()) throw FormatError("dims must be integers", header_begin);
    }
    dims = {d[0].get<std::int64_t>(), d[1].get<std::int64_t>(), d[2].get<std::int64_t>()};
    spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    if (header.at("dtype").get<std::string>() != "f32le") {
      throw FormatError("unsupported dtype (expected f32le)", header_begin);
    }
    kind = parse_volume_kind(header.at("kind").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed MVOL header: ") + e.what(), header_begin);
  } catch (const FormatError&) {
    throw;
  } catch (const DataError& e) {
    throw FormatError(e.what(), header_begin);
  }
  if (!dims.positive()) throw FormatError("dims must be positive", header_begin);
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) {
    throw FormatError("spacing must be strictly positive", header_begin);
  }

  const std::size_t payload_begin = header_end + 1;
  const std::size_t expected = 4 * static_cast<std::size_t>(dims.count());
  const std::size_t actual = bytes.size() - payload_begin;
  if (actual != expected) {
    throw FormatError("payload length " + std::to_string(actual) + " bytes, expected " +
                          std::to_string(expected),
                      payload_begin);
  }
  std::vector<float> voxels(static_cast<std::size_t>(dims.count()));
  const char* src = bytes.data() + payload_begin;
  for (float& f : voxels) {
    std::uint32_t bits;
    std::memcpy(&bits, src, 4);
    f = std::bit_cast<float>(to_little(bits));
    src += 4;
  }
  if (kind == VolumeKind::mask) check_binary(voxels, payload_begin);
  return Volume3D(dims, spacing, kind, std::move(voxels));
}

Volume3D read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open volume file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_volume(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

void write_volume(const Volume3D& v, const std::filesystem::path& path) {
  const std::string bytes = encode_volume(v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write volume file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

Volume3D normalize_intensity(const Volume3D& v, double lo, double hi) {
  if (!(lo < hi)) throw DataError("intensity window requires lo < hi");
  if (v.kind() != VolumeKind::intensity) throw DataError("cannot normalize a mask volume");
  std::vector<float> out(v.voxels().size());
  const double range = hi - lo;
  std::transform(v.voxels().begin(), v.voxels().end(), out.begin(), [&](float x) {
    const double c = std::clamp(static_cast<double>(x), lo, hi);
    return static_cast<float>((c - lo) / range);
  });
  return Volume3D(v.dims(), v.spacing(), v.kind(), std::move(out));
}

}  // namespace pepnet
