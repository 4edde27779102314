#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pepnet/volume.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("pepnet-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline pepnet::Volume3D random_volume(pepnet::Dims d, std::mt19937_64& rng,
                                      double lo = -1000.0, double hi = 1000.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<float> v(static_cast<std::size_t>(d.count()));
  for (auto& x : v) x = static_cast<float>(u(rng));
  return {d, {0.7, 0.8, 1.25}, pepnet::VolumeKind::intensity, std::move(v)};
}

inline pepnet::Volume3D random_mask(pepnet::Dims d, std::mt19937_64& rng, double density) {
  std::bernoulli_distribution b(density);
  std::vector<float> v(static_cast<std::size_t>(d.count()));
  for (auto& x : v) x = b(rng) ? 1.0f : 0.0f;
  return {d, {1, 1, 1}, pepnet::VolumeKind::mask, std::move(v)};
}

}  // namespace testing
