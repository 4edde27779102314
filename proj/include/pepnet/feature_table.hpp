#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pepnet {

/// Rows of (id, label, synthetic flag, feature vector). Label 1 is the
/// positive (died) class.
class FeatureTable {
 public:
  FeatureTable() = default;
  explicit FeatureTable(std::size_t width) : width_(width) {}

  void add_row(std::string id, int label, std::span<const double> features,
               bool synthetic = false);

  std::size_t rows() const noexcept { return labels_.size(); }
  std::size_t width() const noexcept { return width_; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {values_.data() + i * width_, width_};
  }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  int label(std::size_t i) const { return labels_[i]; }
  bool synthetic(std::size_t i) const { return synthetic_[i] != 0; }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  /// Row-major rows() x width() matrix.
  const std::vector<double>& values() const noexcept { return values_; }

  /// Rows at `indices`, in that order.
  FeatureTable subset(std::span<const std::size_t> indices) const;
  std::size_t count_label(int label) const;

  friend bool operator==(const FeatureTable&, const FeatureTable&) = default;

 private:
  std::size_t width_ = 0;
  std::vector<std::string> ids_;
  std::vector<int> labels_;
  std::vector<char> synthetic_;
  std::vector<double> values_;
};

/// CSV with header `id,label,synthetic,f0,...,f{d-1}`; numbers use the
/// shortest decimal form that round-trips.
std::string to_csv(const FeatureTable& table);
FeatureTable feature_table_from_csv(const std::string& text);
void write_feature_csv(const FeatureTable& table, const std::filesystem::path& path);
FeatureTable read_feature_csv(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace pepnet
