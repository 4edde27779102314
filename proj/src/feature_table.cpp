#include "pepnet/feature_table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pepnet/error.hpp"

namespace pepnet {

void FeatureTable::add_row(std::string id, int label, std::span<const double> features,
                           bool synthetic) {
  if (rows() == 0 && width_ == 0) width_ = features.size();
  if (features.size() != width_) {
    throw DataError("row '" + id + "' has " + std::to_string(features.size()) +
                    " features, table width is " + std::to_string(width_));
  }
  if (label != 0 && label != 1) throw DataError("row '" + id + "' label must be 0 or 1");
  if (!std::all_of(features.begin(), features.end(), [](double v) { return std::isfinite(v); })) {
    throw DataError("row '" + id + "' has a non-finite feature");
  }
  ids_.push_back(std::move(id));
  labels_.push_back(label);
  synthetic_.push_back(synthetic ? 1 : 0);
  values_.insert(values_.end(), features.begin(), features.end());
}

FeatureTable FeatureTable::subset(std::span<const std::size_t> indices) const {
  FeatureTable out(width_);
  for (std::size_t i : indices) out.add_row(ids_[i], labels_[i], row(i), synthetic_[i] != 0);
  return out;
}

std::size_t FeatureTable::count_label(int label) const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string to_csv(const FeatureTable& t) {
  std::string out = "id,label,synthetic";
  for (std::size_t j = 0; j < t.width(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < t.rows(); ++i) {
    out += t.id(i);
    out += ',';
    out += std::to_string(t.label(i));
    out += t.synthetic(i) ? ",1" : ",0";
    for (double v : t.row(i)) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view s, std::size_t line_no) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("feature CSV line " + std::to_string(line_no) + ": bad number '" +
                    std::string(s) + "'");
  }
  return v;
}

}  // namespace

FeatureTable feature_table_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("feature CSV is empty");
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label" || header[2] != "synthetic") {
    throw DataError("feature CSV header must start with id,label,synthetic");
  }
  const std::size_t width = header.size() - 3;
  for (std::size_t j = 0; j < width; ++j) {
    if (header[3 + j] != "f" + std::to_string(j)) throw DataError("feature CSV header column mismatch");
  }
  FeatureTable table(width);
  std::vector<double> row(width);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != width + 3) {
      throw DataError("feature CSV line " + std::to_string(line_no) + ": expected " +
                      std::to_string(width + 3) + " cells");
    }
    const double label = parse_double(cells[1], line_no);
    const double synth = parse_double(cells[2], line_no);
    for (std::size_t j = 0; j < width; ++j) row[j] = parse_double(cells[3 + j], line_no);
    table.add_row(std::string(cells[0]), static_cast<int>(label), row, synth != 0.0);
  }
  return table;
}

void write_feature_csv(const FeatureTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_csv(table);
}

FeatureTable read_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return feature_table_from_csv(ss.str());
}

}  // namespace pepnet
