#include "pepnet/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "pepnet/error.hpp"
#include "pepnet/parallel.hpp"
#include "pepnet/seed.hpp"

namespace pepnet {

namespace {

constexpr double kAirHu = -1000.0;
constexpr double kSoftTissueHu = 40.0;
constexpr double kLungHu = -850.0;
constexpr double kBloodHu = 250.0;
// Lesions keep this many voxels away from the organ boundary.
constexpr double kLesionClearance = 1.0;
constexpr double kCardiacLesionScale = 0.7;

struct Ellipsoid {
  double cx, cy, cz;
  double ax, ay, az;

  double level(double x, double y, double z) const {
    const double dx = (x - cx) / ax, dy = (y - cy) / ay, dz = (z - cz) / az;
    return dx * dx + dy * dy + dz * dz;
  }
  bool contains(double x, double y, double z) const { return level(x, y, z) <= 1.0; }
  double min_axis() const { return std::min({ax, ay, az}); }
};

struct Sphere {
  double cx, cy, cz, r;
  bool contains(double x, double y, double z) const {
    const double dx = x - cx, dy = y - cy, dz = z - cz;
    return dx * dx + dy * dy + dz * dz <= r * r;
  }
};

struct Anatomy {
  Ellipsoid body, left_lung, right_lung, heart;
};

// Nominal organ layout as fractions of the half extent around the center.
Anatomy nominal_anatomy(const Dims& d) {
  const double hx = 0.5 * static_cast<double>(d.x), hy = 0.5 * static_cast<double>(d.y),
               hz = 0.5 * static_cast<double>(d.z);
  const double cx = hx - 0.5, cy = hy - 0.5, cz = hz - 0.5;
  Anatomy a{};
  a.body = {cx, cy, cz, 0.95 * hx, 0.85 * hy, 0.95 * hz};
  a.left_lung = {cx - 0.45 * hx, cy + 0.05 * hy, cz, 0.36 * hx, 0.6 * hy, 0.75 * hz};
  a.right_lung = {cx + 0.45 * hx, cy + 0.05 * hy, cz, 0.36 * hx, 0.6 * hy, 0.75 * hz};
  a.heart = {cx + 0.05 * hx, cy - 0.3 * hy, cz - 0.15 * hz, 0.32 * hx, 0.32 * hy, 0.32 * hz};
  return a;
}

double max_radius(const LesionDistribution& l) { return l.radius_mean + 3.0 * l.radius_sd; }

Ellipsoid jitter(const Ellipsoid& e, const CohortSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> scale(1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter);
  std::uniform_real_distribution<double> shift(-spec.shift_jitter, spec.shift_jitter);
  Ellipsoid out = e;
  out.cx += shift(rng);
  out.cy += shift(rng);
  out.cz += shift(rng);
  out.ax *= scale(rng);
  out.ay *= scale(rng);
  out.az *= scale(rng);
  return out;
}

// Uniform center inside the ellipsoid shrunk by `r` + clearance, so the
// whole sphere stays inside the organ.
Sphere place_sphere(const Ellipsoid& organ, double r, std::mt19937_64& rng) {
  const double m = r + kLesionClearance;
  const Ellipsoid inner{organ.cx, organ.cy, organ.cz, organ.ax - m, organ.ay - m, organ.az - m};
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  while (true) {
    const double u = unit(rng), v = unit(rng), w = unit(rng);
    if (u * u + v * v + w * w <= 1.0) {
      return {inner.cx + u * inner.ax, inner.cy + v * inner.ay, inner.cz + w * inner.az, r};
    }
  }
}

double sample_radius(const LesionDistribution& l, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(l.radius_mean, l.radius_sd);
  return std::clamp(normal(rng), 0.5, max_radius(l));
}

}  // namespace

void CohortSpec::validate() const {
  if (n_positive < 1 || n_negative < 1) throw DataError("cohort class counts must be positive");
  if (!dims.positive()) throw DataError("cohort dims must be positive");
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) {
    throw DataError("cohort spacing must be positive");
  }
  for (const auto* l : {&positive, &negative}) {
    if (!(l->radius_mean > 0) || l->radius_sd < 0 || !std::isfinite(l->contrast_hu)) {
      throw DataError("invalid lesion distribution");
    }
  }
  if (noise_hu < 0) throw DataError("noise level must be nonnegative");
  if (!(scale_jitter >= 0 && scale_jitter < 0.5) || !(shift_jitter >= 0)) {
    throw DataError("invalid anatomy jitter");
  }
  const Anatomy a = nominal_anatomy(dims);
  const double shrink = 1.0 - scale_jitter;
  const double r = std::max(max_radius(positive), max_radius(negative));
  if (r + kLesionClearance >= shrink * a.left_lung.min_axis() ||
      kCardiacLesionScale * r + kLesionClearance >= shrink * a.heart.min_axis()) {
    throw DataError("cohort dims too small for the configured lesion radii");
  }
}

std::string subject_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case%04d", index);
  return buf;
}

std::vector<int> cohort_labels(const CohortSpec& spec) {
  std::vector<int> labels(static_cast<std::size_t>(spec.n_positive), 1);
  labels.resize(static_cast<std::size_t>(spec.n_positive + spec.n_negative), 0);
  std::mt19937_64 rng(derive_seed(spec.seed, "cohort.labels"));
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

Subject synth_subject(const CohortSpec& spec, int index) {
  spec.validate();
  const auto labels = cohort_labels(spec);
  if (index < 0 || index >= static_cast<int>(labels.size())) {
    throw DataError("subject index out of range");
  }
  Subject s;
  s.id = subject_id(index);
  s.label = labels[static_cast<std::size_t>(index)];
  const LesionDistribution& lesion = s.label == 1 ? spec.positive : spec.negative;

  std::mt19937_64 rng(derive_seed(spec.seed, "cohort.subject", static_cast<std::uint64_t>(index)));
  const Anatomy nominal = nominal_anatomy(spec.dims);
  const Ellipsoid body = jitter(nominal.body, spec, rng);
  const Ellipsoid lungs[2] = {jitter(nominal.left_lung, spec, rng), jitter(nominal.right_lung, spec, rng)};
  const Ellipsoid heart = jitter(nominal.heart, spec, rng);

  const double r = sample_radius(lesion, rng);
  const int side = std::uniform_int_distribution<int>(0, 1)(rng);
  const Sphere lung_lesion = place_sphere(lungs[side], r, rng);
  const Sphere heart_lesion = place_sphere(heart, kCardiacLesionScale * r, rng);
  std::normal_distribution<double> noise(0.0, 1.0);

  const Dims& d = spec.dims;
  const auto n = static_cast<std::size_t>(d.count());
  std::vector<float> image(n), lung(n), cardiac(n);
  std::size_t i = 0;
  for (std::int64_t z = 0; z < d.z; ++z) {
    for (std::int64_t y = 0; y < d.y; ++y) {
      for (std::int64_t x = 0; x < d.x; ++x, ++i) {
        const double fx = static_cast<double>(x), fy = static_cast<double>(y),
                     fz = static_cast<double>(z);
        double hu = kAirHu;
        if (body.contains(fx, fy, fz)) hu = kSoftTissueHu;
        if (heart.contains(fx, fy, fz)) {
          cardiac[i] = 1.0f;
          hu = heart_lesion.contains(fx, fy, fz) ? kBloodHu - lesion.contrast_hu : kBloodHu;
        } else if (lungs[0].contains(fx, fy, fz) || lungs[1].contains(fx, fy, fz)) {
          lung[i] = 1.0f;
          hu = lung_lesion.contains(fx, fy, fz) ? kLungHu + lesion.contrast_hu : kLungHu;
        }
        image[i] = static_cast<float>(hu + spec.noise_hu * noise(rng));
      }
    }
  }
  s.image = Volume3D(d, spec.spacing, VolumeKind::intensity, std::move(image));
  s.lung_mask = Volume3D(d, spec.spacing, VolumeKind::mask, std::move(lung));
  s.cardiac_mask = Volume3D(d, spec.spacing, VolumeKind::mask, std::move(cardiac));
  return s;
}

const char* to_string(MaskKind kind) { return kind == MaskKind::lung ? "lung" : "cardiac"; }

MaskKind parse_mask_kind(const std::string& s) {
  if (s == "lung") return MaskKind::lung;
  if (s == "cardiac") return MaskKind::cardiac;
  throw UsageError("mask kind must be 'lung' or 'cardiac', got '" + s + "'");
}

std::filesystem::path CohortIndex::image_path(std::size_t i) const {
  return root / "images" / (ids[i] + ".mvol");
}

std::filesystem::path CohortIndex::mask_path(std::size_t i, MaskKind kind) const {
  return root / "masks" / to_string(kind) / (ids[i] + ".mvol");
}

void write_labels_csv(const std::vector<std::pair<std::string, int>>& rows,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id,label\n";
  for (const auto& [id, label] : rows) out << id << ',' << label << '\n';
}

std::vector<std::pair<std::string, int>> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open labels file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,label") {
    throw DataError(path.string() + ": header must be 'id,label'");
  }
  std::vector<std::pair<std::string, int>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const std::string label = comma == std::string::npos ? "" : line.substr(comma + 1);
    if (comma == 0 || (label != "0" && label != "1")) {
      throw DataError(path.string() + " line " + std::to_string(line_no) +
                      ": expected id,label with label 0 or 1");
    }
    rows.emplace_back(line.substr(0, comma), label == "1" ? 1 : 0);
  }
  return rows;
}

nlohmann::ordered_json to_json(const CohortSpec& s) {
  auto lesion = [](const LesionDistribution& l) {
    return nlohmann::ordered_json{{"radius_mean", l.radius_mean},
                                  {"radius_sd", l.radius_sd},
                                  {"contrast_hu", l.contrast_hu}};
  };
  nlohmann::ordered_json j;
  j["n_positive"] = s.n_positive;
  j["n_negative"] = s.n_negative;
  j["dims"] = {s.dims.x, s.dims.y, s.dims.z};
  j["spacing"] = {s.spacing.x, s.spacing.y, s.spacing.z};
  j["positive"] = lesion(s.positive);
  j["negative"] = lesion(s.negative);
  j["noise_hu"] = s.noise_hu;
  j["scale_jitter"] = s.scale_jitter;
  j["shift_jitter"] = s.shift_jitter;
  j["seed"] = s.seed;
  return j;
}

void write_cohort(const CohortSpec& spec, const std::filesystem::path& dir, unsigned threads) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks" / "lung");
  fs::create_directories(dir / "masks" / "cardiac");
  const int n = spec.n_positive + spec.n_negative;
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
    const Subject s = synth_subject(spec, static_cast<int>(i));
    write_volume(s.image, dir / "images" / (s.id + ".mvol"));
    write_volume(s.lung_mask, dir / "masks" / "lung" / (s.id + ".mvol"));
    write_volume(s.cardiac_mask, dir / "masks" / "cardiac" / (s.id + ".mvol"));
  });
  const auto labels = cohort_labels(spec);
  std::vector<std::pair<std::string, int>> rows;
  for (int i = 0; i < n; ++i) rows.emplace_back(subject_id(i), labels[static_cast<std::size_t>(i)]);
  write_labels_csv(rows, dir / "labels.csv");
  std::ofstream meta(dir / "cohort.json", std::ios::binary | std::ios::trunc);
  meta << to_json(spec).dump(2) << '\n';
}

CohortIndex load_cohort(const std::filesystem::path& dir) {
  CohortIndex index;
  index.root = dir;
  for (auto& [id, label] : read_labels_csv(dir / "labels.csv")) {
    index.ids.push_back(std::move(id));
    index.labels.push_back(label);
  }
  if (index.ids.empty()) throw DataError("cohort " + dir.string() + " has no subjects");
  return index;
}

}  // namespace pepnet
