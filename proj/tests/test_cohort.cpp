#include <algorithm>
#include <fstream>

#include "doctest.h"
#include "pepnet/cohort.hpp"
#include "pepnet/error.hpp"
#include "support.hpp"

using namespace pepnet;

namespace {

CohortSpec small_spec() {
  CohortSpec s;
  s.n_positive = 6;
  s.n_negative = 10;
  s.dims = {32, 32, 32};
  s.positive = {3.0, 0.3, 600.0};
  s.negative = {1.5, 0.3, 100.0};
  s.seed = 5;
  return s;
}

double masked_mean(const Volume3D& image, const Volume3D& mask) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < image.voxels().size(); ++i) {
    if (mask.voxels()[i] != 0.0f) {
      sum += image.voxels()[i];
      ++n;
    }
  }
  return sum / double(n);
}

}  // namespace

TEST_CASE("cohort: defaults give 38 positive and 155 negative subjects") {
  const auto labels = cohort_labels(CohortSpec{});
  CHECK(labels.size() == 193);
  CHECK(std::count(labels.begin(), labels.end(), 1) == 38);
  CHECK(subject_id(7) == "case0007");
}

TEST_CASE("cohort: masks are binary, disjoint and nonempty") {
  const CohortSpec spec = small_spec();
  for (int i = 0; i < 4; ++i) {
    const Subject s = synth_subject(spec, i);
    CHECK(s.image.dims() == spec.dims);
    CHECK(s.lung_mask.kind() == VolumeKind::mask);
    std::size_t lung = 0, heart = 0;
    for (std::size_t k = 0; k < s.image.voxels().size(); ++k) {
      const float l = s.lung_mask.voxels()[k], c = s.cardiac_mask.voxels()[k];
      CHECK((l == 0.0f || l == 1.0f));
      CHECK(!(l == 1.0f && c == 1.0f));
      lung += l == 1.0f;
      heart += c == 1.0f;
    }
    CHECK(lung > 0);
    CHECK(heart > 0);
  }
}

TEST_CASE("cohort: positives carry brighter lung lesions and darker cardiac lesions") {
  CohortSpec spec = small_spec();
  spec.noise_hu = 0.0;
  const auto labels = cohort_labels(spec);
  for (int i = 0; i < spec.n_positive + spec.n_negative; ++i) {
    const Subject s = synth_subject(spec, i);
    CHECK(s.label == labels[std::size_t(i)]);
    const double lung = masked_mean(s.image, s.lung_mask);
    const double heart = masked_mean(s.image, s.cardiac_mask);
    CHECK(lung > -850.0);
    CHECK(heart < 250.0);
  }
  // Mean lesion burden separates the classes.
  double pos = 0.0, neg = 0.0;
  for (int i = 0; i < spec.n_positive + spec.n_negative; ++i) {
    const Subject s = synth_subject(spec, i);
    (s.label == 1 ? pos : neg) += masked_mean(s.image, s.lung_mask) + 850.0;
  }
  CHECK(pos / spec.n_positive > 3.0 * neg / spec.n_negative);
}

TEST_CASE("cohort: same seed gives a byte-identical directory") {
  testing::TempDir a("cohort"), b("cohort");
  const CohortSpec spec = small_spec();
  write_cohort(spec, a.path(), 2);
  write_cohort(spec, b.path(), 1);
  const CohortIndex idx = load_cohort(a.path());
  REQUIRE(idx.ids.size() == 16);
  CHECK(testing::slurp(a / "labels.csv") == testing::slurp(b / "labels.csv"));
  CHECK(testing::slurp(a / "cohort.json") == testing::slurp(b / "cohort.json"));
  for (std::size_t i = 0; i < idx.ids.size(); ++i) {
    const auto rel = std::filesystem::relative(idx.image_path(i), a.path());
    CHECK(testing::slurp(idx.image_path(i)) == testing::slurp(b.path() / rel));
    for (MaskKind k : {MaskKind::lung, MaskKind::cardiac}) {
      const auto mrel = std::filesystem::relative(idx.mask_path(i, k), a.path());
      CHECK(testing::slurp(idx.mask_path(i, k)) == testing::slurp(b.path() / mrel));
    }
  }
  CohortSpec other = spec;
  other.seed = 6;
  CHECK(encode_volume(synth_subject(other, 0).image) != encode_volume(synth_subject(spec, 0).image));
}

TEST_CASE("cohort: invalid specs are rejected") {
  CohortSpec s = small_spec();
  s.dims = {12, 12, 10};
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("too small"), DataError);
  s = small_spec();
  s.n_positive = 0;
  CHECK_THROWS_AS(s.validate(), DataError);
  s = small_spec();
  s.negative.radius_sd = -1.0;
  CHECK_THROWS_AS(s.validate(), DataError);
  CHECK_THROWS_AS(synth_subject(small_spec(), 16), DataError);
}

TEST_CASE("labels csv: round-trip and malformed rows") {
  testing::TempDir dir("labels");
  write_labels_csv({{"a", 1}, {"b", 0}}, dir / "l.csv");
  CHECK(testing::slurp(dir / "l.csv") == "id,label\na,1\nb,0\n");
  CHECK(read_labels_csv(dir / "l.csv") == std::vector<std::pair<std::string, int>>{{"a", 1}, {"b", 0}});
  std::ofstream(dir / "bad.csv") << "id,label\na,2\n";
  CHECK_THROWS_WITH_AS(read_labels_csv(dir / "bad.csv"), doctest::Contains("line 2"), DataError);
  std::ofstream(dir / "hdr.csv") << "name,label\na,1\n";
  CHECK_THROWS_AS(read_labels_csv(dir / "hdr.csv"), DataError);
  CHECK_THROWS_AS(load_cohort(dir / "missing"), DataError);
  CHECK(parse_mask_kind("cardiac") == MaskKind::cardiac);
  CHECK_THROWS_AS(parse_mask_kind("liver"), UsageError);
}
