#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pepnet/volume.hpp"

namespace pepnet {

struct LesionDistribution {
  double radius_mean = 0.0;  // voxels
  double radius_sd = 0.0;
  double contrast_hu = 0.0;  // added to lung tissue, subtracted from blood pool
};

/// Synthetic chest phantom cohort: body, two lungs and a contrast-filled
/// heart with one planted lesion per organ. Lesion size and contrast are
/// drawn from the subject's class distribution.
struct CohortSpec {
  int n_positive = 38;
  int n_negative = 155;
  Dims dims{64, 64, 48};
  Spacing spacing{1.0, 1.0, 1.0};
  LesionDistribution positive{7.0, 0.5, 950.0};
  LesionDistribution negative{2.5, 0.5, 200.0};
  double noise_hu = 20.0;
  double scale_jitter = 0.02;  // relative organ size variation
  double shift_jitter = 0.5;   // organ position variation (voxels)
  std::uint64_t seed = 0;

  /// Throws DataError when counts or distributions are invalid or the dims
  /// cannot hold the configured lesion radii.
  void validate() const;
};

struct Subject {
  std::string id;
  int label = 0;
  Volume3D image;
  Volume3D lung_mask;
  Volume3D cardiac_mask;
};

/// Labels for every subject, 1 = positive, in subject order.
std::vector<int> cohort_labels(const CohortSpec& spec);
std::string subject_id(int index);
/// Deterministic subject `index` of the cohort.
Subject synth_subject(const CohortSpec& spec, int index);

enum class MaskKind { lung, cardiac };
const char* to_string(MaskKind kind);
MaskKind parse_mask_kind(const std::string& s);

/// On-disk cohort: labels.csv (`id,label`), cohort.json, images/<id>.mvol,
/// masks/lung/<id>.mvol and masks/cardiac/<id>.mvol.
struct CohortIndex {
  std::filesystem::path root;
  std::vector<std::string> ids;
  std::vector<int> labels;

  std::filesystem::path image_path(std::size_t i) const;
  std::filesystem::path mask_path(std::size_t i, MaskKind kind) const;
};

void write_cohort(const CohortSpec& spec, const std::filesystem::path& dir, unsigned threads = 1);
CohortIndex load_cohort(const std::filesystem::path& dir);

std::vector<std::pair<std::string, int>> read_labels_csv(const std::filesystem::path& path);
void write_labels_csv(const std::vector<std::pair<std::string, int>>& rows,
                      const std::filesystem::path& path);

nlohmann::ordered_json to_json(const CohortSpec& spec);

}  // namespace pepnet
