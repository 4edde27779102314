#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pepnet/balance.hpp"
#include "pepnet/cohort.hpp"
#include "pepnet/feature_table.hpp"
#include "pepnet/gbt.hpp"
#include "pepnet/metrics.hpp"
#include "pepnet/network_config.hpp"
#include "pepnet/parallel.hpp"
#include "pepnet/pca.hpp"
#include "pepnet/resnet3d.hpp"
#include "pepnet/roi.hpp"
#include "pepnet/volume.hpp"
#include "pepnet/weights.hpp"

namespace pepnet {

struct PreprocessConfig {
  double hu_low = kDefaultHuLow;
  double hu_high = kDefaultHuHigh;
  std::int64_t margin = kDefaultCropMargin;
  Dims grid = kDefaultGrid;
  MaskKind mask_kind = MaskKind::lung;
};

/// Window, crop to the mask's tight box plus margin, resize to the grid.
Volume3D preprocess(const Volume3D& image, const Volume3D& mask, const PreprocessConfig& config);

enum class ReductionOrder { smote_then_pca, pca_then_smote };
const char* to_string(ReductionOrder order);
ReductionOrder parse_reduction_order(const std::string& s);

/// Optional supervised fine-tuning of the network before feature extraction.
struct FineTuneConfig {
  int epochs = 0;
  int batch_size = 4;
  double learning_rate = 1e-4;
  bool freeze_body = true;  // only the stem (conv + BN) is updated
};

struct PipelineConfig {
  std::filesystem::path cohort;
  PreprocessConfig preprocess;
  NetworkConfig network = NetworkConfig::resnet18();
  std::filesystem::path weights;  // empty: scratch initialization
  int folds = 5;
  std::uint64_t seed = 0;
  bool use_smote = true;
  int k_neighbors = 5;
  int m_neighbors = 10;
  ReductionOrder order = ReductionOrder::smote_then_pca;
  int pca_components = kDefaultPcaComponents;
  GbtParams gbt;
  bool use_pos_weight = true;  // scale_pos_weight from pre-SMOTE training labels
  double threshold = 0.5;
  FineTuneConfig finetune;
  bool permute_labels = false;
  unsigned threads = default_threads();

  void validate() const;
};

nlohmann::ordered_json to_json(const PreprocessConfig& config);
PreprocessConfig preprocess_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const PipelineConfig& config);

/// Scratch weights (He-normal everywhere) or the configured store with a
/// freshly initialized single-channel stem.
WeightStore initial_weights(const PipelineConfig& config);

/// Cohort labels, permuted under the master seed when requested.
std::vector<int> effective_labels(const CohortIndex& cohort, const PipelineConfig& config);

/// One pooled feature row per subject, in cohort order. Subjects fan out
/// over `threads` workers; errors name the failing subject.
FeatureTable extract_features(const CohortIndex& cohort, std::span<const int> labels,
                              const PreprocessConfig& preprocess, const ResNet3d<float>& network,
                              unsigned threads);

/// Which cohort rows fed each fitted stage of one fold.
struct FoldAudit {
  std::size_t fold = 0;
  std::vector<std::size_t> test_rows;
  std::vector<std::size_t> pca_fit_rows;  // real rows; synthetic rows trace to smote_sources
  std::vector<std::size_t> smote_sources;  // bases and neighbors
  std::vector<std::size_t> gbt_fit_rows;   // real rows
};

/// PCA + tree ensemble fitted on one training table.
struct Classifier {
  PcaModel pca;
  TreeEnsemble ensemble;
  std::vector<std::string> warnings;

  std::vector<double> predict(const FeatureTable& rows) const;
};

/// SMOTE and PCA in the configured order, then boosting. `train_rows` maps
/// table rows to cohort indices for the audit; `stream` separates seeds.
Classifier fit_classifier(const FeatureTable& train, const PipelineConfig& config,
                          std::uint64_t stream, std::span<const std::size_t> train_rows = {},
                          FoldAudit* audit = nullptr);

struct FoldResult {
  std::size_t fold = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  BinaryMetrics metrics;
  std::vector<std::string> warnings;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
};

MetricSummary summarize(std::span<const double> values);

struct EvalReport {
  nlohmann::ordered_json config;
  std::size_t subjects = 0;
  std::size_t positives = 0;
  std::vector<FoldResult> folds;
  std::vector<std::string> warnings;

  MetricSummary summary(double BinaryMetrics::*metric) const;
};

nlohmann::ordered_json to_json(const EvalReport& report);
/// `fold,fpr,tpr,threshold` rows for every fold.
std::string roc_csv(const EvalReport& report);

struct CrossValidation {
  EvalReport report;
  std::vector<FoldAudit> audits;
};

/// Fold-safe cross-validation on precomputed features: per fold, SMOTE and
/// PCA see training rows only and test rows are only transformed.
CrossValidation cross_validate(const FeatureTable& features, const PipelineConfig& config);

/// Deployable model: preprocessing, network, weight blob reference, PCA and
/// ensemble.
struct PipelineModel {
  PreprocessConfig preprocess;
  NetworkConfig network;
  std::string weights_file;  // relative to the model file
  PcaModel pca;
  TreeEnsemble ensemble;
  double threshold = 0.5;
  nlohmann::ordered_json config;
};

nlohmann::ordered_json to_json(const PipelineModel& model);
PipelineModel pipeline_model_from_json(const nlohmann::json& j);
/// Writes `path` and the weight blob `<stem>.weights.mwts` beside it.
void save_model(PipelineModel model, const WeightStore& weights,
                const std::filesystem::path& path);
struct LoadedModel {
  PipelineModel model;
  WeightStore weights;
};
LoadedModel load_model(const std::filesystem::path& path);

/// Died-class probability for one subject.
double predict_subject(const PipelineModel& model, const ResNet3d<float>& network,
                       const Volume3D& image, const Volume3D& mask);

struct PipelineResult {
  std::optional<CrossValidation> cv;
  std::optional<PipelineModel> model;
  WeightStore weights;  // network behind the final model
};

struct PipelineStages {
  bool cross_validate = true;
  bool final_model = true;
  std::function<void(const std::string&)> progress;
};

/// Loads the cohort, extracts features (fine-tuning per fold when
/// configured), cross-validates, and retrains on all subjects.
PipelineResult run_pipeline(const PipelineConfig& config, PipelineStages stages = {});

}  // namespace pepnet
