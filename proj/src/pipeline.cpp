#include "pepnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "pepnet/error.hpp"
#include "pepnet/seed.hpp"

namespace pepnet {

Volume3D preprocess(const Volume3D& image, const Volume3D& mask, const PreprocessConfig& c) {
  if (image.dims() != mask.dims()) throw DataError("image and mask dims differ");
  const Volume3D windowed = normalize_intensity(image, c.hu_low, c.hu_high);
  return resize_trilinear(crop(windowed, tight_bbox(mask), c.margin), c.grid);
}

const char* to_string(ReductionOrder order) {
  return order == ReductionOrder::smote_then_pca ? "smote-pca" : "pca-smote";
}

ReductionOrder parse_reduction_order(const std::string& s) {
  if (s == "smote-pca") return ReductionOrder::smote_then_pca;
  if (s == "pca-smote") return ReductionOrder::pca_then_smote;
  throw UsageError("reduction order must be 'smote-pca' or 'pca-smote', got '" + s + "'");
}

void PipelineConfig::validate() const {
  if (!(preprocess.hu_low < preprocess.hu_high)) throw DataError("hu_low must be below hu_high");
  if (preprocess.margin < 0) throw DataError("crop margin must be nonnegative");
  if (!preprocess.grid.positive()) throw DataError("grid dims must be positive");
  network.validate();
  if (folds < 2) throw DataError("fold count must be at least 2");
  SmoteParams{k_neighbors, m_neighbors, seed}.validate();
  if (pca_components < 1) throw DataError("PCA component count must be positive");
  gbt.validate();
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw DataError("threshold must lie in [0, 1]");
  if (finetune.epochs < 0 || finetune.batch_size < 1 || !(finetune.learning_rate >= 0.0)) {
    throw DataError("invalid fine-tuning settings");
  }
}

nlohmann::ordered_json to_json(const PreprocessConfig& c) {
  return {{"hu_low", c.hu_low},
          {"hu_high", c.hu_high},
          {"margin", c.margin},
          {"grid", {c.grid.x, c.grid.y, c.grid.z}},
          {"mask_kind", to_string(c.mask_kind)}};
}

PreprocessConfig preprocess_config_from_json(const nlohmann::json& j) {
  PreprocessConfig c;
  try {
    c.hu_low = j.at("hu_low").get<double>();
    c.hu_high = j.at("hu_high").get<double>();
    c.margin = j.at("margin").get<std::int64_t>();
    const auto g = j.at("grid").get<std::vector<std::int64_t>>();
    if (g.size() != 3) throw DataError("grid must have 3 entries");
    c.grid = {g[0], g[1], g[2]};
    c.mask_kind = parse_mask_kind(j.at("mask_kind").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed preprocessing section: ") + e.what());
  }
  return c;
}

nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["cohort"] = c.cohort.generic_string();
  j["preprocess"] = to_json(c.preprocess);
  j["network"] = to_json(c.network);
  j["weights"] = c.weights.empty() ? nlohmann::ordered_json(nullptr)
                                   : nlohmann::ordered_json(c.weights.generic_string());
  j["folds"] = c.folds;
  j["seed"] = c.seed;
  j["smote"] = {{"enabled", c.use_smote},
                {"k_neighbors", c.k_neighbors},
                {"m_neighbors", c.m_neighbors}};
  j["order"] = to_string(c.order);
  j["pca_components"] = c.pca_components;
  j["gbt"] = {{"max_depth", c.gbt.max_depth},
              {"rounds", c.gbt.rounds},
              {"eta", c.gbt.eta},
              {"lambda", c.gbt.lambda},
              {"gamma", c.gbt.gamma},
              {"min_child_weight", c.gbt.min_child_weight},
              {"scale_pos_weight", c.gbt.scale_pos_weight}};
  j["use_pos_weight"] = c.use_pos_weight;
  j["threshold"] = c.threshold;
  j["finetune"] = {{"epochs", c.finetune.epochs},
                   {"batch_size", c.finetune.batch_size},
                   {"learning_rate", c.finetune.learning_rate},
                   {"freeze_body", c.finetune.freeze_body}};
  j["permute_labels"] = c.permute_labels;
  j["threads"] = c.threads;
  return j;
}

WeightStore initial_weights(const PipelineConfig& c) {
  if (c.weights.empty()) return init_weights(c.network, derive_seed(c.seed, "network"));
  WeightStore store = replace_stem(load_weights(c.weights), derive_seed(c.seed, "stem"),
                                   c.network.stem, c.network.in_channels);
  require_valid_weights(store, c.network);
  return store;
}

std::vector<int> effective_labels(const CohortIndex& cohort, const PipelineConfig& c) {
  std::vector<int> labels = cohort.labels;
  if (c.permute_labels) {
    std::mt19937_64 rng(derive_seed(c.seed, "permute-labels"));
    std::shuffle(labels.begin(), labels.end(), rng);
  }
  return labels;
}

namespace {

Volume3D load_subject(const CohortIndex& cohort, std::size_t i, const PreprocessConfig& p) {
  try {
    return preprocess(read_volume(cohort.image_path(i)), read_volume(cohort.mask_path(i, p.mask_kind)),
                      p);
  } catch (const DataError& e) {
    throw DataError("subject " + cohort.ids[i] + ": " + e.what());
  }
}

FeatureTable table_from_rows(const CohortIndex& cohort, std::span<const int> labels,
                             const std::vector<std::vector<double>>& rows) {
  FeatureTable table(rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) table.add_row(cohort.ids[i], labels[i], rows[i]);
  return table;
}

}  // namespace

FeatureTable extract_features(const CohortIndex& cohort, std::span<const int> labels,
                              const PreprocessConfig& preprocess_config,
                              const ResNet3d<float>& network, unsigned threads) {
  std::vector<std::vector<double>> rows(cohort.ids.size());
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    const Volume3D x = load_subject(cohort, i, preprocess_config);
    rows[i] = network.forward_features(make_batch<float>(std::span(&x, 1)));
  });
  return table_from_rows(cohort, labels, rows);
}

std::vector<double> Classifier::predict(const FeatureTable& rows) const {
  return predict_proba(ensemble, transform(pca, rows));
}

Classifier fit_classifier(const FeatureTable& train, const PipelineConfig& c, std::uint64_t stream,
                          std::span<const std::size_t> train_rows, FoldAudit* audit) {
  Classifier out;
  GbtParams gbt = c.gbt;
  if (c.use_pos_weight) gbt.scale_pos_weight = compute_pos_weight(train.labels());
  const SmoteParams smote{c.k_neighbors, c.m_neighbors, derive_seed(c.seed, "smote", stream)};

  auto resample = [&](const FeatureTable& t) {
    if (!c.use_smote) return t;
    ResampleResult r = fit_resample(t, smote);
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
    if (audit != nullptr && !train_rows.empty()) {
      for (const auto& p : r.provenance) {
        audit->smote_sources.push_back(train_rows[p.base]);
        audit->smote_sources.push_back(train_rows[p.neighbor]);
      }
    }
    return std::move(r.table);
  };

  FeatureTable reduced;
  if (c.order == ReductionOrder::smote_then_pca) {
    const FeatureTable balanced = resample(train);
    out.pca = fit_pca(balanced, c.pca_components, &out.warnings);
    reduced = transform(out.pca, balanced);
  } else {
    out.pca = fit_pca(train, c.pca_components, &out.warnings);
    reduced = resample(transform(out.pca, train));
  }
  out.ensemble = fit_gbt(reduced, gbt);
  if (audit != nullptr) {
    audit->pca_fit_rows.assign(train_rows.begin(), train_rows.end());
    audit->gbt_fit_rows.assign(train_rows.begin(), train_rows.end());
    std::sort(audit->smote_sources.begin(), audit->smote_sources.end());
    audit->smote_sources.erase(
        std::unique(audit->smote_sources.begin(), audit->smote_sources.end()),
        audit->smote_sources.end());
  }
  return out;
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  return s;
}

MetricSummary EvalReport::summary(double BinaryMetrics::*metric) const {
  std::vector<double> values;
  for (const auto& f : folds) values.push_back(f.metrics.*metric);
  return summarize(values);
}

namespace {

constexpr std::pair<const char*, double BinaryMetrics::*> kReportedMetrics[] = {
    {"accuracy", &BinaryMetrics::accuracy},
    {"auc", &BinaryMetrics::auc},
    {"sensitivity", &BinaryMetrics::sensitivity},
    {"specificity", &BinaryMetrics::specificity},
};

std::string plus_minus(const MetricSummary& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", s.mean, s.std);
  return buf;
}

}  // namespace

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["config"] = r.config;
  j["cohort"] = {{"subjects", r.subjects}, {"positives", r.positives}};
  auto folds = nlohmann::ordered_json::array();
  for (const auto& f : r.folds) {
    nlohmann::ordered_json fj;
    fj["fold"] = f.fold;
    fj["n_train"] = f.n_train;
    fj["n_test"] = f.n_test;
    for (const auto& [name, member] : kReportedMetrics) fj[name] = f.metrics.*member;
    const auto& c = f.metrics.confusion;
    fj["confusion"] = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
    auto roc = nlohmann::ordered_json::array();
    for (const auto& p : f.metrics.roc) roc.push_back({p.fpr, p.tpr, p.threshold});
    fj["roc"] = roc;
    fj["warnings"] = f.warnings;
    folds.push_back(fj);
  }
  j["folds"] = folds;
  nlohmann::ordered_json summary;
  for (const auto& [name, member] : kReportedMetrics) {
    const MetricSummary s = r.summary(member);
    summary[name] = {{"mean", s.mean},
                     {"std", s.std},
                     {"min", s.min},
                     {"max", s.max},
                     {"formatted", plus_minus(s)}};
  }
  j["summary"] = summary;
  j["warnings"] = r.warnings;
  return j;
}

std::string roc_csv(const EvalReport& r) {
  std::string out = "fold,fpr,tpr,threshold\n";
  for (const auto& f : r.folds) {
    for (const auto& p : f.metrics.roc) {
      out += std::to_string(f.fold) + ',' + format_double(p.fpr) + ',' + format_double(p.tpr) +
             ',' + format_double(p.threshold) + '\n';
    }
  }
  return out;
}

namespace {

using FeatureSource = std::function<FeatureTable(std::size_t fold,
                                                 std::span<const std::size_t> train_rows)>;

std::vector<std::size_t> complement(std::size_t n, std::span<const std::size_t> sorted_rows) {
  std::vector<std::size_t> out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (j < sorted_rows.size() && sorted_rows[j] == i) {
      ++j;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

// Runs every fold with features supplied per fold and assembles the report.
CrossValidation run_folds(std::span<const int> labels, const PipelineConfig& c,
                          const FeatureSource& features_for, unsigned fold_threads) {
  const auto tests = stratified_kfold(labels, c.folds, derive_seed(c.seed, "folds"));
  CrossValidation cv;
  cv.report.folds.resize(tests.size());
  cv.audits.resize(tests.size());
  parallel_for(tests.size(), fold_threads, [&](std::size_t k) {
    try {
      const auto train_rows = complement(labels.size(), tests[k]);
      const FeatureTable all = features_for(k, train_rows);
      FoldAudit& audit = cv.audits[k];
      audit.fold = k;
      audit.test_rows = tests[k];
      const Classifier clf = fit_classifier(all.subset(train_rows), c, k, train_rows, &audit);
      const FeatureTable test = all.subset(tests[k]);
      FoldResult& f = cv.report.folds[k];
      f.fold = k;
      f.n_train = train_rows.size();
      f.n_test = tests[k].size();
      f.metrics = compute_metrics(test.labels(), clf.predict(test), c.threshold);
      f.warnings = clf.warnings;
    } catch (const DataError& e) {
      throw DataError("fold " + std::to_string(k) + ": " + e.what());
    }
  });
  cv.report.config = to_json(c);
  cv.report.subjects = labels.size();
  cv.report.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  for (const auto& f : cv.report.folds) {
    for (const auto& w : f.warnings) {
      cv.report.warnings.push_back("fold " + std::to_string(f.fold) + ": " + w);
    }
  }
  return cv;
}

std::vector<Volume3D> preprocess_all(const CohortIndex& cohort, const PreprocessConfig& p,
                                     unsigned threads) {
  std::vector<Volume3D> out(cohort.ids.size());
  parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = load_subject(cohort, i, p); });
  return out;
}

WeightStore fine_tune(const WeightStore& base, const PipelineConfig& c,
                      const std::vector<Volume3D>& inputs, std::span<const int> labels,
                      std::span<const std::size_t> rows, std::uint64_t stream,
                      const std::function<void(const std::string&)>& progress) {
  ResNet3d<float> net(c.network, base);
  auto head = LinearHead<float>::random(static_cast<int>(c.network.feature_dim()),
                                        derive_seed(c.seed, "finetune.head", stream));
  TrainState state;
  state.learning_rate = c.finetune.learning_rate;
  FreezeMask freeze;
  if (c.finetune.freeze_body) freeze.prefixes = {"stage"};
  std::vector<std::size_t> order(rows.begin(), rows.end());
  const auto batch = static_cast<std::size_t>(c.finetune.batch_size);
  for (int epoch = 0; epoch < c.finetune.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(c.seed, "finetune.epoch",
                                    stream * 100003 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += batch) {
      std::vector<Volume3D> xs;
      std::vector<int> ys;
      for (std::size_t t = s; t < std::min(order.size(), s + batch); ++t) {
        xs.push_back(inputs[order[t]]);
        ys.push_back(labels[order[t]]);
      }
      loss_sum += train_step(net, head, state, std::span<const Volume3D>(xs), ys, freeze);
      ++batches;
    }
    if (progress) {
      progress("finetune stream=" + std::to_string(stream) + " epoch=" + std::to_string(epoch + 1) +
               " loss=" + format_double(loss_sum / static_cast<double>(batches)));
    }
  }
  return net.to_weight_store();
}

}  // namespace

CrossValidation cross_validate(const FeatureTable& features, const PipelineConfig& c) {
  c.validate();
  return run_folds(features.labels(), c,
                   [&](std::size_t, std::span<const std::size_t>) { return features; },
                   c.threads);
}

nlohmann::ordered_json to_json(const PipelineModel& m) {
  nlohmann::ordered_json j;
  j["format"] = "pepnet-model";
  j["version"] = 1;
  j["preprocess"] = to_json(m.preprocess);
  j["network"] = to_json(m.network);
  j["weights"] = m.weights_file;
  j["pca"] = to_json(m.pca);
  j["ensemble"] = to_json(m.ensemble);
  j["threshold"] = m.threshold;
  j["config"] = m.config;
  return j;
}

PipelineModel pipeline_model_from_json(const nlohmann::json& j) {
  PipelineModel m;
  try {
    if (j.at("format").get<std::string>() != "pepnet-model" || j.at("version").get<int>() != 1) {
      throw DataError("unsupported model format");
    }
    m.preprocess = preprocess_config_from_json(j.at("preprocess"));
    m.network = network_config_from_json(j.at("network"));
    m.weights_file = j.at("weights").get<std::string>();
    m.pca = pca_from_json(j.at("pca"));
    m.ensemble = ensemble_from_json(j.at("ensemble"));
    m.threshold = j.at("threshold").get<double>();
    m.config = j.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  }
  if (m.pca.dim != static_cast<std::size_t>(m.network.feature_dim()) ||
      m.ensemble.width != m.pca.rank()) {
    throw DataError("model sections have inconsistent dimensions");
  }
  return m;
}

void save_model(PipelineModel model, const WeightStore& weights,
                const std::filesystem::path& path) {
  require_valid_weights(weights, model.network);
  model.weights_file = path.stem().string() + ".weights.mwts";
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  save_weights(weights, dir / model.weights_file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(model).dump(2) << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  LoadedModel out;
  out.model = pipeline_model_from_json(j);
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  out.weights = load_weights(dir / out.model.weights_file);
  require_valid_weights(out.weights, out.model.network);
  return out;
}

double predict_subject(const PipelineModel& model, const ResNet3d<float>& network,
                       const Volume3D& image, const Volume3D& mask) {
  const Volume3D x = preprocess(image, mask, model.preprocess);
  const auto features = network.forward_features(make_batch<float>(std::span(&x, 1)));
  return predict_proba(model.ensemble, model.pca.project(features));
}

PipelineResult run_pipeline(const PipelineConfig& c, PipelineStages stages) {
  c.validate();
  auto say = [&](const std::string& s) {
    if (stages.progress) stages.progress(s);
  };
  const CohortIndex cohort = load_cohort(c.cohort);
  const std::vector<int> labels = effective_labels(cohort, c);
  say("cohort subjects=" + std::to_string(labels.size()) +
      " positives=" + std::to_string(std::count(labels.begin(), labels.end(), 1)));
  const WeightStore base = initial_weights(c);

  PipelineResult result;
  std::vector<std::size_t> all_rows(labels.size());
  std::iota(all_rows.begin(), all_rows.end(), 0);

  auto finish_model = [&](const FeatureTable& features, WeightStore weights) {
    say("fitting final model");
    const Classifier clf = fit_classifier(features, c, static_cast<std::uint64_t>(c.folds));
    PipelineModel m;
    m.preprocess = c.preprocess;
    m.network = c.network;
    m.pca = clf.pca;
    m.ensemble = clf.ensemble;
    m.threshold = c.threshold;
    m.config = to_json(c);
    result.model = std::move(m);
    result.weights = std::move(weights);
  };

  if (c.finetune.epochs == 0) {
    say("extracting features");
    const ResNet3d<float> net(c.network, base);
    const FeatureTable features = extract_features(cohort, labels, c.preprocess, net, c.threads);
    if (stages.cross_validate) {
      say("cross-validating folds=" + std::to_string(c.folds));
      result.cv = cross_validate(features, c);
    }
    if (stages.final_model) finish_model(features, base);
    return result;
  }

  say("preprocessing subjects");
  const std::vector<Volume3D> inputs = preprocess_all(cohort, c.preprocess, c.threads);
  auto tuned_features = [&](const WeightStore& store) {
    const ResNet3d<float> net(c.network, store);
    return table_from_rows(cohort, labels, forward_features(net, inputs, c.threads));
  };
  if (stages.cross_validate) {
    result.cv = run_folds(
        labels, c,
        [&](std::size_t fold, std::span<const std::size_t> train_rows) {
          return tuned_features(fine_tune(base, c, inputs, labels, train_rows, fold, say));
        },
        1);
  }
  if (stages.final_model) {
    WeightStore tuned = fine_tune(base, c, inputs, labels, all_rows,
                                  static_cast<std::uint64_t>(c.folds), say);
    const FeatureTable features = tuned_features(tuned);
    finish_model(features, std::move(tuned));
  }
  return result;
}

}  // namespace pepnet
