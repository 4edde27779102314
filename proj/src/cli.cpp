#include "pepnet/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pepnet/cohort.hpp"
#include "pepnet/error.hpp"
#include "pepnet/pipeline.hpp"
#include "pepnet/plot.hpp"

namespace pepnet {

namespace {

using ojson = nlohmann::ordered_json;

ojson echo_scalar(const std::string& s) {
  if (s.empty()) return nullptr;
  try {
    return ojson::parse(s);
  } catch (const nlohmann::json::exception&) {
    return s;
  }
}

bool echoed(const CLI::Option* o) {
  const auto& names = o->get_lnames();
  return o->get_configurable() && !names.empty() && names.front() != "help" &&
         names.front() != "config";
}

/// Every long option of `app` with its resolved value (flag, config file or
/// default), keyed by name in declaration order.
ojson resolved_config(const CLI::App* app) {
  ojson j = ojson::object();
  for (const CLI::Option* o : app->get_options()) {
    if (!echoed(o)) continue;
    ojson value;
    if (o->count() == 0) {
      value = echo_scalar(o->get_default_str());
    } else if (o->get_expected_max() > 1) {
      value = ojson::array();
      for (const auto& r : o->results()) value.push_back(echo_scalar(r));
    } else {
      value = echo_scalar(o->results().back());
    }
    if (o->get_type_name() == "BOOLEAN" && value.is_number()) value = value.get<double>() != 0.0;
    j[o->get_lnames().front()] = value;
  }
  return j;
}

/// JSON config files: a flat object whose keys mirror the selected
/// subcommand's long flags ('_' may stand for '-').
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App* app, bool, bool, std::string) const override {
    return resolved_config(app).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConfigError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config file must hold a JSON object");
    std::vector<std::string> parents;
    const auto subs = root_->get_subcommands();
    if (!subs.empty()) parents.push_back(subs.front()->get_name());
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      if (value.is_object()) {
        throw CLI::ConfigError("config key '" + key + "' must not be an object");
      }
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      } else if (!value.is_null()) {
        item.inputs.push_back(value.is_string() ? value.get<std::string>() : value.dump());
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  const CLI::App* root_;
};

class Progress {
 public:
  Progress(std::ostream& err, std::string command) : err_(err), command_(std::move(command)) {}
  void operator()(const std::string& message) const {
    err_ << "[pepnet " << command_ << "] " << message << '\n' << std::flush;
  }

 private:
  std::ostream& err_;
  std::string command_;
};

Dims to_dims(const std::vector<std::int64_t>& v, const std::string& flag) {
  if (v.size() != 3) throw UsageError(flag + " needs three comma-separated values");
  return {v[0], v[1], v[2]};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_sidecar(const std::filesystem::path& output, const std::string& command,
                   const ojson& config) {
  ojson j;
  j["command"] = command;
  j["config"] = config;
  write_text(output.string() + ".config.json", j.dump(2) + "\n");
}

struct SynthFlags {
  CohortSpec spec;
  std::string out;
  std::vector<std::int64_t> dims{spec.dims.x, spec.dims.y, spec.dims.z};
  std::vector<double> spacing{spec.spacing.x, spec.spacing.y, spec.spacing.z};
  unsigned threads = default_threads();
};

struct RoiFlags {
  std::string image, mask, out;
  std::int64_t margin = kDefaultCropMargin;
  std::vector<std::int64_t> resize;
};

struct PipelineFlags {
  PipelineConfig config;
  std::string cohort, weights, mask_kind = "lung", order = "smote-pca";
  std::vector<std::int64_t> grid{kDefaultGrid.x, kDefaultGrid.y, kDefaultGrid.z};
  std::string out, report, roc, model_out;

  PipelineConfig resolve() {
    PipelineConfig c = config;
    c.cohort = cohort;
    c.weights = weights;
    c.preprocess.mask_kind = parse_mask_kind(mask_kind);
    c.preprocess.grid = to_dims(grid, "--grid");
    c.order = parse_reduction_order(order);
    return c;
  }
};

struct PredictFlags {
  std::string model, image, mask, id;
  unsigned threads = default_threads();
};

struct PlotFlags {
  std::string roc, out, title = "ROC";
};

void add_preprocess_flags(CLI::App* cmd, PipelineFlags& f) {
  auto& p = f.config.preprocess;
  cmd->add_option("--cohort", f.cohort, "Cohort directory (labels.csv, images/, masks/)")
      ->required();
  cmd->add_option("--mask-kind", f.mask_kind, "ROI mask: lung or cardiac")
      ->capture_default_str();
  cmd->add_option("--weights", f.weights, "MWTS weight store; omit for scratch init");
  cmd->add_option("--seed", f.config.seed, "Master seed")->capture_default_str();
  cmd->add_option("--hu-low", p.hu_low, "Intensity window low (HU)")->capture_default_str();
  cmd->add_option("--hu-high", p.hu_high, "Intensity window high (HU)")->capture_default_str();
  cmd->add_option("--margin", p.margin, "Crop margin (voxels)")->capture_default_str();
  cmd->add_option("--grid", f.grid, "Network input grid x,y,z")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  cmd->add_option("--permute-labels", f.config.permute_labels,
                  "Shuffle labels under the seed (null control)")
      ->capture_default_str();
  cmd->add_option("--threads", f.config.threads, "Worker threads")->capture_default_str();
}

void add_model_flags(CLI::App* cmd, PipelineFlags& f) {
  auto& c = f.config;
  cmd->add_option("--folds", c.folds, "Cross-validation folds")->capture_default_str();
  cmd->add_option("--smote", c.use_smote, "Borderline-SMOTE on training rows")
      ->capture_default_str();
  cmd->add_option("--k-neighbors", c.k_neighbors, "SMOTE interpolation neighbors")
      ->capture_default_str();
  cmd->add_option("--m-neighbors", c.m_neighbors, "SMOTE danger neighbors")
      ->capture_default_str();
  cmd->add_option("--order", f.order, "smote-pca or pca-smote")->capture_default_str();
  cmd->add_option("--pca-components", c.pca_components, "Retained PCA components")
      ->capture_default_str();
  cmd->add_option("--max-depth", c.gbt.max_depth, "Tree depth")->capture_default_str();
  cmd->add_option("--rounds", c.gbt.rounds, "Boosting rounds")->capture_default_str();
  cmd->add_option("--eta", c.gbt.eta, "Learning rate")->capture_default_str();
  cmd->add_option("--lambda", c.gbt.lambda, "L2 leaf regularization")->capture_default_str();
  cmd->add_option("--gamma", c.gbt.gamma, "Minimum split gain")->capture_default_str();
  cmd->add_option("--min-child-weight", c.gbt.min_child_weight, "Minimum child hessian")
      ->capture_default_str();
  cmd->add_option("--pos-weight", c.use_pos_weight,
                  "scale_pos_weight from pre-SMOTE training labels")
      ->capture_default_str();
  cmd->add_option("--threshold", c.threshold, "Decision threshold")->capture_default_str();
  cmd->add_option("--finetune-epochs", c.finetune.epochs, "Fine-tuning epochs (0 = off)")
      ->capture_default_str();
  cmd->add_option("--finetune-batch", c.finetune.batch_size, "Fine-tuning batch size")
      ->capture_default_str();
  cmd->add_option("--finetune-lr", c.finetune.learning_rate, "Fine-tuning ADAM learning rate")
      ->capture_default_str();
  cmd->add_option("--freeze-body", c.finetune.freeze_body, "Train only the stem")
      ->capture_default_str();
}

int synth_data(SynthFlags& f, const ojson& echo, const Progress& say) {
  f.spec.dims = to_dims(f.dims, "--dims");
  if (f.spacing.size() != 3) throw UsageError("--spacing needs three values");
  f.spec.spacing = {f.spacing[0], f.spacing[1], f.spacing[2]};
  say("config " + echo.dump());
  write_cohort(f.spec, f.out, f.threads);
  say("wrote " + std::to_string(f.spec.n_positive + f.spec.n_negative) + " subjects to " + f.out);
  return 0;
}

int extract_roi(const RoiFlags& f, const ojson& echo, const Progress& say) {
  say("config " + echo.dump());
  if (f.margin < 0) throw UsageError("--margin must be nonnegative");
  const Volume3D image = read_volume(f.image);
  const Volume3D mask = read_volume(f.mask);
  if (image.dims() != mask.dims()) throw DataError("image and mask dims differ");
  const RoiBox box = tight_bbox(mask);
  Volume3D roi = crop(image, box, f.margin);
  if (!f.resize.empty()) roi = resize_trilinear(roi, to_dims(f.resize, "--resize"));
  write_volume(roi, f.out);
  write_sidecar(f.out, "extract-roi", echo);
  say("box min=" + std::to_string(box.min[0]) + "," + std::to_string(box.min[1]) + "," +
      std::to_string(box.min[2]) + " max=" + std::to_string(box.max[0]) + "," +
      std::to_string(box.max[1]) + "," + std::to_string(box.max[2]));
  return 0;
}

int extract_features_cmd(PipelineFlags& f, const ojson& echo, const Progress& say) {
  const PipelineConfig c = f.resolve();
  c.validate();
  say("config " + echo.dump());
  const CohortIndex cohort = load_cohort(c.cohort);
  const ResNet3d<float> net(c.network, initial_weights(c));
  const FeatureTable features =
      extract_features(cohort, effective_labels(cohort, c), c.preprocess, net, c.threads);
  write_feature_csv(features, f.out);
  write_sidecar(f.out, "extract-features", echo);
  say("wrote " + std::to_string(features.rows()) + " feature rows to " + f.out);
  return 0;
}

int train_cmd(PipelineFlags& f, const ojson& echo, const Progress& say) {
  const PipelineConfig c = f.resolve();
  say("config " + echo.dump());
  PipelineStages stages{false, true, say};
  const PipelineResult r = run_pipeline(c, stages);
  save_model(*r.model, r.weights, f.model_out);
  say("wrote model " + f.model_out);
  return 0;
}

int evaluate_cmd(PipelineFlags& f, const ojson& echo, const Progress& say) {
  const PipelineConfig c = f.resolve();
  say("config " + echo.dump());
  PipelineStages stages{true, !f.model_out.empty(), say};
  const PipelineResult r = run_pipeline(c, stages);
  const EvalReport& report = r.cv->report;
  write_text(f.report, to_json(report).dump(2) + "\n");
  if (!f.roc.empty()) write_text(f.roc, roc_csv(report));
  if (r.model) save_model(*r.model, r.weights, f.model_out);
  for (const char* name : {"accuracy", "auc", "sensitivity", "specificity"}) {
    say(std::string(name) + " " +
        to_json(report)["summary"][name]["formatted"].get<std::string>());
  }
  return 0;
}

int predict_cmd(const PredictFlags& f, std::ostream& out, const ojson& echo, const Progress& say) {
  say("config " + echo.dump());
  const LoadedModel loaded = load_model(f.model);
  const ResNet3d<float> net(loaded.model.network, loaded.weights);
  const double p =
      predict_subject(loaded.model, net, read_volume(f.image), read_volume(f.mask));
  const std::string id = f.id.empty() ? std::filesystem::path(f.image).stem().string() : f.id;
  out << id << ',' << format_double(p) << '\n';
  return 0;
}

int plot_roc_cmd(const PlotFlags& f, const ojson& echo, const Progress& say) {
  say("config " + echo.dump());
  write_text(f.out, roc_svg(parse_roc_csv(read_text(f.roc)), f.title));
  write_sidecar(f.out, "plot-roc", echo);
  say("wrote " + f.out);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Volumetric prognosis pipeline: ROI extraction, 3D ResNet features, "
               "Borderline-SMOTE, PCA and gradient-boosted trees"};
  app.name(args.empty() ? "pepnet" : std::filesystem::path(args[0]).filename().string());
  app.require_subcommand(1);
  app.set_config("--config", "", "JSON file mirroring the subcommand's flags");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();  // --config may follow the subcommand

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate a synthetic phantom cohort");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.spec.seed, "Master seed")->capture_default_str();
  synth_cmd->add_option("--n-positive", synth.spec.n_positive, "Positive subjects")
      ->capture_default_str();
  synth_cmd->add_option("--n-negative", synth.spec.n_negative, "Negative subjects")
      ->capture_default_str();
  synth_cmd->add_option("--dims", synth.dims, "Volume dims x,y,z")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  synth_cmd->add_option("--spacing", synth.spacing, "Voxel spacing x,y,z (mm)")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  synth_cmd->add_option("--pos-radius-mean", synth.spec.positive.radius_mean)
      ->capture_default_str();
  synth_cmd->add_option("--pos-radius-sd", synth.spec.positive.radius_sd)->capture_default_str();
  synth_cmd->add_option("--pos-contrast", synth.spec.positive.contrast_hu)->capture_default_str();
  synth_cmd->add_option("--neg-radius-mean", synth.spec.negative.radius_mean)
      ->capture_default_str();
  synth_cmd->add_option("--neg-radius-sd", synth.spec.negative.radius_sd)->capture_default_str();
  synth_cmd->add_option("--neg-contrast", synth.spec.negative.contrast_hu)->capture_default_str();
  synth_cmd->add_option("--noise", synth.spec.noise_hu, "Gaussian noise sd (HU)")
      ->capture_default_str();
  synth_cmd->add_option("--scale-jitter", synth.spec.scale_jitter, "Relative organ size variation")
      ->capture_default_str();
  synth_cmd->add_option("--shift-jitter", synth.spec.shift_jitter, "Organ shift (voxels)")
      ->capture_default_str();
  synth_cmd->add_option("--threads", synth.threads, "Worker threads")->capture_default_str();

  RoiFlags roi;
  auto* roi_cmd = app.add_subcommand("extract-roi", "Crop an image to its mask's bounding box");
  roi_cmd->add_option("--image", roi.image, "Intensity MVOL")->required();
  roi_cmd->add_option("--mask", roi.mask, "Mask MVOL")->required();
  roi_cmd->add_option("--margin", roi.margin, "Crop margin (voxels)")->capture_default_str();
  roi_cmd->add_option("--out", roi.out, "Output MVOL")->required();
  roi_cmd->add_option("--resize", roi.resize, "Resample to ox,oy,oz")
      ->delimiter(',')
      ->expected(3);

  PipelineFlags features;
  auto* features_cmd =
      app.add_subcommand("extract-features", "Pooled network features for every subject");
  add_preprocess_flags(features_cmd, features);
  features_cmd->add_option("--out", features.out, "Feature CSV")->required();

  PipelineFlags train;
  auto* train_cmd_app = app.add_subcommand("train", "Fit the deployable model on all subjects");
  add_preprocess_flags(train_cmd_app, train);
  add_model_flags(train_cmd_app, train);
  train_cmd_app->add_option("--model-out", train.model_out, "Model JSON")->required();

  PipelineFlags evaluate;
  auto* evaluate_cmd_app = app.add_subcommand("evaluate", "Stratified cross-validation report");
  add_preprocess_flags(evaluate_cmd_app, evaluate);
  add_model_flags(evaluate_cmd_app, evaluate);
  evaluate_cmd_app->add_option("--report", evaluate.report, "EvalReport JSON")->required();
  evaluate_cmd_app->add_option("--roc", evaluate.roc, "ROC CSV (fold,fpr,tpr,threshold)");
  evaluate_cmd_app->add_option("--model-out", evaluate.model_out,
                               "Also fit and write the final model");

  PredictFlags predict;
  auto* predict_cmd_app = app.add_subcommand("predict", "Probability for one subject");
  predict_cmd_app->add_option("--model", predict.model, "Model JSON")->required();
  predict_cmd_app->add_option("--image", predict.image, "Intensity MVOL")->required();
  predict_cmd_app->add_option("--mask", predict.mask, "Mask MVOL")->required();
  predict_cmd_app->add_option("--id", predict.id, "Subject id (default: image file stem)");

  PlotFlags plot;
  auto* plot_cmd_app = app.add_subcommand("plot-roc", "SVG ROC plot from an exported ROC CSV");
  plot_cmd_app->add_option("--roc", plot.roc, "ROC CSV")->required();
  plot_cmd_app->add_option("--out", plot.out, "Output SVG")->required();
  plot_cmd_app->add_option("--title", plot.title, "Plot title")->capture_default_str();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const Progress say(err, cmd->get_name());
  const ojson echo = resolved_config(cmd);
  try {
    if (cmd == synth_cmd) return synth_data(synth, echo, say);
    if (cmd == roi_cmd) return extract_roi(roi, echo, say);
    if (cmd == features_cmd) return extract_features_cmd(features, echo, say);
    if (cmd == train_cmd_app) return train_cmd(train, echo, say);
    if (cmd == evaluate_cmd_app) return evaluate_cmd(evaluate, echo, say);
    if (cmd == predict_cmd_app) return predict_cmd(predict, out, echo, say);
    return plot_roc_cmd(plot, echo, say);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << cmd->help();
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace pepnet
