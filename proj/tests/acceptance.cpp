// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <stdexcept>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "json.hpp"
#include "oracles/jacobi.hpp"
#include "oracles/naive_resnet.hpp"
#include "oracles/pairs.hpp"
#include "pepnet/balance.hpp"
#include "pepnet/cli.hpp"
#include "pepnet/metrics.hpp"
#include "pepnet/pca.hpp"
#include "pepnet/resnet3d.hpp"
#include "split_check.hpp"
#include "support.hpp"

using namespace pepnet;
namespace fs = std::filesystem;

namespace {

constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientBudgetSeconds = 300.0;
constexpr int kGradientConfigs = 24;
constexpr double kForwardTolerance = 1e-5;
constexpr int kGbtDatasets = 200;
constexpr int kGbtRounds = 100;
constexpr double kPcaTolerance = 1e-6;
constexpr int kAucVectors = 1000;
constexpr double kAucTolerance = 1e-12;
constexpr double kMinAuc = 0.85;
constexpr double kMinSensitivity = 0.80;
constexpr double kEndToEndBudgetSeconds = 1800.0;
constexpr double kNullLow = 0.35;
constexpr double kNullHigh = 0.65;

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Outcome gradient_correctness() {
  const Clock clock;
  double worst = 0.0;
  std::string worst_at;
  for (int seed = 0; seed < kGradientConfigs; ++seed) {
    auto p = testing::tiny_problem(std::uint64_t(seed));
    for (const auto& g : testing::compare_gradients(p)) {
      const double e = oracle::relative_error(g.analytic, g.numeric, testing::kGradientFloor);
      if (e > worst) {
        worst = e;
        worst_at = g.tensor + "[" + std::to_string(g.index) + "] of " + p.describe;
      }
    }
  }
  const double t = clock.seconds();
  return {worst < kGradientTolerance && t < kGradientBudgetSeconds,
          std::to_string(kGradientConfigs) + " configs, max rel err " + fmt(worst) + " (" +
              worst_at + ") vs " + fmt(kGradientTolerance) + ", " + fmt(t) + " s vs " +
              fmt(kGradientBudgetSeconds) + " s"};
}

Outcome forward_oracle() {
  double worst = 0.0;
  int configs = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    NetworkConfig c;
    const int k = 3 + 2 * int(seed % 3);
    const int s = 1 + int(seed % 2);
    c.stem.kernel = {k, k, k};
    c.stem.padding = {k / 2, k / 2, k / 2};
    c.stem.stride = {s, s, s};
    c.stem.out_channels = 2 + int(seed % 3);
    c.stem.max_pool = seed % 4 >= 2;
    c.stages = {{1 + int(seed % 2), c.stem.out_channels}, {1, 5}};
    const WeightStore w = testing::randomized(c, 100 + seed);
    const Volume3D v = testing::random_input({8, 8, 8}, 200 + seed);
    worst = std::max(worst, testing::max_relative(testing::features(c, w, v),
                                                  oracle::forward(c, w, testing::to_grid(v))));
    ++configs;
  }
  const NetworkConfig r18 = NetworkConfig::resnet18();
  ResNet3d<float> net(r18, init_weights(r18, 1));
  std::vector<Volume3D> batch{testing::random_input({64, 64, 64}, 3)};
  std::vector<LayerShape> trace;
  net.forward_features(make_batch<float>(batch), &trace);
  const bool stem_ok = !trace.empty() && trace.front().name == "stem" &&
                       trace.front().shape == std::array<std::int64_t, 4>{64, 32, 32, 32};
  return {worst < kForwardTolerance && stem_ok,
          std::to_string(configs) + " configs on 1x8x8x8, max rel err " + fmt(worst) + " vs " +
              fmt(kForwardTolerance) + "; ResNet-18 stem 1x64^3 -> " +
              (trace.empty() ? std::string("?")
                             : std::to_string(trace.front().shape[0]) + "x" +
                                   std::to_string(trace.front().shape[1]) + "^3")};
}

Outcome gbt_split_optimality() {
  std::size_t searches = 0, mismatches = 0;
  int loss_failures = 0;
  double max_rise = 0.0;
  std::string first;
  for (int seed = 0; seed < kGbtDatasets; ++seed) {
    const FeatureTable t = testing::random_split_table(std::uint64_t(1000 + seed));
    GbtParams p = testing::random_split_params(std::uint64_t(1000 + seed));
    p.rounds = kGbtRounds;
    const auto audit = testing::audit_splits(t, p);
    searches += audit.searches;
    if (audit.mismatches > 0 && first.empty()) {
      first = "dataset " + std::to_string(seed) + " " + audit.first_mismatch;
    }
    mismatches += audit.mismatches;
    loss_failures += audit.loss_nonincreasing ? 0 : 1;
    max_rise = std::max(max_rise, audit.max_loss_increase);
  }
  return {mismatches == 0 && loss_failures == 0,
          std::to_string(kGbtDatasets) + " datasets x " + std::to_string(kGbtRounds) + " rounds, " +
              std::to_string(searches) + " split searches, " + std::to_string(mismatches) +
              " mismatches" + (first.empty() ? "" : " (" + first + ")") + ", " +
              std::to_string(loss_failures) + " loss increases beyond n*eps (largest relative rise " +
              fmt(max_rise) + ")"};
}

Outcome smote_geometry() {
  std::size_t checked = 0, bad = 0;
  bool balanced = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const FeatureTable t = testing::random_table(38, 155, 2 + seed % 15, seed, 0.4 + 0.1 * double(seed % 8));
    const auto r = fit_resample(t, SmoteParams{5, 10, seed});
    balanced = balanced && r.table.count_label(1) == 155 && r.table.count_label(0) == 155 &&
               r.provenance.size() == 155 - 38;
    for (const auto& p : r.provenance) {
      ++checked;
      const double c =
          testing::segment_coefficient(r.table.row(p.row), t.row(p.base), t.row(p.neighbor));
      const bool ok = p.lambda >= 0.0 && p.lambda <= 1.0 && std::abs(c - p.lambda) <= 1e-9 &&
                      r.table.synthetic(p.row) && t.label(p.base) == 1 && t.label(p.neighbor) == 1;
      bad += ok ? 0 : 1;
    }
  }
  return {bad == 0 && balanced && checked > 0,
          std::to_string(checked) + " synthetic rows on 20 tables of 38/155, " +
              std::to_string(bad) + " off their recorded segment; " +
              (balanced ? "all resampled to 155/155" : "class counts not 155/155")};
}

Outcome pca_oracle() {
  std::mt19937_64 rng(17);
  double worst_value = 0.0, worst_vector = 0.0;
  bool monotone = true;
  int trials = 0;
  const std::vector<std::pair<std::size_t, std::size_t>> sizes{
      {50, 20}, {50, 10}, {30, 20}, {21, 20}, {40, 5}, {12, 3}, {50, 2}, {25, 15}};
  for (int rep = 0; rep < 4; ++rep) {
    for (auto [n, d] : sizes) {
      const auto x = testing::random_matrix(n, d, rng);
      const FeatureTable t = testing::matrix_table(x, n, d);
      const PcaModel m = fit_pca(t, int(d));
      const auto ref = oracle::jacobi_eigen(oracle::covariance(x, n, d), d);
      for (std::size_t i = 0; i < d; ++i) {
        worst_value = std::max(worst_value, std::abs(m.explained_variance[i] - ref.values[i]) /
                                                std::max(1.0, std::abs(ref.values[i])));
        auto v = ref.vectors[i];
        oracle::normalize_sign(v);
        for (std::size_t j = 0; j < d; ++j) {
          worst_vector = std::max(worst_vector, std::abs(m.component(i)[j] - v[j]));
        }
      }
      double prev = INFINITY;
      for (std::size_t r = 0; r <= d; ++r) {
        const double e = testing::reconstruction_error(m, t, r);
        if (e > prev + 1e-9 * std::max(1.0, prev)) monotone = false;
        prev = e;
      }
      ++trials;
    }
  }
  return {worst_value <= kPcaTolerance && worst_vector <= kPcaTolerance && monotone,
          std::to_string(trials) + " matrices up to 50x20, max variance err " + fmt(worst_value) +
              ", max component err " + fmt(worst_vector) + " vs " + fmt(kPcaTolerance) +
              "; reconstruction " + (monotone ? "nonincreasing" : "INCREASES") + " in r"};
}

Outcome auc_oracle() {
  std::mt19937_64 rng(23);
  double worst_pairs = 0.0, worst_trapezoid = 0.0;
  for (int trial = 0; trial < kAucVectors; ++trial) {
    const std::size_t n = 2 + rng() % 200;
    const int levels = 2 + int(rng() % 50);
    std::vector<int> y(n);
    std::vector<double> p(n);
    for (auto& v : y) v = int(rng() % 2);
    y[0] = 0;
    y[1] = 1;
    for (auto& v : p) v = double(rng() % unsigned(levels)) / double(levels - 1);
    const double auc = auc_rank(y, p);
    worst_pairs = std::max(worst_pairs, std::abs(auc - oracle::concordance(y, p)));
    worst_trapezoid = std::max(worst_trapezoid, std::abs(auc - trapezoid_auc(roc_curve(y, p))));
  }
  return {worst_pairs <= kAucTolerance && worst_trapezoid <= kAucTolerance,
          std::to_string(kAucVectors) + " vectors, max |rank - concordance| " + fmt(worst_pairs) +
              ", max |rank - trapezoid| " + fmt(worst_trapezoid) + " vs " + fmt(kAucTolerance)};
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pepnet");
  std::ostringstream out;
  return run_cli(args, out, std::cerr);
}

double summary_mean(const fs::path& report, const char* metric) {
  return nlohmann::json::parse(testing::slurp(report))["summary"][metric]["mean"].get<double>();
}

/// The default cohort shared by the three experiments, synthesized once.
struct Cohort {
  fs::path dir;
  fs::path report;
  bool synthesized = false;

  void ensure() {
    if (synthesized) return;
    fs::remove_all(dir);
    if (cli({"synth-data", "--out", dir.string()}) != 0) throw std::runtime_error("synth-data failed");
    synthesized = true;
  }
  bool evaluate(const fs::path& out, std::vector<std::string> extra = {}) {
    ensure();
    std::vector<std::string> args{"evaluate", "--cohort", dir.string(), "--report", out.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args) == 0;
  }
};

Outcome end_to_end(Cohort& c) {
  const Clock clock;
  c.ensure();
  const double synth_seconds = clock.seconds();
  if (!c.evaluate(c.report)) return {false, "evaluate failed"};
  const double t = clock.seconds();
  const double auc = summary_mean(c.report, "auc");
  const double sens = summary_mean(c.report, "sensitivity");
  return {auc >= kMinAuc && sens >= kMinSensitivity && t < kEndToEndBudgetSeconds,
          "default cohort, 64^3, 5-fold: mean AUC " + fmt(auc) + " vs " + fmt(kMinAuc) +
              ", mean sensitivity " + fmt(sens) + " vs " + fmt(kMinSensitivity) + ", " + fmt(t) +
              " s (synthesis " + fmt(synth_seconds) + " s) vs " + fmt(kEndToEndBudgetSeconds) +
              " s"};
}

Outcome null_control(Cohort& c) {
  const fs::path report = c.report.parent_path() / "report_null.json";
  if (!c.evaluate(report, {"--permute-labels", "true"})) return {false, "evaluate failed"};
  const double auc = summary_mean(report, "auc");
  return {auc >= kNullLow && auc <= kNullHigh,
          "permuted labels: mean AUC " + fmt(auc) + " vs [" + fmt(kNullLow) + ", " +
              fmt(kNullHigh) + "]"};
}

Outcome determinism(Cohort& c) {
  const fs::path again = c.report.parent_path() / "report_again.json";
  if (!fs::exists(c.report) && !c.evaluate(c.report)) return {false, "evaluate failed"};
  if (!c.evaluate(again)) return {false, "evaluate failed"};
  const std::string a = testing::slurp(c.report), b = testing::slurp(again);
  return {!a.empty() && a == b, "two evaluate runs, seed 0: " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()) + " bytes, " +
                                    (a == b ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = (fs::temp_directory_path() / "pepnet-acceptance").string();
  std::vector<std::string> only;
  app.add_option("--work-dir", work_dir, "Scratch directory for the cohort experiments")
      ->capture_default_str();
  app.add_option("--only", only, "Run only the named criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work_dir);

  Cohort cohort{fs::path(work_dir) / "cohort", fs::path(work_dir) / "report.json"};
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-correctness", gradient_correctness},
      {"forward-oracle", forward_oracle},
      {"gbt-split-optimality", gbt_split_optimality},
      {"smote-geometry", smote_geometry},
      {"pca-oracle", pca_oracle},
      {"auc-oracle", auc_oracle},
      {"end-to-end", [&] { return end_to_end(cohort); }},
      {"null-control", [&] { return null_control(cohort); }},
      {"determinism", [&] { return determinism(cohort); }},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
