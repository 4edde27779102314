#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles/finite_difference.hpp"
#include "pepnet/error.hpp"
#include "pepnet/gbt.hpp"
#include "split_check.hpp"

using namespace pepnet;

namespace {

FeatureTable table_of(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels) {
  FeatureTable t(rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) t.add_row("r" + std::to_string(i), labels[i], rows[i]);
  return t;
}

double walk(const Tree& t, std::span<const double> x) {
  const TreeNode* n = &t.nodes[0];
  while (!n->is_leaf()) n = &t.nodes[std::size_t(x[std::size_t(n->feature)] < n->threshold ? n->left : n->right)];
  return n->weight;
}

}  // namespace

TEST_CASE("compute_pos_weight") {
  std::vector<int> cohort(155, 0);
  cohort.resize(193, 1);
  CHECK(compute_pos_weight(cohort) == doctest::Approx(155.0 / 38.0));
  CHECK(compute_pos_weight(cohort) == doctest::Approx(4.0789).epsilon(1e-4));
  CHECK(compute_pos_weight(std::vector<int>{0, 1, 1, 0}) == 1.0);
  CHECK(compute_pos_weight(std::vector<int>{0, 0, 1, 0}) == 3.0);
  CHECK_THROWS_AS(compute_pos_weight(std::vector<int>{0, 0}), DataError);
}

TEST_CASE("grad_hess: symmetric cases and the hessian floor") {
  std::vector<double> g, h;
  grad_hess(std::vector<int>{0, 1}, std::vector<double>{0.0, 0.0}, 4.0, g, h);
  CHECK(g[0] == 0.5);
  CHECK(h[0] == 0.25);
  CHECK(g[1] == -2.0);
  CHECK(h[1] == 1.0);
  grad_hess(std::vector<int>{1}, std::vector<double>{800.0}, 1.0, g, h);
  CHECK(h[0] == 1e-16);
}

TEST_CASE("grad_hess: matches derivatives of the weighted log loss") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> y{int(rng() % 2)};
    std::vector<double> raw{n(rng)};
    const double w = 1.0 + double(rng() % 4);
    std::vector<double> g, h;
    grad_hess(y, raw, w, g, h);
    auto loss = [&] { return weighted_logloss(y, raw, w); };
    CHECK(std::abs(oracle::central_difference(loss, raw[0], 1e-5) - g[0]) < 1e-6);
    std::vector<double> gp, hp, gm, hm;
    const double r0 = raw[0];
    raw[0] = r0 + 1e-5;
    grad_hess(y, raw, w, gp, hp);
    raw[0] = r0 - 1e-5;
    grad_hess(y, raw, w, gm, hm);
    CHECK(std::abs((gp[0] - gm[0]) / 2e-5 - h[0]) < 1e-6);
  }
}

TEST_CASE("best_split: constant feature has no split") {
  const FeatureTable t = table_of({{1}, {1}, {1}, {1}}, {0, 0, 1, 1});
  const SortedColumns cols(MatrixView::of(t));
  const std::vector<double> g{0.5, 0.5, -0.5, -0.5}, h{0.25, 0.25, 0.25, 0.25};
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  CHECK(!best_split(cols, g, h, rows, GbtParams{}).has_value());
}

TEST_CASE("best_split: x = 1..4, y = 0,0,1,1 splits at 2.5") {
  const FeatureTable t = table_of({{1}, {2}, {3}, {4}}, {0, 0, 1, 1});
  const SortedColumns cols(MatrixView::of(t));
  std::vector<double> g, h;
  grad_hess(t.labels(), std::vector<double>(4, 0.0), 1.0, g, h);
  GbtParams p;
  p.min_child_weight = 0.0;
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  const auto s = best_split(cols, g, h, rows, p);
  REQUIRE(s.has_value());
  CHECK(s->feature == 0);
  CHECK(s->threshold == 2.5);
  // G_L = 1, H_L = 0.5, G_R = -1, H_R = 0.5, G = 0, H = 1.
  CHECK(s->gain == doctest::Approx(0.5 * (1.0 / 1.5 + 1.0 / 1.5)));
  CHECK(s->gain == doctest::Approx(split_gain(1.0, 0.5, -1.0, 0.5, p)));
}

TEST_CASE("best_split: ties go to the lowest feature, then lowest threshold") {
  // Features 0 and 1 are identical, so every split has an exact twin.
  const FeatureTable t = table_of({{1, 1}, {2, 2}, {3, 3}, {4, 4}}, {0, 1, 0, 1});
  const SortedColumns cols(MatrixView::of(t));
  const std::vector<double> g{1, -1, 1, -1}, h{1, 1, 1, 1};
  GbtParams p;
  p.lambda = 0.0;
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  const auto s = best_split(cols, g, h, rows, p);
  REQUIRE(s.has_value());
  CHECK(s->feature == 0);
  CHECK(s->threshold == 1.5);
}

TEST_CASE("best_split: min_child_weight and gamma veto splits") {
  const FeatureTable t = table_of({{1}, {2}, {3}, {4}}, {0, 0, 1, 1});
  const SortedColumns cols(MatrixView::of(t));
  std::vector<double> g, h;
  grad_hess(t.labels(), std::vector<double>(4, 0.0), 1.0, g, h);
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  GbtParams p;
  p.min_child_weight = 0.6;
  CHECK(!best_split(cols, g, h, rows, p).has_value());
  p.min_child_weight = 0.0;
  p.gamma = 1.0;
  CHECK(!best_split(cols, g, h, rows, p).has_value());
}

TEST_CASE("fit: every split matches the exhaustive oracle on random datasets") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const FeatureTable t = testing::random_split_table(seed);
    GbtParams p = testing::random_split_params(seed);
    p.rounds = 20;
    const auto audit = testing::audit_splits(t, p);
    CAPTURE(seed);
    CAPTURE(audit.first_mismatch);
    CHECK(audit.searches > 0);
    CHECK(audit.mismatches == 0);
    CHECK(audit.loss_nonincreasing);
  }
}

TEST_CASE("fit: zero rounds predicts 0.5") {
  const FeatureTable t = table_of({{1}, {2}, {3}}, {0, 1, 0});
  GbtParams p;
  p.rounds = 0;
  const TreeEnsemble m = fit_gbt(t, p);
  CHECK(m.trees.empty());
  for (double q : predict_proba(m, t)) CHECK(q == 0.5);
}

TEST_CASE("fit: a single forced leaf has weight -G / (H + 1)") {
  const FeatureTable t = table_of({{1}, {2}, {3}, {4}}, {1, 0, 0, 0});
  GbtParams p;
  p.rounds = 1;
  p.max_depth = 0;
  p.scale_pos_weight = 3.0;
  const TreeEnsemble m = fit_gbt(t, p);
  REQUIRE(m.trees.size() == 1);
  // g = (-1.5, 0.5, 0.5, 0.5), h = (0.75, 0.25, 0.25, 0.25).
  CHECK(m.trees[0].nodes.size() == 1);
  CHECK(m.trees[0].nodes[0].weight == doctest::Approx(0.0));
  p.scale_pos_weight = 1.0;
  // g = (-0.5, 0.5, 0.5, 0.5): G = 1, H = 1.
  CHECK(fit_gbt(t, p).trees[0].nodes[0].weight == doctest::Approx(-0.5));
  p.scale_pos_weight = 5.0;
  // G = -2.5 + 1.5 = -1, H = 1.25 + 0.75 = 2.
  CHECK(fit_gbt(t, p).trees[0].nodes[0].weight == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("fit: separable 2-D toy set reaches training accuracy 1") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FeatureTable t(2);
  for (int i = 0; i < 60; ++i) {
    const double x[2] = {u(rng), u(rng)};
    t.add_row("r" + std::to_string(i), x[0] + 0.5 * x[1] > 0.1 ? 1 : 0, x);
  }
  const TreeEnsemble m = fit_gbt(t, GbtParams{});
  const auto p = predict_proba(m, t);
  for (std::size_t i = 0; i < t.rows(); ++i) CHECK((p[i] >= 0.5 ? 1 : 0) == t.label(i));
  for (const auto& tree : m.trees) CHECK(tree.depth() <= 3);
}

TEST_CASE("predict: tree walks, stumps and width checks") {
  const FeatureTable t = testing::random_split_table(77);
  const TreeEnsemble m = fit_gbt(t, GbtParams{});
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double raw = m.base_raw;
    for (const auto& tree : m.trees) raw += m.eta * walk(tree, t.row(i));
    CHECK(predict_proba(m, t.row(i)) == doctest::Approx(1.0 / (1.0 + std::exp(-raw))).epsilon(1e-14));
  }
  TreeEnsemble stump;
  stump.width = 1;
  stump.trees.push_back(Tree{{{0, 0.5, 1, 2, 0.0}, {-1, 0, -1, -1, -1.0}, {-1, 0, -1, -1, 1.0}}});
  CHECK(predict_proba(stump, std::vector<double>{0.0}) == doctest::Approx(sigmoid(-0.1)));
  CHECK(predict_proba(stump, std::vector<double>{1.0}) == doctest::Approx(sigmoid(0.1)));
  CHECK(predict_proba(TreeEnsemble{{}, 0.1, 0.0, {}, 1}, std::vector<double>{3.0}) == 0.5);
  CHECK_THROWS_AS(predict_proba(stump, std::vector<double>{0.0, 1.0}), DataError);
}

TEST_CASE("fit: constant features give a base-score model; one class is an error") {
  const FeatureTable t = table_of({{2, 5}, {2, 5}, {2, 5}}, {0, 1, 1});
  const TreeEnsemble m = fit_gbt(t, GbtParams{});
  CHECK(m.trees.empty());
  CHECK_THROWS_AS(fit_gbt(table_of({{1}, {2}}, {1, 1}), GbtParams{}), DataError);
}

TEST_CASE("fit: deterministic serialization and json round-trip") {
  const FeatureTable t = testing::random_split_table(5);
  const TreeEnsemble a = fit_gbt(t, GbtParams{});
  const TreeEnsemble b = fit_gbt(t, GbtParams{});
  CHECK(to_json(a).dump() == to_json(b).dump());
  const TreeEnsemble back = ensemble_from_json(nlohmann::json::parse(to_json(a).dump()));
  CHECK(to_json(back).dump() == to_json(a).dump());
  CHECK(predict_proba(back, t) == predict_proba(a, t));
  CHECK_THROWS_AS(ensemble_from_json(nlohmann::json::parse(R"({"eta":0.1})")), DataError);
}
