#include "pepnet/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pepnet/error.hpp"

namespace pepnet {

void GbtParams::validate() const {
  if (max_depth < 0) throw DataError("max_depth must be nonnegative");
  if (rounds < 0) throw DataError("rounds must be nonnegative");
  if (!(eta > 0)) throw DataError("eta must be positive");
  if (lambda < 0 || gamma < 0 || min_child_weight < 0) {
    throw DataError("lambda, gamma and min_child_weight must be nonnegative");
  }
  if (!(scale_pos_weight > 0)) throw DataError("scale_pos_weight must be positive");
}

double Tree::value(std::span<const double> x) const {
  int i = 0;
  while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    i = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(i)].weight;
}

int Tree::depth() const {
  std::function<int(int)> walk = [&](int i) -> int {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    return n.is_leaf() ? 0 : 1 + std::max(walk(n.left), walk(n.right));
  };
  return nodes.empty() ? 0 : walk(0);
}

double TreeEnsemble::raw_score(std::span<const double> x) const {
  double s = 0.0;
  for (const auto& t : trees) s += t.value(x);
  return base_raw + eta * s;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double compute_pos_weight(std::span<const int> labels) {
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0) throw DataError("scale_pos_weight undefined: no positive labels");
  const auto neg = static_cast<std::ptrdiff_t>(labels.size()) - pos;
  return static_cast<double>(neg) / static_cast<double>(pos);
}

void grad_hess(std::span<const int> labels, std::span<const double> raw, double pos_weight,
               std::vector<double>& g, std::vector<double>& h) {
  g.resize(labels.size());
  h.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = sigmoid(raw[i]);
    const double w = labels[i] == 1 ? pos_weight : 1.0;
    g[i] = w * (p - static_cast<double>(labels[i]));
    h[i] = std::max(w * p * (1.0 - p), 1e-16);
  }
}

double weighted_logloss(std::span<const int> labels, std::span<const double> raw,
                        double pos_weight) {
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    // log(1 + exp(-z)) for positives, log(1 + exp(z)) for negatives.
    const double z = labels[i] == 1 ? raw[i] : -raw[i];
    const double l = z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    total += (labels[i] == 1 ? pos_weight : 1.0) * l;
  }
  return total;
}

SortedColumns::SortedColumns(const MatrixView& x) : x_(x), order_(x.cols) {
  for (std::size_t f = 0; f < x.cols; ++f) {
    auto& o = order_[f];
    o.resize(x.rows);
    std::iota(o.begin(), o.end(), std::size_t{0});
    std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) {
      return x.data[a * x.cols + f] < x.data[b * x.cols + f];
    });
  }
}

double split_gain(double gl, double hl, double gr, double hr, const GbtParams& p) {
  const double g = gl + gr, h = hl + hr;
  return 0.5 * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - g * g / (h + p.lambda)) -
         p.gamma;
}

std::optional<SplitCandidate> best_split(const SortedColumns& columns, std::span<const double> g,
                                         std::span<const double> h,
                                         std::span<const std::size_t> node_rows,
                                         const GbtParams& params) {
  const MatrixView& x = columns.matrix();
  if (node_rows.empty()) return std::nullopt;
  std::vector<char> member(x.rows, 0);
  double G = 0.0, H = 0.0, A = 0.0;
  for (std::size_t r : node_rows) {
    member[r] = 1;
    G += g[r];
    H += h[r];
    A += std::abs(g[r]);
  }
  const double parent_mass = A * A / (H + params.lambda);

  struct Scored {
    SplitCandidate split;
    double scale;
  };
  std::vector<Scored> candidates;
  std::vector<std::size_t> rows;
  std::vector<double> gr_suffix, hr_suffix, ar_suffix;
  for (std::size_t f = 0; f < x.cols; ++f) {
    rows.clear();
    for (std::size_t r : columns.order(f)) {
      if (member[r]) rows.push_back(r);
    }
    // Right-child sums accumulate directly instead of as a difference from the parent.
    const std::size_t n = rows.size();
    gr_suffix.assign(n + 1, 0.0);
    hr_suffix.assign(n + 1, 0.0);
    ar_suffix.assign(n + 1, 0.0);
    for (std::size_t i = n; i-- > 0;) {
      gr_suffix[i] = gr_suffix[i + 1] + g[rows[i]];
      hr_suffix[i] = hr_suffix[i + 1] + h[rows[i]];
      ar_suffix[i] = ar_suffix[i + 1] + std::abs(g[rows[i]]);
    }
    double gl = 0.0, hl = 0.0, al = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x.data[rows[i] * x.cols + f];
      if (i > 0) {
        const double prev = x.data[rows[i - 1] * x.cols + f];
        const double gr = gr_suffix[i], hr = hr_suffix[i], ar = ar_suffix[i];
        if (v > prev && hl >= params.min_child_weight && hr >= params.min_child_weight) {
          double thr = 0.5 * (prev + v);
          if (!(thr > prev)) thr = v;
          const double scale =
              al * al / (hl + params.lambda) + ar * ar / (hr + params.lambda) + parent_mass;
          candidates.push_back({{static_cast<int>(f), thr, split_gain(gl, hl, gr, hr, params)},
                                scale});
        }
      }
      gl += g[rows[i]];
      hl += h[rows[i]];
      al += std::abs(g[rows[i]]);
    }
  }
  if (candidates.empty()) return std::nullopt;
  const auto best = std::max_element(candidates.begin(), candidates.end(),
                                     [](const Scored& a, const Scored& b) {
                                       return a.split.gain < b.split.gain;
                                     });
  const double tol = kGainTieTolerance * best->scale;
  // A gain within rounding of zero ties with not splitting.
  if (!(best->split.gain > tol)) return std::nullopt;
  // Candidates are generated in (feature, threshold) order.
  for (const auto& c : candidates) {
    if (c.split.gain >= best->split.gain - tol) return c.split;
  }
  return best->split;
}

double leaf_weight(std::span<const double> g, std::span<const double> h,
                   std::span<const std::size_t> rows, const GbtParams& params) {
  double G = 0.0, H = 0.0, A = 0.0;
  for (std::size_t r : rows) {
    G += g[r];
    H += h[r];
    A += std::abs(g[r]);
  }
  // A gradient sum within rounding of zero is zero.
  if (std::abs(G) <= kGainTieTolerance * A) return 0.0;
  return -G / (H + params.lambda);
}

namespace {

bool all_columns_constant(const FeatureTable& t) {
  for (std::size_t f = 0; f < t.width(); ++f) {
    const double v0 = t.row(0)[f];
    for (std::size_t i = 1; i < t.rows(); ++i) {
      if (t.row(i)[f] != v0) return false;
    }
  }
  return true;
}

}  // namespace

TreeEnsemble fit_gbt(const FeatureTable& table, const GbtParams& params, FitTrace* trace,
                     const std::function<void(const SplitEvent&)>& observer) {
  params.validate();
  if (table.count_label(0) == 0 || table.count_label(1) == 0) {
    throw DataError("gradient boosting needs both classes present");
  }
  TreeEnsemble model;
  model.eta = params.eta;
  model.base_raw = 0.0;
  model.params = params;
  model.width = table.width();

  const auto labels = std::span<const int>(table.labels());
  std::vector<double> raw(table.rows(), model.base_raw);
  if (trace) trace->train_loss = {weighted_logloss(labels, raw, params.scale_pos_weight)};
  if (all_columns_constant(table)) return model;

  const MatrixView x = MatrixView::of(table);
  const SortedColumns columns(x);
  std::vector<double> g, h;
  for (int round = 0; round < params.rounds; ++round) {
    grad_hess(labels, raw, params.scale_pos_weight, g, h);
    Tree tree;
    struct Pending {
      int node;
      int depth;
      std::vector<std::size_t> rows;
    };
    std::vector<Pending> frontier;
    std::vector<std::size_t> all(table.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    tree.nodes.push_back({});
    frontier.push_back({0, 0, std::move(all)});
    // Depth-wise: expand every node of one level before the next.
    while (!frontier.empty()) {
      std::vector<Pending> next;
      for (auto& item : frontier) {
        std::optional<SplitCandidate> split;
        if (item.depth < params.max_depth) {
          split = best_split(columns, g, h, item.rows, params);
          if (observer) {
            observer({static_cast<std::size_t>(round), item.depth, item.rows, g, h, split});
          }
        }
        if (!split) {
          tree.nodes[static_cast<std::size_t>(item.node)].weight = leaf_weight(g, h, item.rows, params);
          continue;
        }
        std::vector<std::size_t> left, right;
        for (std::size_t r : item.rows) {
          (x.data[r * x.cols + static_cast<std::size_t>(split->feature)] < split->threshold
               ? left
               : right)
              .push_back(r);
        }
        const int li = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes.push_back({});
        auto& node = tree.nodes[static_cast<std::size_t>(item.node)];
        node.feature = split->feature;
        node.threshold = split->threshold;
        node.left = li;
        node.right = li + 1;
        next.push_back({li, item.depth + 1, std::move(left)});
        next.push_back({li + 1, item.depth + 1, std::move(right)});
      }
      frontier = std::move(next);
    }
    for (std::size_t i = 0; i < table.rows(); ++i) raw[i] += params.eta * tree.value(table.row(i));
    model.trees.push_back(std::move(tree));
    if (trace) trace->train_loss.push_back(weighted_logloss(labels, raw, params.scale_pos_weight));
  }
  return model;
}

double predict_proba(const TreeEnsemble& model, std::span<const double> row) {
  if (row.size() != model.width) {
    throw DataError("row width " + std::to_string(row.size()) + " does not match model width " +
                    std::to_string(model.width));
  }
  return sigmoid(model.raw_score(row));
}

std::vector<double> predict_proba(const TreeEnsemble& model, const FeatureTable& rows) {
  std::vector<double> out(rows.rows());
  for (std::size_t i = 0; i < rows.rows(); ++i) out[i] = predict_proba(model, rows.row(i));
  return out;
}

namespace {

nlohmann::ordered_json node_json(const Tree& t, int i) {
  const auto& n = t.nodes[static_cast<std::size_t>(i)];
  nlohmann::ordered_json j;
  if (n.is_leaf()) {
    j["leaf"] = n.weight;
  } else {
    j["feature"] = n.feature;
    j["threshold"] = n.threshold;
    j["left"] = node_json(t, n.left);
    j["right"] = node_json(t, n.right);
  }
  return j;
}

int node_from_json(const nlohmann::json& j, Tree& t) {
  const int idx = static_cast<int>(t.nodes.size());
  t.nodes.push_back({});
  if (j.contains("leaf")) {
    t.nodes[static_cast<std::size_t>(idx)].weight = j.at("leaf").get<double>();
    return idx;
  }
  TreeNode n;
  n.feature = j.at("feature").get<int>();
  n.threshold = j.at("threshold").get<double>();
  n.left = node_from_json(j.at("left"), t);
  n.right = node_from_json(j.at("right"), t);
  t.nodes[static_cast<std::size_t>(idx)] = n;
  return idx;
}

}  // namespace

nlohmann::ordered_json to_json(const TreeEnsemble& m) {
  nlohmann::ordered_json j;
  j["base_raw"] = m.base_raw;
  j["eta"] = m.eta;
  j["num_features"] = m.width;
  j["params"] = {{"max_depth", m.params.max_depth},
                 {"rounds", m.params.rounds},
                 {"lambda", m.params.lambda},
                 {"gamma", m.params.gamma},
                 {"min_child_weight", m.params.min_child_weight},
                 {"scale_pos_weight", m.params.scale_pos_weight}};
  auto trees = nlohmann::ordered_json::array();
  for (const auto& t : m.trees) trees.push_back(node_json(t, 0));
  j["trees"] = trees;
  return j;
}

TreeEnsemble ensemble_from_json(const nlohmann::json& j) {
  TreeEnsemble m;
  try {
    m.base_raw = j.at("base_raw").get<double>();
    m.eta = j.at("eta").get<double>();
    m.width = j.at("num_features").get<std::size_t>();
    const auto& p = j.at("params");
    m.params.max_depth = p.at("max_depth").get<int>();
    m.params.rounds = p.at("rounds").get<int>();
    m.params.eta = m.eta;
    m.params.lambda = p.at("lambda").get<double>();
    m.params.gamma = p.at("gamma").get<double>();
    m.params.min_child_weight = p.at("min_child_weight").get<double>();
    m.params.scale_pos_weight = p.at("scale_pos_weight").get<double>();
    for (const auto& tj : j.at("trees")) {
      Tree t;
      node_from_json(tj, t);
      for (const auto& n : t.nodes) {
        if (!n.is_leaf() && static_cast<std::size_t>(n.feature) >= m.width) {
          throw DataError("tree split feature out of range");
        }
      }
      m.trees.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed tree ensemble: ") + e.what());
  }
  return m;
}

}  // namespace pepnet
