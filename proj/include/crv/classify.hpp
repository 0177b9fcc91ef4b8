/*
 * Copyright 2026 The CRV Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Diagnostic classifiers over fingerprint vectors. Label 1 means the step is
// incorrect.
//
//   GBC           gradient-boosted regression trees on binomial log-loss
//   LogReg        L2-regularized logistic regression on standardized inputs
//   Dummy         constant positive rate
//   RandomForest  bagged regression trees on the 0/1 label (optional)
//
// Training is deterministic for fixed inputs, config and seed.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crv/error.hpp"
#include "crv/random.hpp"

namespace crv {

using Matrix = std::vector<std::vector<double>>;

enum class ModelKind { GBC, LogReg, Dummy, RandomForest };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::GBC: return "gbc";
    case ModelKind::LogReg: return "logreg";
    case ModelKind::Dummy: return "dummy";
    case ModelKind::RandomForest: return "random_forest";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "gbc") return ModelKind::GBC;
  if (s == "logreg") return ModelKind::LogReg;
  if (s == "dummy") return ModelKind::Dummy;
  if (s == "random_forest" || s == "rf") return ModelKind::RandomForest;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

struct TrainConfig {
  int n_trees = 100;
  double learning_rate = 0.1;
  int max_depth = 3;
  int min_samples_leaf = 1;
  double subsample = 1.0;
  std::uint64_t seed = 0;
  bool balanced_class_weight = false;
  // Logistic regression.
  double l2_strength = 1.0;
  int max_iter = 100;
  double tol = 1e-8;
  // Random forest: features tried per split; 0 means floor(sqrt(d)).
  int max_features = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void validate_config(const TrainConfig& c) {
  if (c.n_trees < 0) throw ConfigError("n_trees must be >= 0");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (c.max_depth < 1) throw ConfigError("max_depth must be >= 1");
  if (c.min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be >= 1");
  if (!(c.subsample > 0.0 && c.subsample <= 1.0)) throw ConfigError("subsample must lie in (0, 1]");
  if (!(c.l2_strength > 0.0)) throw ConfigError("l2_strength must be > 0");
  if (c.max_iter < 1) throw ConfigError("max_iter must be >= 1");
  if (!(c.tol > 0.0)) throw ConfigError("tol must be > 0");
  if (c.max_features < 0) throw ConfigError("max_features must be >= 0");
}

// Internal nodes send x[feature] <= threshold left. Leaves have feature -1.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }

  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

struct DiagnosticModel {
  ModelKind kind = ModelKind::GBC;
  std::vector<std::string> feature_names;
  std::size_t n_features = 0;
  TrainConfig config;
  double prior = 0.5;  // (weighted) positive rate of the training labels
  // GBC / RF.
  double base_score = 0.0;
  std::vector<RegressionTree> trees;
  std::vector<double> gain;  // unnormalized split gain per feature
  // LogReg.
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<double> mean;
  std::vector<double> scale;
  // Free-form annotations such as the probe layer.
  nlohmann::json metadata = nlohmann::json::object();

  double decision_function(std::span<const double> x) const;
  double predict_proba(std::span<const double> x) const;
  std::vector<double> predict_proba(const Matrix& X) const {
    std::vector<double> out;
    out.reserve(X.size());
    for (const auto& row : X) out.push_back(predict_proba(row));
    return out;
  }
};

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline constexpr double kProbaFloor = 1e-15;

inline double clamp_proba(double p) { return std::clamp(p, kProbaFloor, 1.0 - kProbaFloor); }

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Binomial log-loss of raw score z against label y.
inline double logloss_raw(double z, int y) { return softplus(z) - (y == 1 ? z : 0.0); }

struct Dataset {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<std::vector<double>> cols;  // column-major copy
  std::vector<int> y;
};

inline Dataset check_training_data(const Matrix& X, std::span<const int> y) {
  if (X.size() != y.size()) throw DimensionMismatch(X.size(), y.size());
  if (X.size() < 2) throw SingleClassData();
  Dataset ds;
  ds.n = X.size();
  ds.d = X.front().size();
  ds.cols.assign(ds.d, std::vector<double>(ds.n));
  bool has_pos = false;
  bool has_neg = false;
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (X[i].size() != ds.d) throw DimensionMismatch(ds.d, X[i].size());
    for (std::size_t j = 0; j < ds.d; ++j) {
      if (!std::isfinite(X[i][j])) throw ConfigError("non-finite feature value in row " + std::to_string(i));
      ds.cols[j][i] = X[i][j];
    }
    if (y[i] != 0 && y[i] != 1) throw ConfigError("labels must be 0 or 1");
    (y[i] == 1 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) throw SingleClassData();
  ds.y.assign(y.begin(), y.end());
  return ds;
}

inline std::vector<double> class_weights(const Dataset& ds, bool balanced) {
  std::vector<double> w(ds.n, 1.0);
  if (!balanced) return w;
  const double pos = static_cast<double>(std::count(ds.y.begin(), ds.y.end(), 1));
  const double neg = static_cast<double>(ds.n) - pos;
  for (std::size_t i = 0; i < ds.n; ++i)
    w[i] = static_cast<double>(ds.n) / (2.0 * (ds.y[i] == 1 ? pos : neg));
  return w;
}

inline std::vector<std::vector<std::size_t>> presort(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> order(ds.d, std::vector<std::size_t>(ds.n));
  for (std::size_t j = 0; j < ds.d; ++j) {
    std::iota(order[j].begin(), order[j].end(), 0);
    const auto& c = ds.cols[j];
    std::stable_sort(order[j].begin(), order[j].end(), [&](std::size_t a, std::size_t b) { return c[a] < c[b]; });
  }
  return order;
}

// Per-leaf sums handed to the leaf-value rule.
struct LeafRows {
  std::vector<std::size_t> rows;  // rows with positive weight
};

struct TreeGrowth {
  RegressionTree tree;
  std::vector<std::size_t> node_of;  // final leaf of every row
};

// Grows one regression tree level by level on targets r with weights w.
// Split gain is S_L^2/W_L + S_R^2/W_R - S^2/W with S = sum w*r and W = sum w;
// ties keep the lowest feature index, then the lowest threshold. Rows with
// zero weight neither vote on splits nor count toward min_samples_leaf.
// `allowed(node, feature)` restricts candidate features per node.
template <class Allowed>
TreeGrowth grow_tree(const Dataset& ds, const std::vector<std::vector<std::size_t>>& order,
                     const std::vector<double>& r, const std::vector<double>& w, int max_depth,
                     int min_samples_leaf, std::vector<double>& gain, Allowed&& allowed) {
  TreeGrowth g;
  g.tree.nodes.push_back({});
  g.node_of.assign(ds.n, 0);

  struct Stats {
    double s = 0.0;
    double w = 0.0;
    std::size_t count = 0;
  };
  std::vector<Stats> totals(1);
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (w[i] > 0.0) {
      totals[0].s += w[i] * r[i];
      totals[0].w += w[i];
      ++totals[0].count;
    }
  }
  std::vector<std::size_t> frontier = {0};
  const std::size_t msl = static_cast<std::size_t>(min_samples_leaf);

  for (int depth = 0; depth < max_depth && !frontier.empty(); ++depth) {
    const std::size_t nn = g.tree.nodes.size();
    std::vector<int> slot(nn, -1);  // frontier position of each node, -1 if not splittable
    for (std::size_t k = 0; k < frontier.size(); ++k) {
      const auto& t = totals[frontier[k]];
      if (t.count >= 2 * msl && t.w > 0.0) slot[frontier[k]] = static_cast<int>(k);
    }
    struct Best {
      double gain = 0.0;
      int feature = -1;
      double threshold = 0.0;
    };
    std::vector<Best> best(frontier.size());
    std::vector<Stats> left(frontier.size());
    std::vector<double> last(frontier.size());
    for (std::size_t f = 0; f < ds.d; ++f) {
      std::fill(left.begin(), left.end(), Stats{});
      const auto& col = ds.cols[f];
      for (std::size_t i : order[f]) {
        if (!(w[i] > 0.0)) continue;
        const int k = slot[g.node_of[i]];
        if (k < 0) continue;
        const auto ks = static_cast<std::size_t>(k);
        if (!allowed(frontier[ks], f)) continue;
        auto& L = left[ks];
        const auto& T = totals[frontier[ks]];
        if (L.count > 0 && col[i] != last[ks] && L.count >= msl && T.count - L.count >= msl) {
          const double sr = T.s - L.s;
          const double wr = T.w - L.w;
          if (L.w > 0.0 && wr > 0.0) {
            const double parent = T.s * T.s / T.w;
            const double gn = L.s * L.s / L.w + sr * sr / wr - parent;
            if (gn > best[ks].gain && gn > 1e-12 * std::max(1.0, std::abs(parent))) {
              double thr = 0.5 * (last[ks] + col[i]);
              if (thr >= col[i]) thr = last[ks];
              best[ks] = {gn, static_cast<int>(f), thr};
            }
          }
        }
        L.s += w[i] * r[i];
        L.w += w[i];
        ++L.count;
        last[ks] = col[i];
      }
    }

    std::vector<std::size_t> next;
    for (std::size_t k = 0; k < frontier.size(); ++k) {
      if (best[k].feature < 0) continue;
      const std::size_t id = frontier[k];
      const int l = static_cast<int>(g.tree.nodes.size());
      g.tree.nodes.push_back({});
      g.tree.nodes.push_back({});
      totals.resize(g.tree.nodes.size());
      auto& node = g.tree.nodes[id];
      node.feature = best[k].feature;
      node.threshold = best[k].threshold;
      node.left = l;
      node.right = l + 1;
      gain[static_cast<std::size_t>(best[k].feature)] += best[k].gain;
      next.push_back(static_cast<std::size_t>(l));
      next.push_back(static_cast<std::size_t>(l + 1));
    }
    for (std::size_t i = 0; i < ds.n; ++i) {
      const auto& node = g.tree.nodes[g.node_of[i]];
      if (node.feature < 0) continue;
      const bool go_left = ds.cols[static_cast<std::size_t>(node.feature)][i] <= node.threshold;
      g.node_of[i] = static_cast<std::size_t>(go_left ? node.left : node.right);
      if (w[i] > 0.0) {
        auto& t = totals[g.node_of[i]];
        t.s += w[i] * r[i];
        t.w += w[i];
        ++t.count;
      }
    }
    frontier = std::move(next);
  }
  return g;
}

inline auto all_features() {
  return [](std::size_t, std::size_t) { return true; };
}

}  // namespace detail

inline double DiagnosticModel::decision_function(std::span<const double> x) const {
  if (x.size() != n_features) throw DimensionMismatch(n_features, x.size());
  switch (kind) {
    case ModelKind::GBC: {
      double z = base_score;
      for (const auto& t : trees) z += config.learning_rate * t.predict(x);
      return z;
    }
    case ModelKind::LogReg: {
      double z = bias;
      for (std::size_t j = 0; j < n_features; ++j) z += weights[j] * (x[j] - mean[j]) / scale[j];
      return z;
    }
    case ModelKind::Dummy: return std::log(prior / (1.0 - prior));
    case ModelKind::RandomForest: {
      double p = 0.0;
      for (const auto& t : trees) p += t.predict(x);
      p = trees.empty() ? prior : p / static_cast<double>(trees.size());
      p = detail::clamp_proba(p);
      return std::log(p / (1.0 - p));
    }
  }
  return 0.0;
}

inline double DiagnosticModel::predict_proba(std::span<const double> x) const {
  if (kind == ModelKind::Dummy) {
    if (x.size() != n_features) throw DimensionMismatch(n_features, x.size());
    return detail::clamp_proba(prior);
  }
  if (kind == ModelKind::RandomForest) {
    if (x.size() != n_features) throw DimensionMismatch(n_features, x.size());
    double p = 0.0;
    for (const auto& t : trees) p += t.predict(x);
    return detail::clamp_proba(trees.empty() ? prior : p / static_cast<double>(trees.size()));
  }
  return detail::clamp_proba(detail::sigmoid(decision_function(x)));
}

namespace detail {

inline DiagnosticModel model_shell(ModelKind kind, const Dataset& ds, const TrainConfig& cfg,
                                   const std::vector<double>& w, std::vector<std::string> names) {
  if (!names.empty() && names.size() != ds.d) throw DimensionMismatch(ds.d, names.size());
  DiagnosticModel m;
  m.kind = kind;
  m.n_features = ds.d;
  m.feature_names = std::move(names);
  m.config = cfg;
  double wp = 0.0;
  double wt = 0.0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    wt += w[i];
    if (ds.y[i] == 1) wp += w[i];
  }
  m.prior = wp / wt;
  return m;
}

// Total weighted log-loss of the rows in one leaf after adding `step` to
// their raw scores.
inline double leaf_loss(const std::vector<std::size_t>& rows, const std::vector<double>& F,
                        const std::vector<double>& w, const std::vector<int>& y, double step) {
  double s = 0.0;
  for (std::size_t i : rows) s += w[i] * logloss_raw(F[i] + step, y[i]);
  return s;
}

}  // namespace detail

// Gradient boosting on binomial log-loss. Each stage fits a tree to the
// residuals y - p; leaf values take one Newton step, halved while the step
// would raise that leaf's training loss, so the weighted training loss never
// increases from one stage to the next.
inline DiagnosticModel train_gbc(const Matrix& X, std::span<const int> y, const TrainConfig& cfg = {},
                                 std::vector<std::string> feature_names = {}) {
  validate_config(cfg);
  const auto ds = detail::check_training_data(X, y);
  const auto cw = detail::class_weights(ds, cfg.balanced_class_weight);
  auto m = detail::model_shell(ModelKind::GBC, ds, cfg, cw, std::move(feature_names));
  m.base_score = std::log(m.prior / (1.0 - m.prior));
  m.gain.assign(ds.d, 0.0);
  const auto order = detail::presort(ds);

  std::vector<double> F(ds.n, m.base_score);
  std::vector<double> r(ds.n);
  std::vector<double> w = cw;
  std::vector<std::size_t> rows(ds.n);
  std::iota(rows.begin(), rows.end(), 0);
  const auto in_bag = static_cast<std::size_t>(std::floor(cfg.subsample * static_cast<double>(ds.n)));
  for (int stage = 0; stage < cfg.n_trees; ++stage) {
    if (cfg.subsample < 1.0) {
      Rng rng(derive_seed(cfg.seed, 0x6762, static_cast<std::uint64_t>(stage)));
      rng.shuffle(std::span<std::size_t>(rows));
      std::fill(w.begin(), w.end(), 0.0);
      for (std::size_t k = 0; k < std::max<std::size_t>(in_bag, 1); ++k) w[rows[k]] = cw[rows[k]];
    }
    for (std::size_t i = 0; i < ds.n; ++i) r[i] = ds.y[i] - detail::sigmoid(F[i]);
    auto grown = detail::grow_tree(ds, order, r, w, cfg.max_depth, cfg.min_samples_leaf, m.gain,
                                   detail::all_features());
    std::vector<std::vector<std::size_t>> members(grown.tree.nodes.size());
    for (std::size_t i = 0; i < ds.n; ++i) {
      if (w[i] > 0.0) members[grown.node_of[i]].push_back(i);
    }
    for (std::size_t id = 0; id < grown.tree.nodes.size(); ++id) {
      auto& node = grown.tree.nodes[id];
      if (node.feature >= 0) continue;
      double num = 0.0;
      double den = 0.0;
      for (std::size_t i : members[id]) {
        const double p = detail::sigmoid(F[i]);
        num += w[i] * r[i];
        den += w[i] * p * (1.0 - p);
      }
      double gamma = den > 1e-150 ? num / den : 0.0;
      const double before = detail::leaf_loss(members[id], F, w, ds.y, 0.0);
      int halvings = 0;
      while (gamma != 0.0 &&
             detail::leaf_loss(members[id], F, w, ds.y, cfg.learning_rate * gamma) > before) {
        gamma = ++halvings > 60 ? 0.0 : gamma * 0.5;
      }
      node.value = gamma;
    }
    for (std::size_t i = 0; i < ds.n; ++i) F[i] += cfg.learning_rate * grown.tree.nodes[grown.node_of[i]].value;
    m.trees.push_back(std::move(grown.tree));
  }
  return m;
}

// Minimizes sum_i w_i*logloss_i + (l2/2)*|weights|^2 over standardized
// features (bias unpenalized) by damped Newton iterations until the gradient's
// max-norm falls below tol.
inline DiagnosticModel train_logreg(const Matrix& X, std::span<const int> y, const TrainConfig& cfg = {},
                                    std::vector<std::string> feature_names = {}) {
  validate_config(cfg);
  const auto ds = detail::check_training_data(X, y);
  const auto cw = detail::class_weights(ds, cfg.balanced_class_weight);
  auto m = detail::model_shell(ModelKind::LogReg, ds, cfg, cw, std::move(feature_names));
  const auto n = static_cast<Eigen::Index>(ds.n);
  const auto d = static_cast<Eigen::Index>(ds.d);
  m.mean.assign(ds.d, 0.0);
  m.scale.assign(ds.d, 1.0);
  Eigen::MatrixXd Z(n, d + 1);
  for (std::size_t j = 0; j < ds.d; ++j) {
    const auto& c = ds.cols[j];
    const double mu = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(ds.n);
    double ss = 0.0;
    for (double v : c) ss += (v - mu) * (v - mu);
    const double sd = std::sqrt(ss / static_cast<double>(ds.n));
    m.mean[j] = mu;
    m.scale[j] = sd > 1e-12 ? sd : 1.0;
    for (std::size_t i = 0; i < ds.n; ++i)
      Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (c[i] - mu) / m.scale[j];
  }
  Z.col(d).setOnes();
  const Eigen::Map<const Eigen::VectorXd> wv(cw.data(), n);
  Eigen::VectorXd yv(n);
  for (Eigen::Index i = 0; i < n; ++i) yv(i) = ds.y[static_cast<std::size_t>(i)];
  Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, cfg.l2_strength);
  reg(d) = 0.0;

  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd z = Z * beta;
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += wv(i) * detail::logloss_raw(z(i), ds.y[static_cast<std::size_t>(i)]);
    return s + 0.5 * beta.cwiseProduct(reg).dot(beta);
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  beta(d) = std::log(m.prior / (1.0 - m.prior));
  double f = objective(beta);
  for (int it = 0; it < cfg.max_iter; ++it) {
    const Eigen::VectorXd z = Z * beta;
    Eigen::VectorXd p(n);
    Eigen::VectorXd h(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = detail::sigmoid(z(i));
      h(i) = wv(i) * p(i) * (1.0 - p(i));
    }
    const Eigen::VectorXd grad = Z.transpose() * (wv.cwiseProduct(p - yv)) + reg.cwiseProduct(beta);
    if (grad.lpNorm<Eigen::Infinity>() < cfg.tol) break;
    Eigen::MatrixXd H = Z.transpose() * h.asDiagonal() * Z;
    H.diagonal() += reg;
    H(d, d) += 1e-10;
    const Eigen::VectorXd step = H.ldlt().solve(grad);
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k < 50; ++k, t *= 0.5) {
      const Eigen::VectorXd cand = beta - t * step;
      const double fc = objective(cand);
      if (fc <= f - 1e-4 * t * grad.dot(step)) {
        beta = cand;
        f = fc;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  m.weights.assign(beta.data(), beta.data() + d);
  m.bias = beta(d);
  return m;
}

inline DiagnosticModel train_dummy(const Matrix& X, std::span<const int> y, const TrainConfig& cfg = {},
                                   std::vector<std::string> feature_names = {}) {
  const auto ds = detail::check_training_data(X, y);
  const auto cw = detail::class_weights(ds, cfg.balanced_class_weight);
  return detail::model_shell(ModelKind::Dummy, ds, cfg, cw, std::move(feature_names));
}

// Bagged regression trees on the 0/1 label, each grown to max_depth on a
// bootstrap sample with max_features candidate features per split.
inline DiagnosticModel train_random_forest(const Matrix& X, std::span<const int> y, const TrainConfig& cfg = {},
                                           std::vector<std::string> feature_names = {}) {
  validate_config(cfg);
  const auto ds = detail::check_training_data(X, y);
  const auto cw = detail::class_weights(ds, cfg.balanced_class_weight);
  auto m = detail::model_shell(ModelKind::RandomForest, ds, cfg, cw, std::move(feature_names));
  m.gain.assign(ds.d, 0.0);
  const auto order = detail::presort(ds);
  const std::size_t k = cfg.max_features > 0
                            ? std::min<std::size_t>(static_cast<std::size_t>(cfg.max_features), ds.d)
                            : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(ds.d))));
  std::vector<double> r(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) r[i] = ds.y[i];
  std::vector<double> w(ds.n);
  for (int t = 0; t < cfg.n_trees; ++t) {
    Rng rng(derive_seed(cfg.seed, 0x7266, static_cast<std::uint64_t>(t)));
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t s = 0; s < ds.n; ++s) {
      const std::size_t i = rng.uniform_index(ds.n);
      w[i] += cw[i];
    }
    // Candidate features per node, drawn lazily in node order.
    std::vector<std::vector<bool>> subset;
    std::vector<std::size_t> perm(ds.d);
    auto allowed = [&](std::size_t node, std::size_t f) {
      while (subset.size() <= node) {
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(std::span<std::size_t>(perm));
        std::vector<bool> mask(ds.d, false);
        for (std::size_t j = 0; j < k; ++j) mask[perm[j]] = true;
        subset.push_back(std::move(mask));
      }
      return static_cast<bool>(subset[node][f]);
    };
    // Touch nodes in id order before each level so draws do not depend on the
    // row scan order.
    auto grown = detail::grow_tree(ds, order, r, w, cfg.max_depth, cfg.min_samples_leaf, m.gain,
                                   [&](std::size_t node, std::size_t f) {
                                     for (std::size_t q = subset.size(); q <= node; ++q) allowed(q, 0);
                                     return allowed(node, f);
                                   });
    std::vector<double> num(grown.tree.nodes.size(), 0.0);
    std::vector<double> den(grown.tree.nodes.size(), 0.0);
    for (std::size_t i = 0; i < ds.n; ++i) {
      num[grown.node_of[i]] += w[i] * r[i];
      den[grown.node_of[i]] += w[i];
    }
    for (std::size_t id = 0; id < grown.tree.nodes.size(); ++id) {
      if (grown.tree.nodes[id].feature < 0) grown.tree.nodes[id].value = den[id] > 0.0 ? num[id] / den[id] : m.prior;
    }
    m.trees.push_back(std::move(grown.tree));
  }
  return m;
}

inline DiagnosticModel train_model(ModelKind kind, const Matrix& X, std::span<const int> y,
                                   const TrainConfig& cfg = {}, std::vector<std::string> names = {}) {
  switch (kind) {
    case ModelKind::GBC: return train_gbc(X, y, cfg, std::move(names));
    case ModelKind::LogReg: return train_logreg(X, y, cfg, std::move(names));
    case ModelKind::Dummy: return train_dummy(X, y, cfg, std::move(names));
    case ModelKind::RandomForest: return train_random_forest(X, y, cfg, std::move(names));
  }
  throw ConfigError("unknown model kind");
}

// Split gain per feature normalized to sum 1 (all zeros if no split was made),
// paired with the schema names when known.
inline std::vector<std::pair<std::string, double>> feature_importance(const DiagnosticModel& m) {
  if (m.kind != ModelKind::GBC && m.kind != ModelKind::RandomForest)
    throw NotApplicable("feature importance needs a tree ensemble");
  const double total = std::accumulate(m.gain.begin(), m.gain.end(), 0.0);
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t j = 0; j < m.n_features; ++j) {
    const std::string name = m.feature_names.empty() ? "f" + std::to_string(j) : m.feature_names[j];
    out.emplace_back(name, total > 0.0 ? m.gain[j] / total : 0.0);
  }
  return out;
}

// Mean binomial log-loss of the raw GBC score after each stage, starting with
// the base score alone (n_trees + 1 entries).
inline std::vector<double> staged_logloss(const DiagnosticModel& m, const Matrix& X, std::span<const int> y) {
  if (m.kind != ModelKind::GBC) throw NotApplicable("staged loss needs a boosted model");
  std::vector<double> F(X.size(), m.base_score);
  std::vector<double> out;
  auto mean_loss = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) s += detail::logloss_raw(F[i], y[i]);
    return s / static_cast<double>(X.size());
  };
  out.push_back(mean_loss());
  for (const auto& t : m.trees) {
    for (std::size_t i = 0; i < X.size(); ++i) F[i] += m.config.learning_rate * t.predict(X[i]);
    out.push_back(mean_loss());
  }
  return out;
}

// ---- serialization ("crv-model/1") ----

inline constexpr std::string_view kModelFormat = "crv-model/1";

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"n_trees", c.n_trees},
          {"learning_rate", c.learning_rate},
          {"max_depth", c.max_depth},
          {"min_samples_leaf", c.min_samples_leaf},
          {"subsample", c.subsample},
          {"seed", c.seed},
          {"balanced_class_weight", c.balanced_class_weight},
          {"l2_strength", c.l2_strength},
          {"max_iter", c.max_iter},
          {"tol", c.tol},
          {"max_features", c.max_features}};
}

// Missing keys keep their defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.n_trees = j.value("n_trees", c.n_trees);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.min_samples_leaf = j.value("min_samples_leaf", c.min_samples_leaf);
  c.subsample = j.value("subsample", c.subsample);
  c.seed = j.value("seed", c.seed);
  c.balanced_class_weight = j.value("balanced_class_weight", c.balanced_class_weight);
  c.l2_strength = j.value("l2_strength", c.l2_strength);
  c.max_iter = j.value("max_iter", c.max_iter);
  c.tol = j.value("tol", c.tol);
  c.max_features = j.value("max_features", c.max_features);
  return c;
}

inline nlohmann::json model_to_json(const DiagnosticModel& m) {
  nlohmann::json j = {{"format", std::string(kModelFormat)},
                      {"kind", std::string(to_string(m.kind))},
                      {"n_features", m.n_features},
                      {"feature_names", m.feature_names},
                      {"config", to_json(m.config)},
                      {"prior", m.prior},
                      {"metadata", m.metadata}};
  if (m.kind == ModelKind::GBC || m.kind == ModelKind::RandomForest) {
    j["base_score"] = m.base_score;
    j["gain"] = m.gain;
    auto trees = nlohmann::json::array();
    for (const auto& t : m.trees) {
      auto nodes = nlohmann::json::array();
      for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
      trees.push_back(std::move(nodes));
    }
    j["trees"] = std::move(trees);
  }
  if (m.kind == ModelKind::LogReg) {
    j["weights"] = m.weights;
    j["bias"] = m.bias;
    j["mean"] = m.mean;
    j["scale"] = m.scale;
  }
  return j;
}

inline DiagnosticModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", std::string()) != kModelFormat) throw SchemaError("not a crv-model/1 document");
    DiagnosticModel m;
    m.kind = parse_model_kind(j.at("kind").get<std::string>());
    m.n_features = j.at("n_features").get<std::size_t>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.config = train_config_from_json(j.at("config"));
    m.prior = j.at("prior").get<double>();
    m.metadata = j.value("metadata", nlohmann::json::object());
    if (m.kind == ModelKind::GBC || m.kind == ModelKind::RandomForest) {
      m.base_score = j.at("base_score").get<double>();
      m.gain = j.at("gain").get<std::vector<double>>();
      for (const auto& jt : j.at("trees")) {
        RegressionTree t;
        for (const auto& jn : jt) {
          t.nodes.push_back({jn.at(0).get<int>(), jn.at(1).get<double>(), jn.at(2).get<int>(), jn.at(3).get<int>(),
                             jn.at(4).get<double>()});
        }
        const int size = static_cast<int>(t.nodes.size());
        if (size == 0) throw SchemaError("empty tree");
        for (const auto& n : t.nodes) {
          if (n.feature >= static_cast<int>(m.n_features)) throw SchemaError("tree feature index out of range");
          if (n.feature >= 0 && (n.left <= 0 || n.left >= size || n.right <= 0 || n.right >= size))
            throw SchemaError("tree child index out of range");
        }
        m.trees.push_back(std::move(t));
      }
    }
    if (m.kind == ModelKind::LogReg) {
      m.weights = j.at("weights").get<std::vector<double>>();
      m.bias = j.at("bias").get<double>();
      m.mean = j.at("mean").get<std::vector<double>>();
      m.scale = j.at("scale").get<std::vector<double>>();
      if (m.weights.size() != m.n_features || m.mean.size() != m.n_features || m.scale.size() != m.n_features)
        throw SchemaError("logistic weights do not match n_features");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(e.what());
  }
}

}  // namespace crv
