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

// Detection metrics with label 1 (incorrect) as the positive class and higher
// scores meaning "more likely positive", plus PCA and two-sample statistics.

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crv/error.hpp"

namespace crv {

namespace detail {

struct ClassCounts {
  std::uint64_t pos = 0;
  std::uint64_t neg = 0;
};

inline ClassCounts check_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionMismatch(labels.size(), scores.size());
  ClassCounts c;
  for (int y : labels) {
    if (y == 1) ++c.pos;
    else if (y == 0) ++c.neg;
    else throw ConfigError("labels must be 0 or 1");
  }
  if (c.pos == 0 || c.neg == 0) throw SingleClassData();
  return c;
}

// Indices sorted by descending score.
inline std::vector<std::size_t> order_descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

// Cumulative (tp, fp) at each distinct threshold, highest first.
struct SweepPoint {
  std::uint64_t tp;
  std::uint64_t fp;
};

inline std::vector<SweepPoint> sweep(std::span<const double> scores, std::span<const int> labels) {
  const auto idx = order_descending(scores);
  std::vector<SweepPoint> out;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (labels[idx[k]] == 1) ++tp;
    else ++fp;
    if (k + 1 == idx.size() || scores[idx[k + 1]] != scores[idx[k]]) out.push_back({tp, fp});
  }
  return out;
}

}  // namespace detail

// P(score of a random positive > score of a random negative), ties counting
// one half. Computed from exact integer win and tie counts.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  const auto c = detail::check_binary(scores, labels);
  const auto idx = detail::order_descending(scores);
  // Walk from the lowest score upward, one group of equal scores at a time.
  std::uint64_t neg_below = 0;
  std::uint64_t twice_wins = 0;  // 2*wins + ties
  std::size_t k = idx.size();
  while (k > 0) {
    std::size_t start = k - 1;
    while (start > 0 && scores[idx[start - 1]] == scores[idx[k - 1]]) --start;
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
    for (std::size_t i = start; i < k; ++i) (labels[idx[i]] == 1 ? pos : neg)++;
    twice_wins += 2 * pos * neg_below + pos * neg;
    neg_below += neg;
    k = start;
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

// Average precision: sum over descending distinct thresholds of
// precision * (recall increase).
inline double aupr(std::span<const double> scores, std::span<const int> labels) {
  const auto c = detail::check_binary(scores, labels);
  double ap = 0.0;
  std::uint64_t prev_tp = 0;
  for (const auto& p : detail::sweep(scores, labels)) {
    if (p.tp != prev_tp) {
      const double recall_gain = static_cast<double>(p.tp - prev_tp) / static_cast<double>(c.pos);
      ap += recall_gain * static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fp);
      prev_tp = p.tp;
    }
  }
  return ap;
}

// Lowest false-positive rate among observed-score thresholds (predict
// positive when score >= t) whose true-positive rate is at least 0.95.
inline double fpr_at_95(std::span<const double> scores, std::span<const int> labels) {
  const auto c = detail::check_binary(scores, labels);
  for (const auto& p : detail::sweep(scores, labels)) {
    // fp only grows along the sweep, so the first qualifying threshold wins.
    if (100 * p.tp >= 95 * c.pos) return static_cast<double>(p.fp) / static_cast<double>(c.neg);
  }
  return 1.0;
}

struct EvalResult {
  std::string method;
  std::string dataset;
  double auroc = 0.0;
  double aupr = 0.0;
  double fpr_at_95 = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

inline EvalResult evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                                  std::string method = {}, std::string dataset = {}) {
  const auto c = detail::check_binary(scores, labels);
  EvalResult r;
  r.method = std::move(method);
  r.dataset = std::move(dataset);
  r.auroc = auroc(scores, labels);
  r.aupr = aupr(scores, labels);
  r.fpr_at_95 = fpr_at_95(scores, labels);
  r.n_pos = c.pos;
  r.n_neg = c.neg;
  return r;
}

struct PcaResult {
  std::vector<std::vector<double>> coords;       // one row per sample, k columns
  std::vector<double> explained_variance_ratio;  // k entries
  std::vector<std::vector<double>> components;   // k loading vectors
  std::vector<double> mean;
  std::vector<double> scale;
};

// PCA on column-standardized data. Columns with zero variance are centred
// only. Each component's largest-magnitude loading is made positive.
inline PcaResult pca_project(const std::vector<std::vector<double>>& X, std::size_t k = 2) {
  const std::size_t n = X.size();
  if (n < k || n == 0) throw DegenerateData("PCA needs at least k rows");
  const std::size_t d = X.front().size();
  if (k > d) throw DegenerateData("PCA needs at least k columns");
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (X[i].size() != d) throw DimensionMismatch(d, X[i].size());
    for (std::size_t j = 0; j < d; ++j) Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = X[i][j];
  }
  PcaResult r;
  const Eigen::RowVectorXd mu = Z.colwise().mean();
  Z.rowwise() -= mu;
  Eigen::RowVectorXd sd = (Z.array().square().colwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) {
    if (sd(j) <= 1e-300) sd(j) = 1.0;
  }
  Z.array().rowwise() /= sd.array();
  const Eigen::MatrixXd cov = (Z.transpose() * Z) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw DegenerateData("eigendecomposition failed");
  const Eigen::VectorXd values = eig.eigenvalues().cwiseMax(0.0);
  const double total = values.sum();
  if (!(total > 0.0)) throw DegenerateData("no variance in any direction");

  Eigen::MatrixXd W(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  const auto D = static_cast<Eigen::Index>(d);
  for (std::size_t c = 0; c < k; ++c) {
    // Eigen sorts eigenvalues ascending.
    const Eigen::Index col = D - 1 - static_cast<Eigen::Index>(c);
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    W.col(static_cast<Eigen::Index>(c)) = v;
    r.explained_variance_ratio.push_back(values(col) / total);
    r.components.emplace_back(v.data(), v.data() + v.size());
  }
  const Eigen::MatrixXd P = Z * W;
  r.coords.assign(n, std::vector<double>(k));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c)
      r.coords[i][c] = P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
  }
  r.mean.assign(mu.data(), mu.data() + mu.size());
  r.scale.assign(sd.data(), sd.data() + sd.size());
  return r;
}

struct SeparationStats {
  double t_statistic = 0.0;
  double p_value = 1.0;
  double cohens_d = 0.0;  // positive when the incorrect group is higher
};

// Welch's two-sided t-test and pooled-SD Cohen's d.
inline SeparationStats feature_separation_stats(std::span<const double> correct, std::span<const double> incorrect) {
  if (correct.size() < 2 || incorrect.size() < 2) throw DegenerateData("each group needs at least 2 samples");
  auto moments = [](std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  const auto [m0, v0] = moments(correct);
  const auto [m1, v1] = moments(incorrect);
  if (v0 == 0.0 && v1 == 0.0) throw DegenerateData("both groups have zero variance");
  const double n0 = static_cast<double>(correct.size());
  const double n1 = static_cast<double>(incorrect.size());
  const double a = v0 / n0;
  const double b = v1 / n1;
  SeparationStats s;
  s.t_statistic = (m1 - m0) / std::sqrt(a + b);
  const double df = (a + b) * (a + b) / (a * a / (n0 - 1.0) + b * b / (n1 - 1.0));
  const boost::math::students_t dist(df);
  s.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(s.t_statistic))));
  const double pooled = std::sqrt(((n0 - 1.0) * v0 + (n1 - 1.0) * v1) / (n0 + n1 - 2.0));
  s.cohens_d = (m1 - m0) / pooled;
  return s;
}

}  // namespace crv
