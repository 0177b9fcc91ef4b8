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

// Logit-based and hidden-state baselines computed from StepSignal records.
//
// The raw functions return the textbook quantity. baseline_score orients each
// one so that a higher value means "more likely incorrect", the convention of
// the metrics module.
//
// Distribution scores use the stored top logits of the step's last token,
// renormalized. Perplexity uses every generated token of the step.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crv/classify.hpp"
#include "crv/error.hpp"
#include "crv/metrics.hpp"
#include "crv/signal.hpp"

namespace crv {

namespace detail {

inline std::vector<double> top_logit_values(const StepSignal& s) {
  if (s.top_logits.empty()) throw MissingSignal("step signal has no top logits");
  std::vector<double> v;
  v.reserve(s.top_logits.size());
  for (const auto& t : s.top_logits) v.push_back(t.logprob);
  return v;
}

inline double logsumexp(std::span<const double> v, double temperature = 1.0) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) hi = std::max(hi, x / temperature);
  double s = 0.0;
  for (double x : v) s += std::exp(x / temperature - hi);
  return hi + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> v, double temperature = 1.0) {
  const double z = logsumexp(v, temperature);
  std::vector<double> p;
  p.reserve(v.size());
  for (double x : v) p.push_back(std::exp(x / temperature - z));
  return p;
}

}  // namespace detail

// Largest renormalized probability among the stored logits.
inline double maxprob(std::span<const double> logits, double temperature = 1.0) {
  if (logits.empty()) throw MissingSignal("no logits");
  const auto p = detail::softmax(logits, temperature);
  return *std::max_element(p.begin(), p.end());
}

inline double entropy(std::span<const double> logits) {
  if (logits.empty()) throw MissingSignal("no logits");
  double h = 0.0;
  for (double p : detail::softmax(logits)) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(0.0, h);
}

inline double perplexity(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw MissingSignal("no token logprobs");
  double s = 0.0;
  for (double lp : token_logprobs) s += lp;
  return std::exp(-s / static_cast<double>(token_logprobs.size()));
}

// E = -T * logsumexp(logits / T).
inline double energy(std::span<const double> logits, double temperature = 1.0) {
  if (logits.empty()) throw MissingSignal("no logits");
  return -temperature * detail::logsumexp(logits, temperature);
}

inline double maxprob(const StepSignal& s) { return maxprob(detail::top_logit_values(s)); }
inline double entropy(const StepSignal& s) { return entropy(detail::top_logit_values(s)); }
inline double perplexity(const StepSignal& s) { return perplexity(s.token_logprobs); }
inline double energy(const StepSignal& s, double temperature = 1.0) {
  return energy(detail::top_logit_values(s), temperature);
}

enum class Baseline { MaxProb, Perplexity, Entropy, Energy, TempScaling };

inline std::string_view to_string(Baseline b) {
  switch (b) {
    case Baseline::MaxProb: return "MaxProb";
    case Baseline::Perplexity: return "PPL";
    case Baseline::Entropy: return "Entropy";
    case Baseline::Energy: return "Energy";
    case Baseline::TempScaling: return "Temp. Scaling";
  }
  return "?";
}

// How a raw value was turned into an incorrectness score; goes into reports.
inline std::string_view orientation(Baseline b) {
  switch (b) {
    case Baseline::MaxProb: return "-maxprob";
    case Baseline::Perplexity: return "+ppl";
    case Baseline::Entropy: return "+entropy";
    case Baseline::Energy: return "+energy";
    case Baseline::TempScaling: return "-maxprob(T)";
  }
  return "?";
}

inline constexpr Baseline kLogitBaselines[] = {Baseline::MaxProb, Baseline::Perplexity, Baseline::Entropy,
                                               Baseline::Energy, Baseline::TempScaling};

// Higher = more likely incorrect. `temperature` applies to Energy and
// TempScaling.
inline double baseline_score(Baseline b, const StepSignal& s, double temperature = 1.0) {
  switch (b) {
    case Baseline::MaxProb: return -maxprob(s);
    case Baseline::Perplexity: return perplexity(s);
    case Baseline::Entropy: return entropy(s);
    case Baseline::Energy: return energy(s, temperature);
    case Baseline::TempScaling: return -maxprob(detail::top_logit_values(s), temperature);
  }
  return 0.0;
}

// Negative log-likelihood of correctness (label 0) under the confidence
// max softmax(logits / T), averaged over rows.
inline double temperature_nll(std::span<const std::vector<double>> logits, std::span<const int> labels,
                              double temperature) {
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double c = std::clamp(maxprob(logits[i], temperature), 1e-15, 1.0 - 1e-15);
    s -= labels[i] == 0 ? std::log(c) : std::log1p(-c);
  }
  return s / static_cast<double>(logits.size());
}

// Golden-section search for T minimizing temperature_nll over
// log T in [-3, 3], to a bracket width of 1e-4 in log T.
inline double temp_scale_fit(std::span<const std::vector<double>> logits, std::span<const int> labels) {
  if (logits.size() != labels.size()) throw DimensionMismatch(logits.size(), labels.size());
  bool pos = false;
  bool neg = false;
  for (int y : labels) (y == 1 ? pos : neg) = true;
  if (!pos || !neg) throw SingleClassData();
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = -3.0;
  double b = 3.0;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  auto f = [&](double lt) { return temperature_nll(logits, labels, std::exp(lt)); };
  double fc = f(c);
  double fd = f(d);
  while (b - a > 1e-4) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  return std::exp(0.5 * (a + b));
}

inline double temp_scale_fit(std::span<const StepSignal> signals, std::span<const int> labels) {
  std::vector<std::vector<double>> logits;
  logits.reserve(signals.size());
  for (const auto& s : signals) logits.push_back(detail::top_logit_values(s));
  return temp_scale_fit(logits, labels);
}

// Logistic-regression probe on step-averaged hidden states.
inline DiagnosticModel lr_probe_train(const Matrix& hidden_means, std::span<const int> labels, int layer,
                                      const TrainConfig& cfg = {}) {
  if (hidden_means.empty() || hidden_means.front().empty()) throw MissingSignal("hidden_mean missing");
  auto m = train_logreg(hidden_means, labels, cfg);
  m.metadata["probe"] = "lr";
  m.metadata["layer"] = layer;
  return m;
}

inline DiagnosticModel lr_probe_train(std::span<const StepSignal> signals, std::span<const int> labels, int layer,
                                      const TrainConfig& cfg = {}) {
  Matrix X;
  X.reserve(signals.size());
  for (const auto& s : signals) {
    if (!s.hidden_mean) throw MissingSignal("hidden_mean missing");
    X.push_back(*s.hidden_mean);
  }
  return lr_probe_train(X, labels, layer, cfg);
}

struct ProbeSweep {
  int best_layer = -1;
  std::vector<double> auroc_by_layer;  // validation AUROC per candidate layer
  DiagnosticModel model;               // probe trained at best_layer
};

// Trains one probe per layer on `train` and picks the layer with the highest
// validation AUROC (lowest layer on ties).
inline ProbeSweep lr_probe_sweep(const std::vector<Matrix>& train_by_layer, std::span<const int> train_labels,
                                 const std::vector<Matrix>& val_by_layer, std::span<const int> val_labels,
                                 const TrainConfig& cfg = {}) {
  if (train_by_layer.size() != val_by_layer.size()) throw DimensionMismatch(train_by_layer.size(), val_by_layer.size());
  if (train_by_layer.empty()) throw MissingSignal("no layers to sweep");
  ProbeSweep out;
  double best = -1.0;
  for (std::size_t l = 0; l < train_by_layer.size(); ++l) {
    auto m = lr_probe_train(train_by_layer[l], train_labels, static_cast<int>(l), cfg);
    const auto scores = m.predict_proba(val_by_layer[l]);
    const double a = auroc(scores, val_labels);
    out.auroc_by_layer.push_back(a);
    if (a > best) {
      best = a;
      out.best_layer = static_cast<int>(l);
      out.model = std::move(m);
    }
  }
  return out;
}

}  // namespace crv
