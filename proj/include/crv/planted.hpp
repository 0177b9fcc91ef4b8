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

// Synthetic attribution-graph corpora with a planted error signature.
//
// Each graph gets a label drawn from the prior, then a handful of target
// statistics drawn from class-conditional normals: incorrect steps shift the
// mean by effect * sd. A layered DAG is then built to match those targets
// approximately. Logits, token logprobs and hidden states are drawn from a
// separate stream that never sees the label, so logit baselines carry no
// signal by construction.
//
// Spec file:
//   {"label_prior": 0.05, "num_layers": 16, "n_tokens": 6,
//    "dims": {"feature_count":    {"mean": 40,   "sd": 8,    "effect": 2},
//             "density":          {"mean": 0.06, "sd": 0.01, "effect": 2},
//             "layer_skew":       {"mean": 0,    "sd": 0.3,  "effect": 0},
//             "activation_scale": {"mean": 1,    "sd": 0.2,  "effect": 0},
//             "error_count":      {"mean": 4,    "sd": 1,    "effect": 0}}}
//
// density is the edge count over N(N-1) for all N nodes of the generated
// graph. Forward-only edges cap it at 0.5.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crv/error.hpp"
#include "crv/graph.hpp"
#include "crv/parallel.hpp"
#include "crv/random.hpp"
#include "crv/signal.hpp"

namespace crv {

struct DimSpec {
  double mean = 0.0;
  double sd = 0.0;
  double effect = 0.0;  // incorrect mean = mean + effect * sd

  friend bool operator==(const DimSpec&, const DimSpec&) = default;
};

struct SignatureSpec {
  double label_prior = 0.05;
  int num_layers = 16;
  int n_tokens = 6;
  int top_k = 20;       // stored top logits per signal
  int hidden_dim = 8;   // length of hidden_mean
  DimSpec feature_count{40.0, 8.0, 0.0};
  DimSpec density{0.06, 0.01, 0.0};
  DimSpec layer_skew{0.0, 0.3, 0.0};
  DimSpec activation_scale{1.0, 0.2, 0.0};
  DimSpec error_count{4.0, 1.0, 0.0};

  friend bool operator==(const SignatureSpec&, const SignatureSpec&) = default;
};

namespace detail {

inline DimSpec dim_from_json(const nlohmann::json& j, const DimSpec& fallback) {
  DimSpec d = fallback;
  d.mean = j.value("mean", d.mean);
  d.sd = j.value("sd", d.sd);
  d.effect = j.value("effect", d.effect);
  return d;
}

inline nlohmann::json dim_to_json(const DimSpec& d) {
  return {{"mean", d.mean}, {"sd", d.sd}, {"effect", d.effect}};
}

inline double shifted_mean(const DimSpec& d, int label) { return d.mean + (label == 1 ? d.effect * d.sd : 0.0); }

}  // namespace detail

inline SignatureSpec signature_spec_from_json(const nlohmann::json& j) {
  try {
    SignatureSpec s;
    s.label_prior = j.value("label_prior", s.label_prior);
    s.num_layers = j.value("num_layers", s.num_layers);
    s.n_tokens = j.value("n_tokens", s.n_tokens);
    s.top_k = j.value("top_k", s.top_k);
    s.hidden_dim = j.value("hidden_dim", s.hidden_dim);
    const auto dims = j.value("dims", nlohmann::json::object());
    for (const auto& [key, _] : dims.items()) {
      if (key != "feature_count" && key != "density" && key != "layer_skew" && key != "activation_scale" &&
          key != "error_count")
        throw InfeasibleSpec("unknown signature dimension '" + key + "'");
    }
    auto dim = [&](const char* key, const DimSpec& fb) {
      return dims.contains(key) ? detail::dim_from_json(dims[key], fb) : fb;
    };
    s.feature_count = dim("feature_count", s.feature_count);
    s.density = dim("density", s.density);
    s.layer_skew = dim("layer_skew", s.layer_skew);
    s.activation_scale = dim("activation_scale", s.activation_scale);
    s.error_count = dim("error_count", s.error_count);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InfeasibleSpec(std::string("malformed signature spec: ") + e.what());
  }
}

inline nlohmann::json to_json(const SignatureSpec& s) {
  return {{"label_prior", s.label_prior},
          {"num_layers", s.num_layers},
          {"n_tokens", s.n_tokens},
          {"top_k", s.top_k},
          {"hidden_dim", s.hidden_dim},
          {"dims",
           {{"feature_count", detail::dim_to_json(s.feature_count)},
            {"density", detail::dim_to_json(s.density)},
            {"layer_skew", detail::dim_to_json(s.layer_skew)},
            {"activation_scale", detail::dim_to_json(s.activation_scale)},
            {"error_count", detail::dim_to_json(s.error_count)}}}};
}

// Throws InfeasibleSpec when the targets cannot be met by any graph.
inline void check_spec(const SignatureSpec& s) {
  auto fail = [](const std::string& why) { throw InfeasibleSpec(why); };
  if (!(s.label_prior > 0.0 && s.label_prior < 1.0)) fail("label_prior must lie in (0, 1)");
  if (s.num_layers < 1) fail("num_layers must be >= 1");
  if (s.n_tokens < 1) fail("n_tokens must be >= 1");
  if (s.top_k < 1) fail("top_k must be >= 1");
  if (s.hidden_dim < 1) fail("hidden_dim must be >= 1");
  const std::pair<const char*, const DimSpec*> dims[] = {{"feature_count", &s.feature_count},
                                                         {"density", &s.density},
                                                         {"layer_skew", &s.layer_skew},
                                                         {"activation_scale", &s.activation_scale},
                                                         {"error_count", &s.error_count}};
  for (const auto& [name, d] : dims) {
    if (!std::isfinite(d->mean) || !std::isfinite(d->sd) || !std::isfinite(d->effect))
      fail(std::string(name) + ": values must be finite");
    if (d->sd < 0.0) fail(std::string(name) + ": sd must be >= 0");
  }
  for (int label : {0, 1}) {
    const double density = detail::shifted_mean(s.density, label);
    if (!(density > 0.0 && density <= 0.5))
      fail("density target " + std::to_string(density) + " outside (0, 0.5]; forward-only DAG edges cap density at 0.5");
    if (detail::shifted_mean(s.feature_count, label) < 1.0) fail("feature_count target must be >= 1");
    if (detail::shifted_mean(s.feature_count, label) > 4096.0) fail("feature_count target exceeds 4096 feature nodes");
    if (detail::shifted_mean(s.error_count, label) < 0.0) fail("error_count target must be >= 0");
    if (detail::shifted_mean(s.activation_scale, label) <= 0.0) fail("activation_scale target must be > 0");
  }
}

struct PlantedItem {
  AttributionGraph graph;
  StepSignal signal;
  int label = 0;  // 1 = incorrect
};

// One graph from its own seed.
inline PlantedItem gen_planted_item(const SignatureSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x706c));
  PlantedItem item;
  item.label = rng.bernoulli(spec.label_prior) ? 1 : 0;
  auto draw = [&](const DimSpec& d) { return rng.normal(detail::shifted_mean(d, item.label), d.sd); };
  const int features = std::clamp(static_cast<int>(std::lround(draw(spec.feature_count))), 1, 4096);
  const double density = std::clamp(draw(spec.density), 1e-4, 0.5);
  const double skew = draw(spec.layer_skew);
  const double act_scale = std::max(1e-3, draw(spec.activation_scale));
  const int errors = std::max(0, static_cast<int>(std::lround(draw(spec.error_count))));

  // Label-blind stream for logits and everything the baselines read.
  Rng blind(derive_seed(seed, 0x626c));
  const int n_logits = static_cast<int>(blind.uniform_int(1, 4));
  std::vector<double> probs(static_cast<std::size_t>(n_logits));
  for (auto& p : probs) p = -std::log(1.0 - blind.uniform01());
  const double mass = blind.uniform(0.5, 0.9);
  const double z = std::accumulate(probs.begin(), probs.end(), 0.0);
  for (auto& p : probs) p = p / z * mass;

  AttributionGraph& g = item.graph;
  g.meta.model_name = "planted";
  g.meta.num_layers = spec.num_layers;
  g.meta.total_active_features = features;

  for (int t = 0; t < spec.n_tokens; ++t) {
    Node n;
    n.id = "t" + std::to_string(t);
    n.kind = NodeKind::Token;
    n.position = t;
    n.token = "tok" + std::to_string(t);
    g.nodes.push_back(std::move(n));
  }
  // Layer drawn as floor(L * u^exp(skew)): skew > 0 pushes mass toward layer 0.
  const double exponent = std::exp(skew);
  auto draw_layer = [&] {
    const double u = rng.uniform01();
    return std::min(spec.num_layers - 1, static_cast<int>(spec.num_layers * std::pow(u, exponent)));
  };
  std::vector<Node> middle;
  for (int f = 0; f < features; ++f) {
    Node n;
    n.id = "f" + std::to_string(f);
    n.kind = NodeKind::Feature;
    n.layer = draw_layer();
    n.position = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.n_tokens)));
    n.feature_id = static_cast<std::int64_t>(rng.uniform_index(1u << 17));
    n.activation = act_scale * (0.1 + std::abs(rng.normal()));
    middle.push_back(std::move(n));
  }
  for (int e = 0; e < errors; ++e) {
    Node n;
    n.id = "e" + std::to_string(e);
    n.kind = NodeKind::Error;
    n.layer = draw_layer();
    n.position = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.n_tokens)));
    middle.push_back(std::move(n));
  }
  std::stable_sort(middle.begin(), middle.end(), [](const Node& a, const Node& b) { return *a.layer < *b.layer; });
  for (auto& n : middle) g.nodes.push_back(std::move(n));
  for (int l = 0; l < n_logits; ++l) {
    Node n;
    n.id = "l" + std::to_string(l);
    n.kind = NodeKind::Logit;
    n.token = "out" + std::to_string(l);
    n.prob = probs[static_cast<std::size_t>(l)];
    g.nodes.push_back(std::move(n));
  }

  // Edges run forward in node order. Tokens have no in-edges and logits no
  // out-edges.
  const std::size_t T = static_cast<std::size_t>(spec.n_tokens);
  const std::size_t N = g.nodes.size();
  const std::size_t first_logit = N - static_cast<std::size_t>(n_logits);
  auto allowed = [&](std::size_t i, std::size_t j) { return i < j && j >= T && i < first_logit; };
  std::vector<std::vector<bool>> used(N, std::vector<bool>(N, false));
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  auto add = [&](std::size_t i, std::size_t j) {
    if (!used[i][j]) {
      used[i][j] = true;
      chosen.emplace_back(i, j);
    }
  };
  // Backbone: every middle node has a predecessor and a successor, and every
  // logit has a predecessor.
  for (std::size_t v = T; v < first_logit; ++v) add(rng.uniform_index(v), v);
  for (std::size_t v = T; v < first_logit; ++v) add(v, v + 1 + rng.uniform_index(N - v - 1));
  for (std::size_t v = first_logit; v < N; ++v) add(rng.uniform_index(first_logit), v);
  std::size_t capacity = 0;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = i + 1; j < N; ++j) capacity += allowed(i, j) ? 1 : 0;
  }
  const auto target = std::min<std::size_t>(
      capacity, static_cast<std::size_t>(std::lround(density * static_cast<double>(N) * static_cast<double>(N - 1))));
  if (chosen.size() < target) {
    std::vector<std::pair<std::size_t, std::size_t>> pool;
    pool.reserve(capacity);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = i + 1; j < N; ++j) {
        if (allowed(i, j) && !used[i][j]) pool.emplace_back(i, j);
      }
    }
    rng.shuffle(std::span<std::pair<std::size_t, std::size_t>>(pool));
    for (std::size_t k = 0; chosen.size() < target && k < pool.size(); ++k) add(pool[k].first, pool[k].second);
  }
  std::sort(chosen.begin(), chosen.end());
  for (const auto& [i, j] : chosen) {
    const double magnitude = blind.uniform(0.2, 1.0);
    g.edges.push_back({g.nodes[i].id, g.nodes[j].id, blind.bernoulli(0.8) ? magnitude : -magnitude});
  }

  // Signals.
  std::vector<double> raw(static_cast<std::size_t>(spec.top_k));
  for (auto& r : raw) r = blind.normal(0.0, 2.0);
  std::sort(raw.begin(), raw.end(), std::greater<>());
  double hi = raw.front();
  double s = 0.0;
  for (double r : raw) s += std::exp(r - hi);
  const double lse = hi + std::log(s);
  for (std::size_t k = 0; k < raw.size(); ++k)
    item.signal.top_logits.push_back({"v" + std::to_string(k), raw[k] - lse});
  const auto n_tokens = static_cast<int>(blind.uniform_int(3, 12));
  for (int k = 0; k < n_tokens; ++k) item.signal.token_logprobs.push_back(std::log(blind.uniform(0.05, 1.0)));
  std::vector<double> hidden(static_cast<std::size_t>(spec.hidden_dim));
  for (auto& h : hidden) h = blind.normal();
  item.signal.hidden_mean = std::move(hidden);
  return item;
}

// n graphs, item i seeded from (seed, i). Identical for any worker count.
inline std::vector<PlantedItem> gen_corpus(const SignatureSpec& spec, std::size_t n, std::uint64_t seed,
                                           std::size_t workers = 1) {
  check_spec(spec);
  std::vector<PlantedItem> out(n);
  parallel_for(n, workers, [&](std::size_t i) { out[i] = gen_planted_item(spec, derive_seed(seed, i)); });
  return out;
}

}  // namespace crv
