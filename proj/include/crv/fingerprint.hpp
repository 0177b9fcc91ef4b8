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

// Fixed-length structural fingerprint of a pruned attribution graph.
//
// Weighted path lengths use distance 1/|w|; zero-weight edges carry no path.
// Betweenness is directed and unnormalized. The average shortest path is
// taken over reachable ordered pairs of the largest weakly connected
// component, on the undirected projection. A missing token-to-logit path is
// encoded as -1.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crv/error.hpp"
#include "crv/graph.hpp"

namespace crv {

inline constexpr double kNoPath = -1.0;

// Position of each named entry; layer_hist occupies L slots starting at
// kLayerHistStart, and everything after shifts by L.
namespace fp {
inline constexpr std::size_t kTotalActiveFeatures = 0;
inline constexpr std::size_t kPrunedFeatureCount = 1;
inline constexpr std::size_t kPrunedErrorCount = 2;
inline constexpr std::size_t kTopLogitProb = 3;
inline constexpr std::size_t kLogitEntropy = 4;
inline constexpr std::size_t kMeanNodeInfluence = 5;
inline constexpr std::size_t kErrorTotalInfluence = 6;
inline constexpr std::size_t kErrorMeanInfluence = 7;
inline constexpr std::size_t kActMean = 8;
inline constexpr std::size_t kActMax = 9;
inline constexpr std::size_t kActStd = 10;
inline constexpr std::size_t kLayerHistStart = 11;
// Offsets past the histogram.
inline constexpr std::size_t kEdgeCount = 0;
inline constexpr std::size_t kEdgeWeightSum = 1;
inline constexpr std::size_t kEdgeWeightMean = 2;
inline constexpr std::size_t kEdgeWeightStd = 3;
inline constexpr std::size_t kGraphDensity = 4;
inline constexpr std::size_t kDegreeCentralityMean = 5;
inline constexpr std::size_t kDegreeCentralityMax = 6;
inline constexpr std::size_t kBetweennessMean = 7;
inline constexpr std::size_t kBetweennessMax = 8;
inline constexpr std::size_t kWeaklyConnectedComponents = 9;
inline constexpr std::size_t kAvgShortestPath = 10;
inline constexpr std::size_t kInputToLogitPath = 11;
inline constexpr std::size_t kTailCount = 12;
}  // namespace fp

inline std::vector<std::string> fingerprint_schema(int num_layers) {
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  std::vector<std::string> names = {
      "total_active_features", "pruned_feature_count", "pruned_error_count", "top_logit_prob",
      "logit_entropy",         "mean_node_influence",  "error_total_influence",
      "error_mean_influence",  "act_mean",             "act_max",
      "act_std"};
  for (int l = 0; l < num_layers; ++l) names.push_back("layer_hist_" + std::to_string(l));
  for (const char* n : {"edge_count", "edge_weight_sum", "edge_weight_mean", "edge_weight_std",
                        "graph_density", "degree_centrality_mean", "degree_centrality_max",
                        "betweenness_mean", "betweenness_max", "weakly_connected_components",
                        "avg_shortest_path_largest_component", "input_to_logit_shortest_path"}) {
    names.emplace_back(n);
  }
  return names;
}

struct Fingerprint {
  std::vector<std::string> names;
  std::vector<double> values;
  bool degenerate = false;

  double at(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return values[i];
    }
    throw SchemaError("no fingerprint entry named '" + std::string(name) + "'");
  }
};

// Directed weighted adjacency on local indices 0..n-1.
struct WeightedDigraph {
  struct Arc {
    std::size_t to;
    double length;
  };
  std::size_t n = 0;
  std::vector<std::vector<Arc>> out;

  explicit WeightedDigraph(std::size_t nodes = 0) : n(nodes), out(nodes) {}
  void add(std::size_t u, std::size_t v, double weight) {
    if (weight != 0.0) out[u].push_back({v, 1.0 / std::abs(weight)});
  }
};

namespace detail {

inline bool path_tie(double a, double b) {
  return std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b));
}

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Single-source Dijkstra; `from` may hold several sources at distance 0.
inline std::vector<double> dijkstra(const WeightedDigraph& g, const std::vector<std::size_t>& from) {
  std::vector<double> dist(g.n, kInf);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  for (std::size_t s : from) {
    dist[s] = 0.0;
    pq.emplace(0.0, s);
  }
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (const auto& a : g.out[u]) {
      const double nd = d + a.length;
      if (nd < dist[a.to]) {
        dist[a.to] = nd;
        pq.emplace(nd, a.to);
      }
    }
  }
  return dist;
}

}  // namespace detail

// Brandes' algorithm with Dijkstra. Path lengths within a relative 1e-12 of
// each other count as equally short.
inline std::vector<double> betweenness_centrality(const WeightedDigraph& g) {
  std::vector<double> cb(g.n, 0.0);
  std::vector<double> dist(g.n);
  std::vector<double> sigma(g.n);
  std::vector<double> delta(g.n);
  std::vector<bool> done(g.n);
  std::vector<std::vector<std::size_t>> pred(g.n);
  std::vector<std::size_t> stack;
  using Item = std::pair<double, std::size_t>;
  for (std::size_t s = 0; s < g.n; ++s) {
    std::fill(dist.begin(), dist.end(), detail::kInf);
    std::fill(sigma.begin(), sigma.end(), 0.0);
    std::fill(delta.begin(), delta.end(), 0.0);
    std::fill(done.begin(), done.end(), false);
    for (auto& p : pred) p.clear();
    stack.clear();
    dist[s] = 0.0;
    sigma[s] = 1.0;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    pq.emplace(0.0, s);
    while (!pq.empty()) {
      const auto [d, u] = pq.top();
      pq.pop();
      if (done[u] || d > dist[u]) continue;
      done[u] = true;
      stack.push_back(u);
      for (const auto& a : g.out[u]) {
        const std::size_t v = a.to;
        if (done[v]) continue;
        const double nd = d + a.length;
        if (dist[v] == detail::kInf || (nd < dist[v] && !detail::path_tie(nd, dist[v]))) {
          dist[v] = nd;
          sigma[v] = sigma[u];
          pred[v].assign(1, u);
          pq.emplace(nd, v);
        } else if (detail::path_tie(nd, dist[v])) {
          sigma[v] += sigma[u];
          pred[v].push_back(u);
        }
      }
    }
    for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
      const std::size_t w = *it;
      for (std::size_t v : pred[w]) delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
      if (w != s) cb[w] += delta[w];
    }
  }
  return cb;
}

namespace detail {

struct Components {
  std::vector<std::size_t> label;  // component id per node
  std::size_t count = 0;
};

inline Components weak_components(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& [u, v] : edges) {
    const auto a = find(u);
    const auto b = find(v);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  Components c;
  c.label.assign(n, 0);
  std::vector<std::size_t> id(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find(i);
    if (id[r] == n) id[r] = c.count++;
    c.label[i] = id[r];
  }
  return c;
}

// Mean distance over reachable ordered pairs of `members` in an undirected
// weighted graph; 0 when no pair is reachable.
inline double average_path(const WeightedDigraph& undirected, const std::vector<std::size_t>& members) {
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t s : members) {
    const auto dist = dijkstra(undirected, {s});
    for (std::size_t t : members) {
      if (t != s && dist[t] != kInf) {
        sum += dist[t];
        ++pairs;
      }
    }
  }
  return pairs ? sum / static_cast<double>(pairs) : 0.0;
}

}  // namespace detail

inline Fingerprint extract_fingerprint(const PrunedGraph& pruned) {
  const AttributionGraph& base = *pruned.base;
  const int L = base.meta.num_layers;
  Fingerprint fp;
  fp.names = fingerprint_schema(L);
  fp.values.assign(fp.names.size(), 0.0);
  auto& x = fp.values;
  const std::size_t tail = fp::kLayerHistStart + static_cast<std::size_t>(L);

  const auto& kept = pruned.kept_nodes;
  const std::size_t n = kept.size();
  const bool only_logits = std::all_of(kept.begin(), kept.end(), [&](std::size_t i) {
    return base.nodes[i].kind == NodeKind::Logit;
  });
  if (only_logits) {
    fp.degenerate = true;
    x[tail + fp::kAvgShortestPath] = kNoPath;
    x[tail + fp::kInputToLogitPath] = kNoPath;
    return fp;
  }

  int total_features = 0;
  for (const auto& node : base.nodes) total_features += node.kind == NodeKind::Feature ? 1 : 0;
  x[fp::kTotalActiveFeatures] = base.meta.total_active_features.value_or(total_features);

  // Node statistics.
  std::vector<double> probs;
  std::vector<double> acts;
  std::vector<std::size_t> layer_counts(static_cast<std::size_t>(L), 0);
  double influence_sum = 0.0;
  double error_influence = 0.0;
  std::size_t errors = 0;
  for (std::size_t i : kept) {
    const Node& node = base.nodes[i];
    influence_sum += pruned.influence[i];
    switch (node.kind) {
      case NodeKind::Logit: probs.push_back(*node.prob); break;
      case NodeKind::Feature:
        acts.push_back(*node.activation);
        ++layer_counts[static_cast<std::size_t>(*node.layer)];
        break;
      case NodeKind::Error:
        ++errors;
        error_influence += pruned.influence[i];
        break;
      case NodeKind::Token: break;
    }
  }
  x[fp::kPrunedFeatureCount] = static_cast<double>(acts.size());
  x[fp::kPrunedErrorCount] = static_cast<double>(errors);
  if (!probs.empty()) {
    x[fp::kTopLogitProb] = *std::max_element(probs.begin(), probs.end());
    const double z = std::accumulate(probs.begin(), probs.end(), 0.0);
    if (z > 0.0) {
      double h = 0.0;
      for (double p : probs) {
        if (p > 0.0) h -= (p / z) * std::log(p / z);
      }
      x[fp::kLogitEntropy] = std::max(0.0, h);
    }
  }
  x[fp::kMeanNodeInfluence] = influence_sum / static_cast<double>(n);
  x[fp::kErrorTotalInfluence] = error_influence;
  x[fp::kErrorMeanInfluence] = errors ? error_influence / static_cast<double>(errors) : 0.0;
  if (!acts.empty()) {
    const double k = static_cast<double>(acts.size());
    const double mean = std::accumulate(acts.begin(), acts.end(), 0.0) / k;
    double ss = 0.0;
    for (double a : acts) ss += (a - mean) * (a - mean);
    x[fp::kActMean] = mean;
    x[fp::kActMax] = *std::max_element(acts.begin(), acts.end());
    x[fp::kActStd] = std::sqrt(ss / k);
    for (std::size_t l = 0; l < layer_counts.size(); ++l)
      x[fp::kLayerHistStart + l] = static_cast<double>(layer_counts[l]) / k;
  }

  // Local topology over kept nodes.
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < n; ++i) by_id.emplace(base.nodes[kept[i]].id, i);

  WeightedDigraph directed(n);
  WeightedDigraph undirected(n);
  std::vector<std::pair<std::size_t, std::size_t>> arcs;
  std::vector<std::size_t> degree(n, 0);
  std::vector<double> weights;
  for (std::size_t e : pruned.kept_edges) {
    const Edge& edge = base.edges[e];
    const std::size_t u = by_id.at(edge.src);
    const std::size_t v = by_id.at(edge.dst);
    arcs.emplace_back(u, v);
    ++degree[u];
    ++degree[v];
    weights.push_back(edge.weight);
    directed.add(u, v, edge.weight);
    undirected.add(u, v, edge.weight);
    undirected.add(v, u, edge.weight);
  }
  const double m = static_cast<double>(weights.size());
  x[tail + fp::kEdgeCount] = m;
  if (!weights.empty()) {
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    const double mean = sum / m;
    double ss = 0.0;
    for (double w : weights) ss += (w - mean) * (w - mean);
    x[tail + fp::kEdgeWeightSum] = sum;
    x[tail + fp::kEdgeWeightMean] = mean;
    x[tail + fp::kEdgeWeightStd] = std::sqrt(ss / m);
  }
  if (n >= 2) {
    const double nn = static_cast<double>(n);
    x[tail + fp::kGraphDensity] = m / (nn * (nn - 1.0));
    double dsum = 0.0;
    double dmax = 0.0;
    for (std::size_t d : degree) {
      const double c = static_cast<double>(d) / (nn - 1.0);
      dsum += c;
      dmax = std::max(dmax, c);
    }
    x[tail + fp::kDegreeCentralityMean] = dsum / nn;
    x[tail + fp::kDegreeCentralityMax] = dmax;
  }
  const auto bc = betweenness_centrality(directed);
  x[tail + fp::kBetweennessMean] = std::accumulate(bc.begin(), bc.end(), 0.0) / static_cast<double>(n);
  x[tail + fp::kBetweennessMax] = *std::max_element(bc.begin(), bc.end());

  const auto comps = detail::weak_components(n, arcs);
  x[tail + fp::kWeaklyConnectedComponents] = static_cast<double>(comps.count);
  std::vector<std::vector<std::size_t>> members(comps.count);
  std::vector<std::size_t> comp_edges(comps.count, 0);
  for (std::size_t i = 0; i < n; ++i) members[comps.label[i]].push_back(i);
  for (const auto& [u, v] : arcs) ++comp_edges[comps.label[u]];
  // Largest by size, then by edge count, then by the shorter average path, so
  // the choice never depends on node labels.
  std::size_t best = 0;
  double best_avg = detail::average_path(undirected, members[0]);
  for (std::size_t c = 1; c < comps.count; ++c) {
    if (members[c].size() < members[best].size()) continue;
    if (members[c].size() == members[best].size() && comp_edges[c] < comp_edges[best]) continue;
    const double avg = detail::average_path(undirected, members[c]);
    if (members[c].size() == members[best].size() && comp_edges[c] == comp_edges[best] && avg >= best_avg)
      continue;
    best = c;
    best_avg = avg;
  }
  x[tail + fp::kAvgShortestPath] = best_avg;

  std::vector<std::size_t> tokens;
  for (std::size_t i = 0; i < n; ++i) {
    if (base.nodes[kept[i]].kind == NodeKind::Token) tokens.push_back(i);
  }
  double to_logit = detail::kInf;
  if (!tokens.empty()) {
    const auto dist = detail::dijkstra(directed, tokens);
    for (std::size_t i = 0; i < n; ++i) {
      if (base.nodes[kept[i]].kind == NodeKind::Logit) to_logit = std::min(to_logit, dist[i]);
    }
  }
  x[tail + fp::kInputToLogitPath] = to_logit == detail::kInf ? kNoPath : to_logit;
  return fp;
}

}  // namespace crv
