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

// Attribution graphs: token, transcoder-feature, error (residual pass-through)
// and logit nodes joined by signed, weighted edges. This header holds the
// in-memory model, its validation, influence propagation and threshold
// pruning. Wire I/O lives in graph_io.hpp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crv/error.hpp"

namespace crv {

enum class NodeKind { Token, Feature, Error, Logit };
enum class AttributionPosition { Before, After };

inline std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Token: return "token";
    case NodeKind::Feature: return "feature";
    case NodeKind::Error: return "error";
    case NodeKind::Logit: return "logit";
  }
  return "?";
}

inline std::string_view to_string(AttributionPosition p) {
  return p == AttributionPosition::Before ? "before" : "after";
}

struct Node {
  std::string id;
  NodeKind kind = NodeKind::Feature;
  std::optional<int> layer;
  std::optional<int> position;
  std::optional<std::int64_t> feature_id;
  std::optional<double> activation;  // Feature only
  std::optional<std::string> token;
  std::optional<double> prob;  // Logit only

  friend bool operator==(const Node&, const Node&) = default;
};

struct Edge {
  std::string src;
  std::string dst;
  double weight = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// Attribution hyperparameters travel with each graph so that consumers can
// check the producer honoured them.
struct GraphMeta {
  std::string model_name;
  int num_layers = 1;
  AttributionPosition attribution_position = AttributionPosition::After;
  int max_feature_nodes = 4096;
  int max_logit_nodes = 10;
  double logit_cum_prob = 0.95;
  // Active transcoder features before any node cap; defaults to the number of
  // feature nodes in the graph when absent.
  std::optional<int> total_active_features;

  friend bool operator==(const GraphMeta&, const GraphMeta&) = default;
};

struct AttributionGraph {
  GraphMeta meta;
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  friend bool operator==(const AttributionGraph&, const AttributionGraph&) = default;
};

// Adjacency by node position. Edge lists hold edge positions.
struct GraphIndex {
  std::unordered_map<std::string, std::size_t> by_id;
  std::vector<std::size_t> edge_src;
  std::vector<std::size_t> edge_dst;
  std::vector<std::vector<std::size_t>> out_edges;
  std::vector<std::vector<std::size_t>> in_edges;
};

namespace detail {

[[noreturn]] inline void schema_fail(const std::string& what) { throw SchemaError(what); }

}  // namespace detail

// Builds the adjacency index; throws SchemaError on duplicate ids or dangling
// edge endpoints.
inline GraphIndex index_graph(const AttributionGraph& g) {
  GraphIndex idx;
  idx.by_id.reserve(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (g.nodes[i].id.empty()) detail::schema_fail("node " + std::to_string(i) + " has an empty id");
    if (!idx.by_id.emplace(g.nodes[i].id, i).second)
      detail::schema_fail("duplicate node id '" + g.nodes[i].id + "'");
  }
  idx.out_edges.resize(g.nodes.size());
  idx.in_edges.resize(g.nodes.size());
  idx.edge_src.reserve(g.edges.size());
  idx.edge_dst.reserve(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto s = idx.by_id.find(g.edges[e].src);
    const auto d = idx.by_id.find(g.edges[e].dst);
    if (s == idx.by_id.end()) detail::schema_fail("edge " + std::to_string(e) + " references missing source '" + g.edges[e].src + "'");
    if (d == idx.by_id.end()) detail::schema_fail("edge " + std::to_string(e) + " references missing destination '" + g.edges[e].dst + "'");
    idx.edge_src.push_back(s->second);
    idx.edge_dst.push_back(d->second);
    idx.out_edges[s->second].push_back(e);
    idx.in_edges[d->second].push_back(e);
  }
  return idx;
}

// Kahn's algorithm. Returns an empty optional if the graph has a cycle.
inline std::optional<std::vector<std::size_t>> topological_order(const AttributionGraph& g,
                                                                 const GraphIndex& idx) {
  std::vector<std::size_t> indegree(g.nodes.size());
  for (std::size_t v = 0; v < g.nodes.size(); ++v) indegree[v] = idx.in_edges[v].size();
  std::vector<std::size_t> order;
  order.reserve(g.nodes.size());
  std::vector<std::size_t> ready;
  for (std::size_t v = 0; v < g.nodes.size(); ++v) {
    if (indegree[v] == 0) ready.push_back(v);
  }
  std::reverse(ready.begin(), ready.end());
  while (!ready.empty()) {
    const std::size_t u = ready.back();
    ready.pop_back();
    order.push_back(u);
    for (std::size_t e : idx.out_edges[u]) {
      if (--indegree[idx.edge_dst[e]] == 0) ready.push_back(idx.edge_dst[e]);
    }
  }
  if (order.size() != g.nodes.size()) return std::nullopt;
  return order;
}

// Checks every structural invariant; throws SchemaError naming the first one
// violated.
inline void validate(const AttributionGraph& g) {
  using detail::schema_fail;
  const auto& m = g.meta;
  if (m.num_layers < 1) schema_fail("meta.num_layers must be >= 1");
  if (m.max_feature_nodes < 1) schema_fail("meta.max_feature_nodes must be >= 1");
  if (m.max_logit_nodes < 1) schema_fail("meta.max_logit_nodes must be >= 1");
  if (!(m.logit_cum_prob > 0.0 && m.logit_cum_prob <= 1.0))
    schema_fail("meta.logit_cum_prob must lie in (0, 1]");

  const GraphIndex idx = index_graph(g);

  int features = 0;
  int logits = 0;
  double prob_sum = 0.0;
  double prob_min = 1.0;
  for (const auto& n : g.nodes) {
    const std::string who = "node '" + n.id + "'";
    if (n.activation.has_value() != (n.kind == NodeKind::Feature))
      schema_fail(who + ": activation must be present exactly on feature nodes");
    if (n.prob.has_value() != (n.kind == NodeKind::Logit))
      schema_fail(who + ": prob must be present exactly on logit nodes");
    switch (n.kind) {
      case NodeKind::Feature:
        ++features;
        if (!n.feature_id) schema_fail(who + ": feature node without feature_id");
        if (!std::isfinite(*n.activation)) schema_fail(who + ": non-finite activation");
        [[fallthrough]];
      case NodeKind::Error:
        if (!n.layer) schema_fail(who + ": missing layer");
        if (*n.layer < 0 || *n.layer >= m.num_layers)
          schema_fail(who + ": layer " + std::to_string(*n.layer) + " outside [0, num_layers)");
        break;
      case NodeKind::Logit:
        ++logits;
        if (!(*n.prob >= 0.0 && *n.prob <= 1.0)) schema_fail(who + ": prob outside [0, 1]");
        prob_sum += *n.prob;
        prob_min = std::min(prob_min, *n.prob);
        break;
      case NodeKind::Token:
        break;
    }
  }
  if (prob_sum > 1.0 + 1e-9) schema_fail("logit probabilities sum to more than 1");
  if (features > m.max_feature_nodes)
    schema_fail("feature node count " + std::to_string(features) + " exceeds max_feature_nodes " +
                std::to_string(m.max_feature_nodes));
  if (logits > m.max_logit_nodes)
    schema_fail("logit node count " + std::to_string(logits) + " exceeds max_logit_nodes " +
                std::to_string(m.max_logit_nodes));
  // Logits are chosen most-probable first until logit_cum_prob is covered, so
  // every logit but the least probable must still fall short of it.
  if (logits > 1 && prob_sum - prob_min >= m.logit_cum_prob + 1e-12)
    schema_fail("logit set exceeds the cumulative probability threshold");

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto& edge = g.edges[e];
    pairs.emplace_back(idx.edge_src[e], idx.edge_dst[e]);
    const std::string which = "edge " + edge.src + "->" + edge.dst;
    if (idx.edge_src[e] == idx.edge_dst[e]) schema_fail(which + ": self-loop");
    if (!std::isfinite(edge.weight)) schema_fail(which + ": non-finite weight");
    if (g.nodes[idx.edge_src[e]].kind == NodeKind::Logit) schema_fail(which + ": logit nodes must be sinks");
    if (g.nodes[idx.edge_dst[e]].kind == NodeKind::Token) schema_fail(which + ": token nodes must be sources");
  }
  std::sort(pairs.begin(), pairs.end());
  const auto dup = std::adjacent_find(pairs.begin(), pairs.end());
  if (dup != pairs.end())
    schema_fail("duplicate edge " + g.nodes[dup->first].id + "->" + g.nodes[dup->second].id);
  if (!topological_order(g, idx)) schema_fail("graph contains a cycle");
}

// Share of v's incoming absolute weight carried by edge e.
inline std::vector<double> edge_normalization(const AttributionGraph& g, const GraphIndex& idx) {
  std::vector<double> incoming(g.nodes.size(), 0.0);
  for (std::size_t e = 0; e < g.edges.size(); ++e) incoming[idx.edge_dst[e]] += std::abs(g.edges[e].weight);
  std::vector<double> share(g.edges.size(), 0.0);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const double total = incoming[idx.edge_dst[e]];
    share[e] = total > 0.0 ? std::abs(g.edges[e].weight) / total : 0.0;
  }
  return share;
}

// Influence of each node on the output logits, aligned with g.nodes.
//
// Logit nodes are seeded with their probability. Every other node receives
//   influence(u) = sum over edges u->v of share(u,v) * influence(v)
// where share(u,v) = |w(u,v)| / sum_x |w(x,v)|, accumulated in one reverse
// topological pass. Non-logit sinks get 0. The result is non-negative and
// unchanged by a global positive rescaling of the edge weights.
inline std::vector<double> compute_influence(const AttributionGraph& g) {
  const GraphIndex idx = index_graph(g);
  const auto order = topological_order(g, idx);
  if (!order) throw SchemaError("graph contains a cycle");
  const auto share = edge_normalization(g, idx);
  std::vector<double> influence(g.nodes.size(), 0.0);
  for (auto it = order->rbegin(); it != order->rend(); ++it) {
    const std::size_t u = *it;
    if (g.nodes[u].kind == NodeKind::Logit) {
      influence[u] = *g.nodes[u].prob;
      continue;
    }
    double acc = 0.0;
    for (std::size_t e : idx.out_edges[u]) acc += share[e] * influence[idx.edge_dst[e]];
    influence[u] = acc;
  }
  return influence;
}

inline std::unordered_map<std::string, double> influence_by_id(const AttributionGraph& g,
                                                               const std::vector<double>& influence) {
  std::unordered_map<std::string, double> out;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) out.emplace(g.nodes[i].id, influence.at(i));
  return out;
}

struct PrunedGraph {
  std::shared_ptr<const AttributionGraph> base;
  std::vector<std::size_t> kept_nodes;  // ascending node positions in base
  std::vector<std::size_t> kept_edges;  // ascending edge positions in base
  std::vector<double> influence;        // aligned with base->nodes
  double node_tau = 0.8;
  double edge_tau = 0.98;

  // The kept part of base as a standalone graph (meta copied unchanged).
  AttributionGraph subgraph() const {
    AttributionGraph g;
    g.meta = base->meta;
    if (!g.meta.total_active_features) {
      int features = 0;
      for (const auto& n : base->nodes) features += n.kind == NodeKind::Feature ? 1 : 0;
      g.meta.total_active_features = features;
    }
    g.nodes.reserve(kept_nodes.size());
    for (std::size_t i : kept_nodes) g.nodes.push_back(base->nodes[i]);
    g.edges.reserve(kept_edges.size());
    for (std::size_t e : kept_edges) g.edges.push_back(base->edges[e]);
    return g;
  }
};

inline constexpr double kDefaultNodeTau = 0.80;
inline constexpr double kDefaultEdgeTau = 0.98;

// Keeps the smallest set of non-logit nodes, taken in descending influence
// (ties by ascending id), whose influence reaches node_tau of the non-logit
// total, plus every logit node. Edges between kept nodes are then scored by
// share(u,v) * influence(v) and the smallest descending-score prefix reaching
// edge_tau of the surviving score mass is kept (ties by src, then dst id).
// With zero total influence only the logit nodes survive.
inline PrunedGraph prune(std::shared_ptr<const AttributionGraph> g, const std::vector<double>& influence,
                         double node_tau = kDefaultNodeTau, double edge_tau = kDefaultEdgeTau) {
  if (!(node_tau > 0.0 && node_tau <= 1.0)) throw ConfigError("node_tau must lie in (0, 1]");
  if (!(edge_tau > 0.0 && edge_tau <= 1.0)) throw ConfigError("edge_tau must lie in (0, 1]");
  if (influence.size() != g->nodes.size()) throw DimensionMismatch(g->nodes.size(), influence.size());

  const GraphIndex idx = index_graph(*g);
  PrunedGraph out;
  out.influence = influence;
  out.node_tau = node_tau;
  out.edge_tau = edge_tau;

  std::vector<std::size_t> candidates;
  std::vector<bool> keep(g->nodes.size(), false);
  for (std::size_t i = 0; i < g->nodes.size(); ++i) {
    if (g->nodes[i].kind == NodeKind::Logit) keep[i] = true;
    else candidates.push_back(i);
  }
  std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    if (influence[a] != influence[b]) return influence[a] > influence[b];
    return g->nodes[a].id < g->nodes[b].id;
  });
  // Summed in the same order as the prefix so that the full prefix equals the
  // total exactly.
  double total = 0.0;
  for (std::size_t i : candidates) total += influence[i];
  if (total > 0.0) {
    const double target = node_tau * total;
    double cumulative = 0.0;
    for (std::size_t i : candidates) {
      keep[i] = true;
      cumulative += influence[i];
      if (cumulative >= target) break;
    }
  }
  for (std::size_t i = 0; i < g->nodes.size(); ++i) {
    if (keep[i]) out.kept_nodes.push_back(i);
  }

  const auto share = edge_normalization(*g, idx);
  std::vector<std::size_t> edges;
  std::vector<double> score(g->edges.size(), 0.0);
  for (std::size_t e = 0; e < g->edges.size(); ++e) {
    if (keep[idx.edge_src[e]] && keep[idx.edge_dst[e]]) {
      edges.push_back(e);
      score[e] = share[e] * influence[idx.edge_dst[e]];
    }
  }
  std::sort(edges.begin(), edges.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    if (g->edges[a].src != g->edges[b].src) return g->edges[a].src < g->edges[b].src;
    return g->edges[a].dst < g->edges[b].dst;
  });
  double edge_total = 0.0;
  for (std::size_t e : edges) edge_total += score[e];
  if (edge_total > 0.0) {
    const double target = edge_tau * edge_total;
    double cumulative = 0.0;
    for (std::size_t e : edges) {
      out.kept_edges.push_back(e);
      cumulative += score[e];
      if (cumulative >= target) break;
    }
  }
  std::sort(out.kept_edges.begin(), out.kept_edges.end());
  out.base = std::move(g);
  return out;
}

inline PrunedGraph prune(const AttributionGraph& g, const std::vector<double>& influence,
                         double node_tau = kDefaultNodeTau, double edge_tau = kDefaultEdgeTau) {
  return prune(std::make_shared<const AttributionGraph>(g), influence, node_tau, edge_tau);
}

// compute_influence followed by prune.
inline PrunedGraph prune_graph(std::shared_ptr<const AttributionGraph> g,
                               double node_tau = kDefaultNodeTau, double edge_tau = kDefaultEdgeTau) {
  const auto influence = compute_influence(*g);
  return prune(std::move(g), influence, node_tau, edge_tau);
}

}  // namespace crv
