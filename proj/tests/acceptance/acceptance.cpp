// Copyright 2026 The CRV Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Seeds are fixed ahead of time.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "crv/crv.hpp"
#include "../graph_gen.hpp"
#include "../oracles.hpp"
#include "../trace_gen.hpp"

namespace {

using crv::Matrix;

std::size_t workers() { return std::max(1u, std::thread::hardware_concurrency()); }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

int failures = 0;

void run(const std::string& name, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << "exception: " << e.what() << "; ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0 && secs >= budget_s) {
    o.pass = false;
    o.detail << "over time budget of " << budget_s << " s; ";
  }
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  [" << std::fixed << std::setprecision(2) << secs
            << " s]  " << o.detail.str() << std::endl;
  if (!o.pass) ++failures;
}

// ---------------------------------------------------------------------------
// Expression semantics

void expression_semantics(Outcome& o) {
  using crv::ExprKind;
  auto eval = [](const std::string& s, ExprKind k) { return crv::evaluate(crv::parse(s, k)).to_string(); };
  o.require(eval("(7*((5+9)+7))", ExprKind::Arithmetic) == "147", "147");
  o.require(eval("((((-3)+(-6))*(9*6))+(-4))", ExprKind::Arithmetic) == "-490", "-490");
  o.require(eval("(-(5+(4*9)))", ExprKind::Arithmetic) == "-41", "-41");
  o.require(eval("(((True or True) and (True and True)) or (True and False))", ExprKind::Boolean) == "True",
            "Boolean example");
  int mismatches = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto kind = s % 2 ? ExprKind::Boolean : ExprKind::Arithmetic;
    const auto e = crv::gen_expression(kind, 1 + static_cast<int>((s / 2) % 7), crv::derive_seed(0xacce, s));
    const auto want = oracle::evaluate(crv::render(e));
    if (!want || crv::evaluate(e).to_string() != *want) ++mismatches;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " random mismatches");
  o.detail << "4 quoted values, 10000 random expressions, " << mismatches << " mismatches";
}

// ---------------------------------------------------------------------------
// Labeling protocol

void labeling_protocol(Outcome& o) {
  const auto j = crv::read_json(std::string(CRV_FIXTURE_DIR) + "/a4_trace.json");
  const auto out = crv::label_trace(crv::trace_from_json(j), crv::LabelMode::Intersection);
  bool step2_incorrect = false;
  for (const auto& r : out.records) {
    if (r.step_index == 2) step2_incorrect = r.final_label == crv::FinalLabel::Incorrect;
    o.require(r.step_index <= 2, "fixture emitted a step after the first error");
  }
  o.require(step2_incorrect, "fixture step 2 not labeled Incorrect");
  std::vector<int> dropped;
  for (const auto& a : out.audit) {
    if (a["reason"] == "after first incorrect step") dropped.push_back(a["step_index"].get<int>());
  }
  for (int k = 3; k <= 7; ++k) {
    o.require(std::count(dropped.begin(), dropped.end(), k) == 1, "fixture step " + std::to_string(k) + " not dropped");
  }
  int mismatches = 0;
  std::size_t emitted = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto g = testgen::make_trace(crv::derive_seed(0x1abe1, seed));
    const auto r = crv::label_trace(crv::trace_from_json(g.trace), crv::LabelMode::Intersection);
    std::vector<std::pair<int, char>> got;
    for (const auto& rec : r.records)
      got.emplace_back(rec.step_index, rec.final_label == crv::FinalLabel::Correct ? 'C' : 'I');
    emitted += got.size();
    if (got != g.expected) ++mismatches;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " generated traces disagree with the hand rule");
  o.detail << "fixture ok, 1000 traces (" << emitted << " labels), " << mismatches << " mismatches";
}

// ---------------------------------------------------------------------------
// Graph math

// Influence from its recursive definition, memoized per node id.
std::map<std::string, double> influence_oracle(const crv::AttributionGraph& g) {
  std::map<std::string, std::vector<const crv::Edge*>> out_edges;
  std::map<std::string, double> in_abs;
  std::map<std::string, const crv::Node*> nodes;
  for (const auto& n : g.nodes) nodes[n.id] = &n;
  for (const auto& e : g.edges) {
    out_edges[e.src].push_back(&e);
    in_abs[e.dst] += std::abs(e.weight);
  }
  std::map<std::string, double> memo;
  std::function<double(const std::string&)> infl = [&](const std::string& id) -> double {
    if (auto it = memo.find(id); it != memo.end()) return it->second;
    double v = 0.0;
    if (nodes.at(id)->kind == crv::NodeKind::Logit) {
      v = nodes.at(id)->prob.value_or(0.0);
    } else {
      for (const auto* e : out_edges[id]) {
        const double denom = in_abs[e->dst];
        if (denom > 0.0) v += std::abs(e->weight) / denom * infl(e->dst);
      }
    }
    return memo[id] = v;
  };
  for (const auto& n : g.nodes) infl(n.id);
  return memo;
}

bool close(double a, double b, double rel = 1e-9) { return std::abs(a - b) <= rel * std::max(1.0, std::abs(b)); }

void graph_math(Outcome& o) {
  const double taus[] = {0.5, 0.7, 0.8, 0.9, 0.95, 1.0};
  std::size_t total_nodes = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    crv::Rng rng(crv::derive_seed(0x9a4f, s));
    const int n = 5 + static_cast<int>(rng.uniform_index(46));
    const double density = rng.uniform(0.05, 0.5);
    auto g = std::make_shared<crv::AttributionGraph>(testgen::random_dag(crv::derive_seed(0x9a50, s), n, density));
    crv::validate(*g);
    total_nodes += g->nodes.size();
    const auto infl = crv::compute_influence(*g);
    const auto want = influence_oracle(*g);
    std::map<std::string, double> in_abs;
    for (const auto& e : g->edges) in_abs[e.dst] += std::abs(e.weight);
    double source_mass = 0.0;
    double logit_mass = 0.0;
    for (std::size_t i = 0; i < g->nodes.size(); ++i) {
      const auto& node = g->nodes[i];
      o.require(close(infl[i], want.at(node.id)), "influence differs from recursion oracle");
      o.require(infl[i] >= 0.0, "negative influence");
      if (in_abs[node.id] == 0.0) source_mass += infl[i];
      if (node.kind == crv::NodeKind::Logit) logit_mass += node.prob.value_or(0.0);
    }
    o.require(close(source_mass, logit_mass), "conservation");

    auto scaled = *g;
    const double c = s % 2 ? -3.7 : 0.013;
    for (auto& e : scaled.edges) e.weight *= c;
    const auto infl_scaled = crv::compute_influence(scaled);
    for (std::size_t i = 0; i < infl.size(); ++i) o.require(close(infl_scaled[i], infl[i], 1e-12), "scale invariance");

    const std::shared_ptr<const crv::AttributionGraph> base = g;
    std::vector<std::size_t> prev_nodes;
    for (double tau : taus) {
      const auto p = crv::prune(base, infl, tau, crv::kDefaultEdgeTau);
      double kept = 0.0;
      double total = 0.0;
      for (std::size_t i = 0; i < g->nodes.size(); ++i) {
        if (g->nodes[i].kind == crv::NodeKind::Logit) continue;
        total += infl[i];
        if (std::binary_search(p.kept_nodes.begin(), p.kept_nodes.end(), i)) kept += infl[i];
      }
      o.require(kept >= tau * total * (1.0 - 1e-12), "retained node mass below tau");
      for (std::size_t i = 0; i < g->nodes.size(); ++i) {
        if (g->nodes[i].kind == crv::NodeKind::Logit)
          o.require(std::binary_search(p.kept_nodes.begin(), p.kept_nodes.end(), i), "logit pruned");
      }
      o.require(std::includes(p.kept_nodes.begin(), p.kept_nodes.end(), prev_nodes.begin(), prev_nodes.end()),
                "node tau monotonicity");
      prev_nodes = p.kept_nodes;
    }

    // Edge retention at the default node threshold.
    std::vector<std::size_t> prev_edges;
    for (double etau : taus) {
      const auto p = crv::prune(base, infl, crv::kDefaultNodeTau, etau);
      auto kept_node = [&](const std::string& id) {
        for (std::size_t i : p.kept_nodes) {
          if (g->nodes[i].id == id) return true;
        }
        return false;
      };
      std::map<std::string, std::size_t> pos;
      for (std::size_t i = 0; i < g->nodes.size(); ++i) pos[g->nodes[i].id] = i;
      double total = 0.0;
      double kept = 0.0;
      for (std::size_t e = 0; e < g->edges.size(); ++e) {
        const auto& edge = g->edges[e];
        if (!kept_node(edge.src) || !kept_node(edge.dst)) {
          o.require(!std::binary_search(p.kept_edges.begin(), p.kept_edges.end(), e), "edge kept between pruned nodes");
          continue;
        }
        const double denom = in_abs[edge.dst];
        const double score = denom > 0.0 ? std::abs(edge.weight) / denom * infl[pos[edge.dst]] : 0.0;
        total += score;
        if (std::binary_search(p.kept_edges.begin(), p.kept_edges.end(), e)) kept += score;
      }
      o.require(kept >= etau * total * (1.0 - 1e-12), "retained edge mass below tau");
      o.require(std::includes(p.kept_edges.begin(), p.kept_edges.end(), prev_edges.begin(), prev_edges.end()),
                "edge tau monotonicity");
      prev_edges = p.kept_edges;
    }
  }

  // Betweenness on general weighted digraphs and path features on pruned DAGs.
  int checked = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    crv::Rng rng(crv::derive_seed(0xbe7, s));
    const int n = 2 + static_cast<int>(rng.uniform_index(7));
    crv::WeightedDigraph dg(static_cast<std::size_t>(n));
    std::vector<oracle::WEdge> edges;
    for (int u = 0; u < n; ++u) {
      for (int v = 0; v < n; ++v) {
        if (u == v || !rng.bernoulli(0.35)) continue;
        const double w = s % 2 ? static_cast<double>(1 + rng.uniform_index(2)) : rng.uniform(-2.0, 2.0);
        dg.add(static_cast<std::size_t>(u), static_cast<std::size_t>(v), w);
        edges.push_back({u, v, w});
      }
    }
    const auto got = crv::betweenness_centrality(dg);
    const auto want = oracle::betweenness(n, edges);
    for (int i = 0; i < n; ++i)
      o.require(std::abs(got[static_cast<std::size_t>(i)] - want[static_cast<std::size_t>(i)]) <= 1e-9, "betweenness");

    const auto g = std::make_shared<const crv::AttributionGraph>(
        testgen::random_dag(crv::derive_seed(0xba7, s), 4 + static_cast<int>(s % 5), 0.45));
    const auto p = crv::prune(g, crv::compute_influence(*g), 1.0, 1.0);
    const auto fp = crv::extract_fingerprint(p);
    if (fp.degenerate) continue;
    ++checked;
    const auto f = testgen::oracle_path_features(testgen::local_view(p));
    o.require(std::abs(fp.at("betweenness_mean") - f.betweenness_mean) <= 1e-9, "betweenness_mean");
    o.require(std::abs(fp.at("betweenness_max") - f.betweenness_max) <= 1e-9, "betweenness_max");
    o.require(fp.at("weakly_connected_components") == f.components, "components");
    o.require(std::abs(fp.at("avg_shortest_path_largest_component") - f.avg_path) <= 1e-9, "avg path");
    o.require(std::abs(fp.at("input_to_logit_shortest_path") - f.input_to_logit) <= 1e-9, "input_to_logit");
  }
  o.detail << "1000 DAGs (" << total_nodes << " nodes), 200 digraphs, " << checked << " pruned graphs vs path oracle";
}

// ---------------------------------------------------------------------------
// Metrics

void metrics(Outcome& o) {
  int bad = 0;
  for (std::uint64_t s = 0; s < 500; ++s) {
    crv::Rng rng(crv::derive_seed(0x3e7, s));
    const std::size_t n = 2 + rng.uniform_index(199);
    const double prior = rng.uniform(0.05, 0.95);
    std::vector<double> sc;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
      // A third of the fixtures use coarse scores so ties are common.
      sc.push_back(s % 3 == 0 ? std::floor(rng.uniform01() * 8.0) : rng.normal());
      y.push_back(rng.bernoulli(prior) ? 1 : 0);
    }
    y[rng.uniform_index(n)] = 1;
    std::size_t zero = rng.uniform_index(n);
    while (std::count(y.begin(), y.end(), 1) == 1 && y[zero] == 1) zero = rng.uniform_index(n);
    y[zero] = 0;
    const double a = crv::auroc(sc, y);
    bool ok = a == oracle::auroc_pairwise(sc, y) && crv::aupr(sc, y) == oracle::aupr_sweep(sc, y) &&
              crv::fpr_at_95(sc, y) == oracle::fpr95_sweep(sc, y);
    std::vector<int> flipped;
    for (int v : y) flipped.push_back(1 - v);
    std::vector<double> neg;
    std::vector<double> mono;
    for (double v : sc) neg.push_back(-v), mono.push_back(std::atan(v) * 5.0 + 2.0);
    ok = ok && std::abs(crv::auroc(sc, flipped) - (1.0 - a)) <= 1e-12;
    ok = ok && std::abs(crv::auroc(neg, y) - (1.0 - a)) <= 1e-12;
    ok = ok && crv::auroc(mono, y) == a;
    if (!ok) ++bad;
  }
  o.require(bad == 0, std::to_string(bad) + " fixtures disagree");
  o.detail << "500 fixtures, " << bad << " disagreements";
}

// ---------------------------------------------------------------------------
// Classifier

crv::SignatureSpec base_spec(double prior) {
  crv::SignatureSpec s;
  s.label_prior = prior;
  return s;
}

void classifier(Outcome& o) {
  const auto c = crv::planted_fingerprints(crv::gen_corpus(base_spec(0.3), 1500, 41, workers()), crv::PruneConfig{},
                                           workers());
  auto c_effect = base_spec(0.3);
  c_effect.density.effect = 1.0;
  const auto ce = crv::planted_fingerprints(crv::gen_corpus(c_effect, 1500, 42, workers()), crv::PruneConfig{},
                                            workers());
  crv::TrainConfig cfg;
  cfg.subsample = 0.8;
  cfg.seed = 5;
  bool monotone = true;
  for (const auto* corpus : {&c, &ce}) {
    const auto X = corpus->X();
    const auto y = corpus->y();
    for (const auto& tc : {crv::TrainConfig{}, cfg}) {
      const auto loss = crv::staged_logloss(crv::train_gbc(X, y, tc), X, y);
      for (std::size_t t = 1; t < loss.size(); ++t) monotone = monotone && loss[t] <= loss[t - 1];
    }
  }
  o.require(monotone, "staged training loss increased");

  Matrix X1;
  std::vector<int> y1;
  crv::Rng rng(77);
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(-5.0, 5.0);
    X1.push_back({x});
    y1.push_back(x > 1.3 ? 1 : 0);
  }
  const double sep = crv::auroc(crv::train_gbc(X1, y1).predict_proba(X1), y1);
  o.require(sep == 1.0, "separable training AUROC below 1");

  double lo = 1.0;
  double hi = 0.0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    auto corpus = crv::planted_fingerprints(crv::gen_corpus(base_spec(0.5), 1000, crv::derive_seed(0x5f, t), workers()),
                                            crv::PruneConfig{}, workers());
    std::vector<int> y = corpus.y();
    crv::Rng shuffle(crv::derive_seed(0x5e, t));
    shuffle.shuffle(std::span<int>(y));
    for (std::size_t i = 0; i < y.size(); ++i) corpus.rows[i].label = y[i];
    const auto split = crv::stratified_split(y, 0.2, t);
    const auto train = corpus.subset(split.train);
    const auto test = corpus.subset(split.test);
    const double a = crv::auroc(crv::train_gbc(train.X(), train.y()).predict_proba(test.X()), test.y());
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  o.require(lo >= 0.4 && hi <= 0.6, "shuffled-label AUROC outside [0.4, 0.6]");

  bool identical = true;
  const auto X = ce.X();
  for (const auto kind : {crv::ModelKind::GBC, crv::ModelKind::LogReg, crv::ModelKind::Dummy}) {
    const auto m = crv::train_model(kind, X, ce.y(), cfg, ce.schema);
    const std::string text = crv::model_to_json(m).dump();
    const auto back = crv::model_from_json(nlohmann::json::parse(text));
    identical = identical && crv::model_to_json(back).dump() == text;
    for (const auto& row : X) {
      const double a = m.predict_proba(row);
      const double b = back.predict_proba(row);
      identical = identical && std::memcmp(&a, &b, sizeof a) == 0;
    }
  }
  o.require(identical, "serialization round trip changed predictions");
  o.detail << std::setprecision(4) << "loss monotone, separable AUROC " << sep << ", shuffled AUROC range [" << lo
           << ", " << hi << "], round trip bit-identical";
}

// ---------------------------------------------------------------------------
// End-to-end planted run

// Out-of-fold scores for every report method: each fold's scorers (CRV
// model, temperature, probe) are fitted on the other folds only.
std::map<std::string, std::vector<double>> oof_method_scores(const crv::FingerprintCorpus& c, std::uint64_t seed) {
  const auto y = c.y();
  const auto fold = crv::stratified_folds(y, 5, seed);
  std::map<std::string, std::vector<double>> out;
  const std::vector<std::string> methods = {"CRV", "MaxProb", "PPL", "Entropy", "Energy", "Temp. Scaling"};
  for (const auto& m : methods) out[m].assign(c.rows.size(), 0.0);
  crv::TrainConfig cfg;
  cfg.seed = seed;
  for (int k = 0; k < 5; ++k) {
    std::vector<std::size_t> tr;
    std::vector<std::size_t> te;
    for (std::size_t i = 0; i < y.size(); ++i) (fold[i] == k ? te : tr).push_back(i);
    const auto scorers = crv::train_scorers(c.subset(tr), cfg);
    const auto test = c.subset(te);
    for (const auto& m : methods) {
      std::string reason;
      const auto s = crv::method_scores(m, scorers, test, reason);
      if (!s) throw crv::Error(m + " unavailable: " + reason);
      for (std::size_t j = 0; j < te.size(); ++j) out[m][te[j]] = (*s)[j];
    }
  }
  return out;
}

void end_to_end(Outcome& o) {
  auto planted = base_spec(0.05);
  planted.density.effect = 2.0;
  planted.feature_count.effect = 2.0;
  const auto c = crv::planted_fingerprints(crv::gen_corpus(planted, 5000, 2026, workers()), crv::PruneConfig{},
                                           workers());
  const auto y = c.y();
  const auto scores = oof_method_scores(c, 2026);
  const double crv_auc = crv::auroc(scores.at("CRV"), y);
  o.require(crv_auc >= 0.90, "CRV AUROC below 0.90");
  o.detail << std::setprecision(3) << "n=" << y.size() << " pos=" << std::count(y.begin(), y.end(), 1) << " CRV "
           << crv_auc;
  for (const auto& [m, s] : scores) {
    if (m == "CRV") continue;
    const double a = crv::auroc(s, y);
    o.require(a >= 0.45 && a <= 0.55, m + " AUROC outside [0.45, 0.55]");
    o.detail << ", " << m << " " << a;
  }

  const auto null_c = crv::planted_fingerprints(crv::gen_corpus(base_spec(0.05), 5000, 2027, workers()),
                                                crv::PruneConfig{}, workers());
  const double null_auc = crv::auroc(crv::oof_scores(null_c, 5, crv::TrainConfig{}, 2027, workers()), null_c.y());
  o.require(null_auc >= 0.45 && null_auc <= 0.55, "zero-effect CRV AUROC outside [0.45, 0.55]");
  o.detail << ", zero-effect CRV " << null_auc;
}

// ---------------------------------------------------------------------------
// Cross-domain

void cross_domain(Outcome& o) {
  auto a = base_spec(0.3);
  a.density.effect = 2.0;
  a.feature_count.effect = 2.0;
  auto b = base_spec(0.3);
  b.layer_skew.effect = 2.0;
  b.activation_scale.effect = 2.0;
  const auto ca = crv::planted_fingerprints(crv::gen_corpus(a, 2000, 31, workers()), crv::PruneConfig{}, workers(), "A");
  const auto cb = crv::planted_fingerprints(crv::gen_corpus(b, 2000, 32, workers()), crv::PruneConfig{}, workers(), "B");
  const auto r = crv::cross_eval_report({ca, cb}, crv::TrainConfig{}, 33, crv::RunManifest{});
  std::map<std::pair<std::string, std::string>, double> m;
  for (const auto& row : r.at("rows")) {
    for (const auto& [test, cell] : row.at("cells").items()) m[{row.at("train"), test}] = cell.at("auroc").get<double>();
  }
  o.require(m[{"B", "A"}] < m[{"A", "A"}], "transfer B->A not below in-domain A");
  o.require(m[{"A", "B"}] < m[{"B", "B"}], "transfer A->B not below in-domain B");
  o.detail << std::setprecision(3) << "A->A " << m[{"A", "A"}] << ", B->A " << m[{"B", "A"}] << ", B->B "
           << m[{"B", "B"}] << ", A->B " << m[{"A", "B"}];
}

}  // namespace

int main() {
  run("Expression semantics", 5.0, expression_semantics);
  run("Labeling protocol", 0.0, labeling_protocol);
  run("Graph math", 60.0, graph_math);
  run("Metrics", 0.0, metrics);
  run("Classifier", 0.0, classifier);
  run("End-to-end planted signature", 600.0, end_to_end);
  run("Cross-domain transfer", 0.0, cross_domain);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
