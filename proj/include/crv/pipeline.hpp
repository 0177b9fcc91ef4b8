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

// Orchestration used by the command-line tool: dataset generation, labeling,
// fingerprint corpora, splits, evaluation reports and plot data.
//
// Every output document embeds the run manifest hash. Outputs depend only on
// inputs, config and seed, never on the worker count.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crv/baselines.hpp"
#include "crv/classify.hpp"
#include "crv/cot.hpp"
#include "crv/error.hpp"
#include "crv/expr.hpp"
#include "crv/fingerprint.hpp"
#include "crv/graph.hpp"
#include "crv/graph_io.hpp"
#include "crv/metrics.hpp"
#include "crv/parallel.hpp"
#include "crv/planted.hpp"
#include "crv/random.hpp"

namespace crv {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kFingerprintFormat = "crv-fingerprints/1";
inline constexpr std::string_view kReportFormat = "crv-report/1";
inline constexpr int kTransferLayerBins = 32;

// ---------------------------------------------------------------------------
// Manifest

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
  return out;
}

// nlohmann objects keep keys sorted, so dump() is canonical.
inline std::string json_hash(const nlohmann::json& j) { return hex64(fnv1a64(j.dump())); }

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> dataset_paths;
  std::vector<std::string> model_paths;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;

  nlohmann::json to_json() const {
    return {{"command", command},
            {"config", config},
            {"config_hash", json_hash(config)},
            {"seed", seed},
            {"dataset_paths", dataset_paths},
            {"model_paths", model_paths},
            {"train_indices", train_indices},
            {"test_indices", test_indices},
            {"tool_version", std::string(kToolVersion)}};
  }
  std::string hash() const { return json_hash(to_json()); }
};

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

namespace detail {

inline std::array<std::vector<std::size_t>, 2> shuffled_by_class(std::span<const int> labels, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] == 1 ? 1 : 0].push_back(i);
  for (int c = 0; c < 2; ++c) {
    Rng rng(derive_seed(seed, 0x7370, c));
    rng.shuffle(std::span<std::size_t>(by_class[static_cast<std::size_t>(c)]));
  }
  return by_class;
}

}  // namespace detail

// Per class, round(test_fraction * n_c) rows go to test. Index lists are
// returned sorted.
inline Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  Split s;
  for (auto& members : detail::shuffled_by_class(labels, seed)) {
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    s.test.insert(s.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.insert(s.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// Fold id in [0, k) per row, classes dealt round-robin after a shuffle.
inline std::vector<int> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("need at least 2 folds");
  std::vector<int> fold(labels.size(), 0);
  for (const auto& members : detail::shuffled_by_class(labels, seed)) {
    for (std::size_t i = 0; i < members.size(); ++i) fold[members[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  }
  return fold;
}

// ---------------------------------------------------------------------------
// Line-oriented JSON helpers

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON");
    out.push_back(std::move(j));
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << text;
  if (!out) throw IoError("write failed on " + path.string());
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& lines) {
  std::string text;
  for (const auto& j : lines) {
    text += j.dump();
    text += '\n';
  }
  write_text(path, text);
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto j = nlohmann::json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw SchemaError(path.string() + ": malformed JSON");
  return j;
}

inline std::vector<StepRecord> read_step_records(const std::filesystem::path& path) {
  std::vector<StepRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(step_record_from_json(j));
  return out;
}

// ---------------------------------------------------------------------------
// Fingerprint corpora

struct FingerprintRow {
  std::string problem_id;
  int step_index = 0;
  int label = 0;  // 1 = incorrect
  std::string task;
  std::optional<int> difficulty_n;
  std::vector<double> x;
  std::optional<StepSignal> signal;
};

struct FingerprintCorpus {
  std::string name;
  int num_layers = 1;
  std::vector<std::string> schema;
  std::vector<FingerprintRow> rows;
  nlohmann::json manifest = nlohmann::json::object();

  Matrix X() const {
    Matrix out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.x);
    return out;
  }
  std::vector<int> y() const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.label);
    return out;
  }
  FingerprintCorpus subset(std::span<const std::size_t> idx) const {
    FingerprintCorpus c;
    c.name = name;
    c.num_layers = num_layers;
    c.schema = schema;
    c.manifest = manifest;
    for (std::size_t i : idx) c.rows.push_back(rows.at(i));
    return c;
  }
};

inline nlohmann::json signal_to_json(const StepSignal& s) {
  nlohmann::json j = {{"top_logits", s.top_logits}, {"token_logprobs", s.token_logprobs}};
  if (s.hidden_mean) j["hidden_mean"] = *s.hidden_mean;
  return j;
}

inline StepSignal signal_from_json(const nlohmann::json& j) {
  StepSignal s;
  s.top_logits = j.value("top_logits", std::vector<TopLogit>{});
  s.token_logprobs = j.value("token_logprobs", std::vector<double>{});
  if (j.contains("hidden_mean") && !j["hidden_mean"].is_null()) s.hidden_mean = j["hidden_mean"].get<std::vector<double>>();
  return s;
}

inline bool has_logit_signal(const StepSignal& s) { return !s.top_logits.empty() && !s.token_logprobs.empty(); }

inline void write_fingerprints_jsonl(const FingerprintCorpus& c, const std::filesystem::path& path) {
  std::vector<nlohmann::json> lines;
  lines.push_back({{"format", std::string(kFingerprintFormat)},
                   {"name", c.name},
                   {"num_layers", c.num_layers},
                   {"schema", c.schema},
                   {"manifest", c.manifest},
                   {"manifest_hash", json_hash(c.manifest)}});
  for (const auto& r : c.rows) {
    nlohmann::json j = {{"problem_id", r.problem_id}, {"step_index", r.step_index}, {"label", r.label},
                        {"task", r.task},             {"x", r.x}};
    j["difficulty_n"] = r.difficulty_n ? nlohmann::json(*r.difficulty_n) : nlohmann::json(nullptr);
    if (r.signal) j["signal"] = signal_to_json(*r.signal);
    lines.push_back(std::move(j));
  }
  write_jsonl(path, lines);
}

inline FingerprintCorpus read_fingerprints_jsonl(const std::filesystem::path& path) {
  const auto lines = read_jsonl(path);
  if (lines.empty() || lines[0].value("format", std::string()) != kFingerprintFormat)
    throw SchemaError(path.string() + ": missing crv-fingerprints/1 header");
  try {
    FingerprintCorpus c;
    c.name = lines[0].value("name", path.stem().string());
    c.num_layers = lines[0].at("num_layers").get<int>();
    c.schema = lines[0].at("schema").get<std::vector<std::string>>();
    c.manifest = lines[0].value("manifest", nlohmann::json::object());
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto& j = lines[i];
      FingerprintRow r;
      r.problem_id = j.at("problem_id").get<std::string>();
      r.step_index = j.at("step_index").get<int>();
      r.label = j.at("label").get<int>();
      r.task = j.value("task", std::string());
      if (j.contains("difficulty_n") && !j["difficulty_n"].is_null()) r.difficulty_n = j["difficulty_n"].get<int>();
      r.x = j.at("x").get<std::vector<double>>();
      if (r.x.size() != c.schema.size()) throw DimensionMismatch(c.schema.size(), r.x.size());
      if (j.contains("signal")) r.signal = signal_from_json(j["signal"]);
      c.rows.push_back(std::move(r));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

// CSV export: problem_id, step_index, label, schema columns, then baseline
// score columns (empty when the signal is missing).
inline void write_fingerprints_csv(const FingerprintCorpus& c, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "problem_id,step_index,label";
  for (const auto& n : c.schema) out << ',' << n;
  for (Baseline b : kLogitBaselines) out << ",score_" << to_string(b);
  out << '\n';
  for (const auto& r : c.rows) {
    out << '"' << r.problem_id << '"' << ',' << r.step_index << ',' << r.label;
    for (double v : r.x) out << ',' << v;
    for (Baseline b : kLogitBaselines) {
      out << ',';
      if (r.signal && has_logit_signal(*r.signal)) out << baseline_score(b, *r.signal);
    }
    out << '\n';
  }
  write_text(path, out.str());
}

struct PruneConfig {
  double node_tau = kDefaultNodeTau;
  double edge_tau = kDefaultEdgeTau;
};

inline Fingerprint fingerprint_graph(const AttributionGraph& g, const PruneConfig& pc = {}) {
  auto shared = std::make_shared<const AttributionGraph>(g);
  return extract_fingerprint(prune_graph(shared, pc.node_tau, pc.edge_tau));
}

// Loads each record's graph (relative paths resolve against base_dir), prunes
// and fingerprints it. All graphs must share num_layers.
inline FingerprintCorpus fingerprint_records(const std::vector<StepRecord>& records,
                                             const std::filesystem::path& base_dir, const PruneConfig& pc,
                                             std::size_t workers, std::string name = {}) {
  if (records.empty()) throw Error("no step records to fingerprint");
  std::vector<Fingerprint> fps(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) {
    std::filesystem::path p = records[i].graph_path;
    if (p.empty()) throw SchemaError("record " + records[i].problem_id + " has no graph_path");
    if (p.is_relative()) p = base_dir / p;
    fps[i] = fingerprint_graph(load_graph(p.string()), pc);
  });
  FingerprintCorpus c;
  c.name = std::move(name);
  c.schema = fps.front().names;
  c.num_layers = static_cast<int>(c.schema.size() - fp::kLayerHistStart - fp::kTailCount);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (fps[i].names != c.schema) throw SchemaError("graphs in one corpus must share num_layers");
    FingerprintRow r;
    r.problem_id = records[i].problem_id;
    r.step_index = records[i].step_index;
    r.label = records[i].final_label == FinalLabel::Incorrect ? 1 : 0;
    r.task = records[i].task;
    r.difficulty_n = records[i].difficulty_n;
    r.x = std::move(fps[i].values);
    if (has_logit_signal(records[i].signal) || records[i].signal.hidden_mean) r.signal = records[i].signal;
    c.rows.push_back(std::move(r));
  }
  return c;
}

// Redistributes the L-bin layer histogram onto `bins` equal slices of model
// depth, splitting each source bin by overlap. Fractions still sum to 1.
inline FingerprintCorpus rebin_layer_hist(const FingerprintCorpus& c, int bins = kTransferLayerBins) {
  if (bins < 1) throw ConfigError("bins must be >= 1");
  const auto L = static_cast<std::size_t>(c.num_layers);
  const auto B = static_cast<std::size_t>(bins);
  FingerprintCorpus out = c;
  out.num_layers = bins;
  out.schema = fingerprint_schema(bins);
  for (auto& r : out.rows) {
    std::vector<double> hist(B, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      const double mass = r.x[fp::kLayerHistStart + l];
      if (mass == 0.0) continue;
      // Source slice [l/L, (l+1)/L) against target slices [b/B, (b+1)/B),
      // measured in units of 1/(L*B) so overlaps are exact integers.
      const std::size_t lo = l * B;
      const std::size_t hi = (l + 1) * B;
      for (std::size_t b = lo / L; b < B && b * L < hi; ++b) {
        const std::size_t olo = std::max(lo, b * L);
        const std::size_t ohi = std::min(hi, (b + 1) * L);
        if (ohi > olo) hist[b] += mass * static_cast<double>(ohi - olo) / static_cast<double>(B);
      }
    }
    std::vector<double> x(r.x.begin(), r.x.begin() + fp::kLayerHistStart);
    x.insert(x.end(), hist.begin(), hist.end());
    x.insert(x.end(), r.x.begin() + static_cast<std::ptrdiff_t>(fp::kLayerHistStart + L), r.x.end());
    r.x = std::move(x);
  }
  return out;
}

// Brings two corpora onto a common schema: unchanged when the layer counts
// agree, otherwise both rebinned to kTransferLayerBins.
inline std::pair<FingerprintCorpus, FingerprintCorpus> align_corpora(const FingerprintCorpus& a,
                                                                      const FingerprintCorpus& b) {
  if (a.num_layers == b.num_layers) return {a, b};
  return {rebin_layer_hist(a), rebin_layer_hist(b)};
}

// ---------------------------------------------------------------------------
// Evaluation

struct Method {
  std::string name;
  std::string paradigm;
};

inline const std::vector<Method>& report_methods() {
  static const std::vector<Method> kMethods = {
      {"MaxProb", "Black-Box"}, {"PPL", "Black-Box"},     {"Entropy", "Black-Box"},
      {"Temp. Scaling", "Black-Box"}, {"Energy", "Black-Box"}, {"CoE-R", "Gray-Box"},
      {"CoE-C", "Gray-Box"},    {"CoT-Kinetics", "Gray-Box"}, {"LR Probe", "Gray-Box"},
      {"CRV", "White-Box"}};
  return kMethods;
}

// Methods whose formulas live outside this toolkit; the report keeps their
// columns so externally computed scores can be merged.
inline bool is_external_method(std::string_view m) { return m == "CoE-R" || m == "CoE-C" || m == "CoT-Kinetics"; }

struct Cell {
  std::optional<EvalResult> result;
  std::string reason;  // why result is missing
};

inline nlohmann::json to_json(const Cell& c) {
  if (!c.result) return {{"auroc", nullptr}, {"aupr", nullptr}, {"fpr_at_95", nullptr}, {"reason", c.reason}};
  const auto& r = *c.result;
  return {{"auroc", r.auroc}, {"aupr", r.aupr}, {"fpr_at_95", r.fpr_at_95}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}};
}

inline Cell score_cell(std::span<const double> scores, std::span<const int> labels, const std::string& method,
                       const std::string& dataset) {
  try {
    return {evaluate_scores(scores, labels, method, dataset), {}};
  } catch (const SingleClassData&) {
    return {std::nullopt, "single class in evaluation set"};
  }
}

struct TrainedScorers {
  DiagnosticModel crv;
  std::optional<double> temperature;
  std::optional<DiagnosticModel> probe;
  std::map<std::string, std::string> notes;  // method -> why it is unavailable
};

inline TrainedScorers train_scorers(const FingerprintCorpus& train, const TrainConfig& cfg) {
  TrainedScorers t;
  const auto y = train.y();
  t.crv = train_gbc(train.X(), y, cfg, train.schema);
  const bool all_logits = std::all_of(train.rows.begin(), train.rows.end(), [](const FingerprintRow& r) {
    return r.signal && has_logit_signal(*r.signal);
  });
  if (all_logits) {
    std::vector<StepSignal> sig;
    for (const auto& r : train.rows) sig.push_back(*r.signal);
    t.temperature = temp_scale_fit(std::span<const StepSignal>(sig), y);
  } else {
    t.notes["Temp. Scaling"] = "training rows lack logit signals";
  }
  const bool all_hidden = std::all_of(train.rows.begin(), train.rows.end(), [](const FingerprintRow& r) {
    return r.signal && r.signal->hidden_mean;
  });
  if (all_hidden) {
    std::vector<StepSignal> sig;
    for (const auto& r : train.rows) sig.push_back(*r.signal);
    t.probe = lr_probe_train(std::span<const StepSignal>(sig), y, -1, cfg);
  } else {
    t.notes["LR Probe"] = "training rows lack hidden_mean";
  }
  return t;
}

// Incorrectness scores of one method on a corpus; nullopt with a reason when
// the method cannot run.
inline std::optional<std::vector<double>> method_scores(const std::string& method, const TrainedScorers& t,
                                                        const FingerprintCorpus& test, std::string& reason) {
  std::vector<double> s;
  s.reserve(test.rows.size());
  if (method == "CRV") {
    for (const auto& r : test.rows) s.push_back(t.crv.predict_proba(r.x));
    return s;
  }
  if (is_external_method(method)) {
    reason = "computed outside this toolkit";
    return std::nullopt;
  }
  if (method == "LR Probe") {
    if (!t.probe) {
      reason = t.notes.count(method) ? t.notes.at(method) : "probe not trained";
      return std::nullopt;
    }
    for (const auto& r : test.rows) {
      if (!r.signal || !r.signal->hidden_mean) {
        reason = "test rows lack hidden_mean";
        return std::nullopt;
      }
      s.push_back(t.probe->predict_proba(*r.signal->hidden_mean));
    }
    return s;
  }
  for (Baseline b : kLogitBaselines) {
    if (method != to_string(b)) continue;
    double temperature = 1.0;
    if (b == Baseline::TempScaling) {
      if (!t.temperature) {
        reason = t.notes.count(method) ? t.notes.at(method) : "temperature not fitted";
        return std::nullopt;
      }
      temperature = *t.temperature;
    }
    for (const auto& r : test.rows) {
      if (!r.signal || !has_logit_signal(*r.signal)) {
        reason = "test rows lack logit signals";
        return std::nullopt;
      }
      s.push_back(baseline_score(b, *r.signal, temperature));
    }
    return s;
  }
  throw ConfigError("unknown method '" + method + "'");
}

// Table-shaped report: rows are methods, columns datasets, cells
// AUROC/AUPR/FPR@95 or null with a reason.
inline nlohmann::json eval_report(const FingerprintCorpus& train, const FingerprintCorpus& test,
                                  const TrainConfig& cfg, const RunManifest& manifest) {
  if (test.rows.empty()) throw Error("empty test set");
  if (train.schema != test.schema) throw SchemaError("train and test fingerprint schemas differ");
  const auto t = train_scorers(train, cfg);
  const auto y = test.y();
  const std::string dataset = test.name.empty() ? "test" : test.name;
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json orient = nlohmann::json::object();
  for (Baseline b : kLogitBaselines) orient[std::string(to_string(b))] = std::string(orientation(b));
  orient["CRV"] = "+p(incorrect)";
  orient["LR Probe"] = "+p(incorrect)";
  for (const auto& m : report_methods()) {
    std::string reason;
    const auto s = method_scores(m.name, t, test, reason);
    const Cell cell = s ? score_cell(*s, y, m.name, dataset) : Cell{std::nullopt, reason};
    rows.push_back({{"paradigm", m.paradigm}, {"method", m.name}, {"cells", {{dataset, to_json(cell)}}}});
  }
  // Per-difficulty breakdown of CRV when difficulty metadata is present.
  nlohmann::json by_difficulty = nlohmann::json::object();
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < test.rows.size(); ++i) {
    if (test.rows[i].difficulty_n) groups[*test.rows[i].difficulty_n].push_back(i);
  }
  for (const auto& [n, idx] : groups) {
    std::vector<double> s;
    std::vector<int> yy;
    for (std::size_t i : idx) {
      s.push_back(t.crv.predict_proba(test.rows[i].x));
      yy.push_back(test.rows[i].label);
    }
    by_difficulty[std::to_string(n)] = to_json(score_cell(s, yy, "CRV", dataset));
  }
  nlohmann::json importance = nlohmann::json::object();
  for (const auto& [name, v] : feature_importance(t.crv)) importance[name] = v;
  nlohmann::json report = {{"format", std::string(kReportFormat)},
                           {"manifest", manifest.to_json()},
                           {"manifest_hash", manifest.hash()},
                           {"datasets", {dataset}},
                           {"orientation", orient},
                           {"rows", rows},
                           {"crv_by_difficulty", by_difficulty},
                           {"crv_feature_importance", importance}};
  if (t.temperature) report["temperature"] = *t.temperature;
  return report;
}

// Out-of-fold CRV probabilities from stratified k-fold training, so every
// row is scored by a model that never saw it.
inline std::vector<double> oof_scores(const FingerprintCorpus& c, int k, const TrainConfig& cfg, std::uint64_t seed,
                                      std::size_t workers = 1) {
  const auto y = c.y();
  const auto fold = stratified_folds(y, k, seed);
  const auto X = c.X();
  std::vector<double> out(c.rows.size(), 0.0);
  std::vector<std::vector<std::pair<std::size_t, double>>> parts(static_cast<std::size_t>(k));
  parallel_for(static_cast<std::size_t>(k), workers, [&](std::size_t f) {
    Matrix Xtr;
    std::vector<int> ytr;
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (fold[i] != static_cast<int>(f)) {
        Xtr.push_back(X[i]);
        ytr.push_back(y[i]);
      }
    }
    const auto m = train_gbc(Xtr, ytr, cfg);
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (fold[i] == static_cast<int>(f)) parts[f].emplace_back(i, m.predict_proba(X[i]));
    }
  });
  for (const auto& p : parts) {
    for (const auto& [i, v] : p) out[i] = v;
  }
  return out;
}

// Train-on-A, test-on-B matrix of CRV cells. Each corpus is split 80/20
// (stratified); models train on a corpus's train part and are scored on
// every corpus's test part, after schema alignment.
inline nlohmann::json cross_eval_report(const std::vector<FingerprintCorpus>& corpora, const TrainConfig& cfg,
                                        std::uint64_t seed, const RunManifest& manifest) {
  if (corpora.size() < 2) throw ConfigError("cross-domain evaluation needs at least two corpora");
  std::vector<Split> splits;
  for (std::size_t i = 0; i < corpora.size(); ++i) {
    if (corpora[i].rows.empty()) throw Error("empty corpus '" + corpora[i].name + "'");
    splits.push_back(stratified_split(corpora[i].y(), 0.2, derive_seed(seed, i)));
  }
  const bool same_layers = std::all_of(corpora.begin(), corpora.end(), [&](const FingerprintCorpus& c) {
    return c.num_layers == corpora.front().num_layers;
  });
  std::vector<FingerprintCorpus> aligned;
  for (const auto& c : corpora) aligned.push_back(same_layers ? c : rebin_layer_hist(c));

  nlohmann::json matrix = nlohmann::json::array();
  for (std::size_t a = 0; a < aligned.size(); ++a) {
    const auto train = aligned[a].subset(splits[a].train);
    const auto model = train_gbc(train.X(), train.y(), cfg, train.schema);
    nlohmann::json cells = nlohmann::json::object();
    for (std::size_t b = 0; b < aligned.size(); ++b) {
      const auto test = aligned[b].subset(splits[b].test);
      const auto s = model.predict_proba(test.X());
      cells[aligned[b].name] = to_json(score_cell(s, test.y(), "CRV", aligned[b].name));
    }
    matrix.push_back({{"train", aligned[a].name}, {"cells", cells}});
  }
  std::vector<std::string> names;
  for (const auto& c : aligned) names.push_back(c.name);
  return {{"format", std::string(kReportFormat)},
          {"kind", "cross-domain"},
          {"manifest", manifest.to_json()},
          {"manifest_hash", manifest.hash()},
          {"datasets", names},
          {"layer_bins", same_layers ? aligned.front().num_layers : kTransferLayerBins},
          {"rows", matrix}};
}

// ---------------------------------------------------------------------------
// Plot data

// Per-feature class-conditional summaries and separation tests, plus the
// first two principal components of the standardized fingerprints.
inline nlohmann::json plot_data(const FingerprintCorpus& c, int histogram_bins, const RunManifest& manifest) {
  if (histogram_bins < 1) throw ConfigError("histogram_bins must be >= 1");
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t j = 0; j < c.schema.size(); ++j) {
    std::vector<double> v0;
    std::vector<double> v1;
    for (const auto& r : c.rows) (r.label == 1 ? v1 : v0).push_back(r.x[j]);
    nlohmann::json f = {{"name", c.schema[j]}};
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& r : c.rows) {
      lo = std::min(lo, r.x[j]);
      hi = std::max(hi, r.x[j]);
    }
    if (!c.rows.empty()) {
      const double width = hi > lo ? (hi - lo) / histogram_bins : 1.0;
      auto hist = [&](const std::vector<double>& v) {
        std::vector<std::size_t> h(static_cast<std::size_t>(histogram_bins), 0);
        for (double x : v) {
          const auto b = std::min<std::size_t>(static_cast<std::size_t>((x - lo) / width),
                                               static_cast<std::size_t>(histogram_bins - 1));
          ++h[b];
        }
        return h;
      };
      f["range"] = {lo, hi};
      f["hist_correct"] = hist(v0);
      f["hist_incorrect"] = hist(v1);
    }
    try {
      const auto st = feature_separation_stats(v0, v1);
      f["t_statistic"] = st.t_statistic;
      f["p_value"] = st.p_value;
      f["cohens_d"] = st.cohens_d;
    } catch (const DegenerateData& e) {
      f["t_statistic"] = nullptr;
      f["p_value"] = nullptr;
      f["cohens_d"] = nullptr;
      f["reason"] = e.what();
    }
    features.push_back(std::move(f));
  }
  nlohmann::json out = {{"format", "crv-plotdata/1"},
                        {"manifest_hash", manifest.hash()},
                        {"manifest", manifest.to_json()},
                        {"features", features}};
  try {
    const auto p = pca_project(c.X(), 2);
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t i = 0; i < c.rows.size(); ++i) pts.push_back({p.coords[i][0], p.coords[i][1], c.rows[i].label});
    out["pca"] = {{"explained_variance_ratio", p.explained_variance_ratio}, {"points", pts}};
  } catch (const DegenerateData& e) {
    out["pca"] = {{"reason", e.what()}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation

struct GenItem {
  std::string problem_id;
  TaskKind task = TaskKind::Arithmetic;
  int n_ops = 0;
  std::optional<Expr> expr;
  std::string prompt;
};

struct GenResult {
  std::vector<GenItem> items;
  std::vector<std::string> warnings;
};

// `count` unique expressions per difficulty. Small operator counts can run out
// of distinct expressions; generation then stops with a warning once
// `max_attempts_factor * count` draws produced no further new expression.
inline GenResult gen_dataset(TaskKind task, const std::vector<int>& n_list, std::size_t count, std::uint64_t seed,
                             std::size_t max_attempts_factor = 50) {
  if (task == TaskKind::External) throw ConfigError("gen only produces synthetic tasks");
  GenResult out;
  const ExprKind kind = expr_kind(task);
  for (int n : n_list) {
    std::set<std::string> seen;
    std::size_t produced = 0;
    const std::size_t budget = std::max<std::size_t>(count, 1) * max_attempts_factor;
    for (std::uint64_t attempt = 0; produced < count && attempt < budget; ++attempt) {
      const Expr e = gen_expression(kind, n, derive_seed(seed, static_cast<std::uint64_t>(n), attempt));
      const std::string text = render(e, RenderStyle::Spaced);
      if (!seen.insert(text).second) continue;
      GenItem item;
      item.problem_id = std::string(to_string(task)) + "-n" + std::to_string(n) + "-" + std::to_string(produced);
      item.task = task;
      item.n_ops = n;
      item.expr = e;
      item.prompt = build_prompt(task, e);
      out.items.push_back(std::move(item));
      ++produced;
    }
    if (produced < count) {
      out.warnings.push_back("n=" + std::to_string(n) + ": only " + std::to_string(produced) +
                             " unique expressions found for " + std::to_string(count) + " requested");
    }
  }
  return out;
}

inline nlohmann::json to_json(const GenItem& g) {
  return {{"problem_id", g.problem_id},
          {"task", std::string(to_string(g.task))},
          {"difficulty_n", g.n_ops},
          {"expr", render(*g.expr, RenderStyle::Spaced)},
          {"value", evaluate(*g.expr).to_string()},
          {"prompt", g.prompt}};
}

// ---------------------------------------------------------------------------
// Labeling

// Trace input, one JSON object per line:
//   {"problem_id", "task", "difficulty_n"?, "expr"? | "question"?,
//    "answer"?, "raw_cot_text", "reduced"?: [string|null per step],
//    "judge"?: ["correct"|"incorrect"|... per step]}
// "reduced" holds the model's restated expression after each step; "judge"
// carries precomputed judge verdicts.
struct TraceInput {
  CotTrace trace;
  std::optional<std::vector<std::optional<std::string>>> reduced;
  std::optional<std::vector<JudgeLabel>> judge;
  std::string answer;  // ground truth for the judge prompt
};

inline TraceInput trace_from_json(const nlohmann::json& j) {
  try {
    TraceInput in;
    auto& t = in.trace;
    t.problem_id = j.at("problem_id").get<std::string>();
    t.task = parse_task_kind(j.at("task").get<std::string>());
    if (j.contains("difficulty_n") && !j["difficulty_n"].is_null()) t.difficulty_n = j["difficulty_n"].get<int>();
    t.raw_cot_text = j.at("raw_cot_text").get<std::string>();
    t.prompt_text = j.value("prompt_text", std::string());
    t.question = j.value("question", std::string());
    if (t.task != TaskKind::External) {
      t.original_expr = parse(j.at("expr").get<std::string>(), expr_kind(t.task));
      in.answer = evaluate(*t.original_expr).to_string();
    }
    in.answer = j.value("answer", in.answer);
    if (j.contains("reduced")) {
      std::vector<std::optional<std::string>> red;
      for (const auto& r : j["reduced"]) red.push_back(r.is_null() ? std::nullopt : std::optional(r.get<std::string>()));
      in.reduced = std::move(red);
    }
    if (j.contains("judge")) {
      std::vector<JudgeLabel> jl;
      for (const auto& v : j["judge"]) jl.push_back(parse_judge_label(v.get<std::string>()));
      in.judge = std::move(jl);
    }
    return in;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("trace: ") + e.what());
  }
}

struct LabelOutcome {
  CotTrace trace;                          // finalized
  std::vector<StepRecord> records;         // emitted steps
  std::vector<nlohmann::json> audit;       // one entry per step not emitted
};

// Segments, verifies and fuses one trace. `judge` (if given) labels steps that
// have no precomputed verdict.
inline LabelOutcome label_trace(TraceInput in, LabelMode mode,
                                const std::function<JudgeLabel(const CotTrace&, const Step&, const std::string&)>& judge = {}) {
  auto& t = in.trace;
  t.steps = segment_steps(t.raw_cot_text);
  if (in.reduced) {
    std::size_t k = 0;
    for (auto& s : t.steps) {
      if (s.conclusion) continue;
      if (k < in.reduced->size()) s.reduced_text = (*in.reduced)[k];
      ++k;
    }
  }
  apply_programmatic_labels(t);
  if (mode != LabelMode::ProgOnly) {
    std::string context;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      auto& s = t.steps[i];
      if (in.judge && i < in.judge->size()) s.judge_label = (*in.judge)[i];
      else if (judge) s.judge_label = judge(t, s, context);
      if (!context.empty()) context += '\n';
      context += s.text;
    }
  }
  const std::vector<Step> before = t.steps;
  LabelOutcome out;
  out.trace = finalize_labels(std::move(t), mode);
  const std::set<int> kept_after_cut = [&] {
    std::set<int> s;
    for (const auto& st : out.trace.steps) s.insert(st.index);
    return s;
  }();
  for (const auto& s : before) {
    const auto it = std::find_if(out.trace.steps.begin(), out.trace.steps.end(),
                                 [&](const Step& f) { return f.index == s.index; });
    std::string why;
    if (!kept_after_cut.count(s.index)) why = "after first incorrect step";
    else if (!it->final_label) why = "labelers disagree or could not verify";
    if (why.empty()) continue;
    nlohmann::json a = {{"problem_id", out.trace.problem_id}, {"step_index", s.index}, {"reason", why}};
    a["prog_label"] = s.prog_label ? nlohmann::json(std::string(to_string(*s.prog_label))) : nlohmann::json(nullptr);
    a["judge_label"] = s.judge_label ? nlohmann::json(std::string(to_string(*s.judge_label))) : nlohmann::json(nullptr);
    out.audit.push_back(std::move(a));
  }
  out.records = to_records(out.trace, mode);
  return out;
}

// ---------------------------------------------------------------------------
// Planted corpora on disk

// Writes graphs/<id>.json[.gz] and steps.jsonl (StepRecords pointing at the
// graphs with paths relative to `dir`).
inline void write_planted_corpus(const std::vector<PlantedItem>& items, const std::filesystem::path& dir,
                                 bool gzip, std::size_t workers) {
  std::filesystem::create_directories(dir / "graphs");
  std::vector<StepRecord> records(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof name, "g%07zu.json%s", i, gzip ? ".gz" : "");
    const std::string rel = std::string("graphs/") + name;
    store_graph(items[i].graph, (dir / rel).string());
    StepRecord r;
    r.problem_id = "planted-" + std::to_string(i);
    r.task = "external";
    r.step_index = 1;
    r.final_label = items[i].label == 1 ? FinalLabel::Incorrect : FinalLabel::Correct;
    r.graph_path = rel;
    r.signal = items[i].signal;
    r.label_source = "planted";
    records[i] = std::move(r);
  });
  std::vector<nlohmann::json> lines;
  for (const auto& r : records) lines.push_back(to_json(r));
  write_jsonl(dir / "steps.jsonl", lines);
}

// In-memory equivalent of write_planted_corpus followed by fingerprinting.
inline FingerprintCorpus planted_fingerprints(const std::vector<PlantedItem>& items, const PruneConfig& pc,
                                              std::size_t workers, std::string name = "planted") {
  if (items.empty()) throw Error("empty planted corpus");
  std::vector<Fingerprint> fps(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) { fps[i] = fingerprint_graph(items[i].graph, pc); });
  FingerprintCorpus c;
  c.name = std::move(name);
  c.schema = fps.front().names;
  c.num_layers = items.front().graph.meta.num_layers;
  for (std::size_t i = 0; i < items.size(); ++i) {
    FingerprintRow r;
    r.problem_id = "planted-" + std::to_string(i);
    r.step_index = 1;
    r.label = items[i].label;
    r.task = "external";
    r.x = std::move(fps[i].values);
    r.signal = items[i].signal;
    c.rows.push_back(std::move(r));
  }
  return c;
}

}  // namespace crv
