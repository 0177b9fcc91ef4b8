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

// crv: command-line front end for dataset generation, labeling,
// fingerprinting, training and evaluation.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "crv/crv.hpp"
#include "crv/judge.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// JSON config files: nested objects map to subcommand sections, e.g.
//   {"seed": 7, "eval": {"n-trees": 200}}
class ConfigJson : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j;
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames()[0];
      if (opt->get_type_size() != 0) {
        if (opt->count() == 1) j[name] = opt->results().at(0);
        else if (opt->count() > 1) j[name] = opt->results();
        else if (default_also && !opt->get_default_str().empty()) j[name] = opt->get_default_str();
      } else if (opt->count() > 0) {
        j[name] = true;
      }
    }
    for (const CLI::App* sub : app->get_subcommands({})) {
      const auto nested = json::parse(to_config(sub, default_also, false, ""));
      if (!nested.empty()) j[sub->get_name()] = nested;
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j = json::parse(input, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw CLI::ConversionError("config file is not a JSON object");
    std::vector<CLI::ConfigItem> out;
    flatten(j, {}, out);
    return out;
  }

 private:
  static std::string scalar(const json& v, const std::string& name) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("unsupported value for " + name);
  }

  static void flatten(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v, key));
      } else {
        item.inputs.push_back(scalar(value, key));
      }
      out.push_back(std::move(item));
    }
  }
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_json_file(const fs::path& path, const json& j) { crv::write_text(path, j.dump(2) + "\n"); }

crv::LabelMode parse_label_mode(const std::string& s) {
  if (s == "intersection") return crv::LabelMode::Intersection;
  if (s == "judge" || s == "judge_only") return crv::LabelMode::JudgeOnly;
  if (s == "prog" || s == "prog_only") return crv::LabelMode::ProgOnly;
  throw crv::ConfigError("unknown label mode '" + s + "'");
}

struct TrainFlags {
  crv::TrainConfig cfg;
  void add(CLI::App* app) {
    app->add_option("--n-trees", cfg.n_trees, "Boosting stages / forest size")->capture_default_str();
    app->add_option("--learning-rate", cfg.learning_rate, "Shrinkage per stage")->capture_default_str();
    app->add_option("--max-depth", cfg.max_depth, "Tree depth")->capture_default_str();
    app->add_option("--min-samples-leaf", cfg.min_samples_leaf, "Minimum rows per leaf")->capture_default_str();
    app->add_option("--subsample", cfg.subsample, "Row fraction per stage")->capture_default_str();
    app->add_option("--l2", cfg.l2_strength, "Logistic-regression L2 strength")->capture_default_str();
    app->add_flag("--balanced", cfg.balanced_class_weight, "Reweight classes to equal total weight");
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Circuit-based reasoning verification toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--seed", seed, "Global random seed")->capture_default_str();
  app.add_option("--workers", workers, "Worker threads")->capture_default_str();
  // --config accepts TOML (default) or JSON (by extension).
  for (int i = 1; i + 1 < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && fs::path(argv[i + 1]).extension() == ".json")
      app.config_formatter(std::make_shared<ConfigJson>());
  }
  app.set_config("--config", "", "TOML or JSON config file");

  auto manifest_for = [&](const std::string& cmd, const json& config) {
    crv::RunManifest m;
    m.command = cmd;
    m.config = config;
    m.seed = seed;
    return m;
  };

  // gen
  auto* gen = app.add_subcommand("gen", "Generate synthetic expressions and prompts");
  std::string gen_task = "arithmetic";
  std::string gen_n = "3,5,7,10";
  std::size_t gen_count = 10000;
  std::string gen_out;
  gen->add_option("--task", gen_task, "boolean | arithmetic")->capture_default_str();
  gen->add_option("--n", gen_n, "Comma-separated operator counts")->capture_default_str();
  gen->add_option("--count", gen_count, "Unique expressions per operator count")->capture_default_str();
  gen->add_option("--out", gen_out, "Output JSONL")->required();

  // label
  auto* label = app.add_subcommand("label", "Segment and label chain-of-thought traces");
  std::string label_in, label_out, label_audit, label_mode, judge_cfg_path, checkpoint_path;
  label->add_option("--traces", label_in, "Input traces JSONL")->required()->check(CLI::ExistingFile);
  label->add_option("--out", label_out, "Labeled step records JSONL")->required();
  label->add_option("--audit", label_audit, "Audit log of steps not emitted");
  label->add_option("--mode", label_mode, "intersection | judge_only | prog_only (default by task)");
  label->add_option("--judge-config", judge_cfg_path, "Judge endpoint config JSON")->check(CLI::ExistingFile);
  label->add_option("--checkpoint", checkpoint_path, "Judge progress file, resumed by problem_id");

  // graphs validate
  auto* graphs = app.add_subcommand("graphs", "Attribution-graph utilities");
  graphs->require_subcommand(1);
  auto* validate_cmd = graphs->add_subcommand("validate", "Validate crv-graph/1 files");
  std::vector<std::string> validate_paths;
  validate_cmd->add_option("paths", validate_paths, "Graph files")->required();

  // fingerprint
  auto* fpc = app.add_subcommand("fingerprint", "Prune and fingerprint the graphs of a step corpus");
  std::string fp_steps, fp_out, fp_csv, fp_name;
  crv::PruneConfig prune_cfg;
  fpc->add_option("--steps", fp_steps, "Step records JSONL with graph_path")->required()->check(CLI::ExistingFile);
  fpc->add_option("--out", fp_out, "Fingerprint corpus JSONL")->required();
  fpc->add_option("--csv", fp_csv, "Also write CSV with baseline score columns");
  fpc->add_option("--name", fp_name, "Dataset name (default: steps file stem)");
  fpc->add_option("--node-tau", prune_cfg.node_tau, "Node influence share kept")->capture_default_str();
  fpc->add_option("--edge-tau", prune_cfg.edge_tau, "Edge score share kept")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train a diagnostic classifier");
  std::string train_in, train_out, train_kind = "gbc";
  TrainFlags train_flags;
  train->add_option("--fingerprints", train_in, "Fingerprint corpus")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Model JSON")->required();
  train->add_option("--model", train_kind, "gbc | logreg | dummy | random_forest")->capture_default_str();
  train_flags.add(train);

  // eval
  auto* eval = app.add_subcommand("eval", "Score CRV and baselines; emit a table-shaped report");
  std::string eval_train, eval_test, eval_data, eval_out;
  TrainFlags eval_flags;
  eval->add_option("--train", eval_train, "Training corpus")->check(CLI::ExistingFile);
  eval->add_option("--test", eval_test, "Test corpus")->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Single corpus, split 80/20 stratified")->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "Report JSON")->required();
  eval_flags.add(eval);

  // cross-eval
  auto* xeval = app.add_subcommand("cross-eval", "Train on each corpus, test on every corpus");
  std::vector<std::string> xeval_data;
  std::string xeval_out;
  TrainFlags xeval_flags;
  xeval->add_option("--data", xeval_data, "Fingerprint corpora (two or more)")->required()->check(CLI::ExistingFile);
  xeval->add_option("--out", xeval_out, "Report JSON")->required();
  xeval_flags.add(xeval);

  // report
  auto* report = app.add_subcommand("report", "Merge eval reports into one table");
  std::vector<std::string> report_in;
  std::string report_out, report_csv;
  report->add_option("--reports", report_in, "Eval report files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "Merged report JSON")->required();
  report->add_option("--csv", report_csv, "Also write the table as CSV");

  // plotdata
  auto* plot = app.add_subcommand("plotdata", "Feature histograms, separation tests and PCA coordinates");
  std::string plot_in, plot_out;
  int plot_bins = 30;
  plot->add_option("--fingerprints", plot_in, "Fingerprint corpus")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out, "Plot data JSON")->required();
  plot->add_option("--bins", plot_bins, "Histogram bins")->capture_default_str();

  // planted
  auto* planted = app.add_subcommand("planted", "Generate a synthetic corpus with a planted error signature");
  std::string planted_spec, planted_out;
  std::size_t planted_n = 1000;
  bool planted_gzip = false;
  planted->add_option("--spec", planted_spec, "Signature spec JSON")->required()->check(CLI::ExistingFile);
  planted->add_option("--n", planted_n, "Number of graphs")->capture_default_str();
  planted->add_option("--out", planted_out, "Output directory")->required();
  planted->add_flag("--gzip", planted_gzip, "Compress graph files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const auto task = crv::parse_task_kind(gen_task);
      std::vector<int> ns;
      for (const auto& s : split_csv(gen_n)) ns.push_back(std::stoi(s));
      const auto result = crv::gen_dataset(task, ns, gen_count, seed);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
      std::vector<json> lines;
      for (const auto& item : result.items) lines.push_back(crv::to_json(item));
      crv::write_jsonl(gen_out, lines);
      std::cout << "wrote " << result.items.size() << " expressions to " << gen_out << "\n";
    } else if (*label) {
      std::optional<crv::JudgeConfig> judge_cfg;
      if (!judge_cfg_path.empty()) judge_cfg = crv::judge_config_from_json(crv::read_json(judge_cfg_path));
      // Resume: traces already judged keep their stored verdicts.
      std::map<std::string, std::vector<std::string>> done;
      if (!checkpoint_path.empty() && fs::exists(checkpoint_path)) {
        for (const auto& j : crv::read_jsonl(checkpoint_path))
          done[j.at("problem_id").get<std::string>()] = j.at("judge").get<std::vector<std::string>>();
      }
      std::ofstream checkpoint;
      if (!checkpoint_path.empty()) checkpoint.open(checkpoint_path, std::ios::app);
      std::vector<json> out_lines;
      std::vector<json> audit_lines;
      std::size_t steps_out = 0;
      for (const auto& j : crv::read_jsonl(label_in)) {
        auto in = crv::trace_from_json(j);
        const auto mode = label_mode.empty() ? crv::default_label_mode(in.trace.task) : parse_label_mode(label_mode);
        if (!in.judge && done.count(in.trace.problem_id)) {
          std::vector<crv::JudgeLabel> stored;
          for (const auto& s : done[in.trace.problem_id]) stored.push_back(crv::parse_judge_label(s));
          in.judge = std::move(stored);
        }
        const bool needs_judge = mode != crv::LabelMode::ProgOnly && !in.judge;
        if (needs_judge && !judge_cfg)
          throw crv::ConfigError("trace " + in.trace.problem_id + " needs a judge; pass --judge-config or --mode prog_only");
        std::string problem = in.trace.original_expr ? crv::render(*in.trace.original_expr) : in.trace.question;
        const std::string answer = in.answer;
        auto judge = [&](const crv::CotTrace&, const crv::Step& s, const std::string& context) {
          return crv::judge_step(*judge_cfg, context, s.text, problem, answer);
        };
        auto outcome = needs_judge ? crv::label_trace(std::move(in), mode, judge) : crv::label_trace(std::move(in), mode);
        if (needs_judge && checkpoint.is_open()) {
          json verdicts = json::array();
          for (const auto& s : outcome.trace.steps)
            verdicts.push_back(s.judge_label ? std::string(crv::to_string(*s.judge_label)) : "unparseable");
          checkpoint << json{{"problem_id", outcome.trace.problem_id}, {"judge", verdicts}}.dump() << "\n";
          checkpoint.flush();
        }
        for (const auto& r : outcome.records) out_lines.push_back(crv::to_json(r));
        for (auto& a : outcome.audit) audit_lines.push_back(std::move(a));
        steps_out += outcome.records.size();
      }
      crv::write_jsonl(label_out, out_lines);
      if (!label_audit.empty()) crv::write_jsonl(label_audit, audit_lines);
      std::cout << "emitted " << steps_out << " labeled steps; " << audit_lines.size() << " steps not emitted\n";
    } else if (*validate_cmd) {
      int bad = 0;
      for (const auto& p : validate_paths) {
        try {
          const auto g = crv::load_graph(p);
          std::cout << p << ": ok (" << g.nodes.size() << " nodes, " << g.edges.size() << " edges)\n";
        } catch (const crv::Error& e) {
          std::cout << p << ": " << e.what() << "\n";
          ++bad;
        }
      }
      return bad == 0 ? 0 : 1;
    } else if (*fpc) {
      const auto records = crv::read_step_records(fp_steps);
      const std::string name = fp_name.empty() ? fs::path(fp_steps).stem().string() : fp_name;
      auto corpus = crv::fingerprint_records(records, fs::path(fp_steps).parent_path(), prune_cfg, workers, name);
      auto m = manifest_for("fingerprint", {{"node_tau", prune_cfg.node_tau}, {"edge_tau", prune_cfg.edge_tau}});
      m.dataset_paths = {fp_steps};
      corpus.manifest = m.to_json();
      crv::write_fingerprints_jsonl(corpus, fp_out);
      if (!fp_csv.empty()) crv::write_fingerprints_csv(corpus, fp_csv);
      std::cout << "fingerprinted " << corpus.rows.size() << " steps (" << corpus.schema.size() << " features)\n";
    } else if (*train) {
      const auto corpus = crv::read_fingerprints_jsonl(train_in);
      auto cfg = train_flags.cfg;
      cfg.seed = seed;
      auto model = crv::train_model(crv::parse_model_kind(train_kind), corpus.X(), corpus.y(), cfg, corpus.schema);
      auto m = manifest_for("train", crv::to_json(cfg));
      m.dataset_paths = {train_in};
      m.model_paths = {train_out};
      model.metadata["manifest_hash"] = m.hash();
      model.metadata["dataset"] = corpus.name;
      write_json_file(train_out, crv::model_to_json(model));
      std::cout << "trained " << crv::to_string(model.kind) << " on " << corpus.rows.size() << " rows\n";
    } else if (*eval) {
      auto cfg = eval_flags.cfg;
      cfg.seed = seed;
      auto m = manifest_for("eval", crv::to_json(cfg));
      crv::FingerprintCorpus tr, te;
      if (!eval_data.empty()) {
        const auto all = crv::read_fingerprints_jsonl(eval_data);
        const auto split = crv::stratified_split(all.y(), 0.2, seed);
        tr = all.subset(split.train);
        te = all.subset(split.test);
        m.dataset_paths = {eval_data};
        m.train_indices = split.train;
        m.test_indices = split.test;
      } else {
        if (eval_train.empty() || eval_test.empty()) throw crv::ConfigError("eval needs --data or both --train and --test");
        tr = crv::read_fingerprints_jsonl(eval_train);
        te = crv::read_fingerprints_jsonl(eval_test);
        std::tie(tr, te) = crv::align_corpora(tr, te);
        m.dataset_paths = {eval_train, eval_test};
      }
      const auto rep = crv::eval_report(tr, te, cfg, m);
      write_json_file(eval_out, rep);
      for (const auto& row : rep["rows"]) {
        const auto& cell = row["cells"].begin().value();
        std::printf("%-14s %-14s ", row["paradigm"].get<std::string>().c_str(), row["method"].get<std::string>().c_str());
        if (cell["auroc"].is_null()) std::printf("n/a (%s)\n", cell["reason"].get<std::string>().c_str());
        else std::printf("AUROC %.4f  AUPR %.4f  FPR@95 %.4f\n", cell["auroc"].get<double>(), cell["aupr"].get<double>(),
                         cell["fpr_at_95"].get<double>());
      }
    } else if (*xeval) {
      auto cfg = xeval_flags.cfg;
      cfg.seed = seed;
      std::vector<crv::FingerprintCorpus> corpora;
      for (const auto& p : xeval_data) corpora.push_back(crv::read_fingerprints_jsonl(p));
      auto m = manifest_for("cross-eval", crv::to_json(cfg));
      m.dataset_paths = xeval_data;
      write_json_file(xeval_out, crv::cross_eval_report(corpora, cfg, seed, m));
      std::cout << "wrote " << xeval_out << "\n";
    } else if (*report) {
      // Rows keyed by method; cells gathered across reports.
      json merged = {{"format", std::string(crv::kReportFormat)}, {"datasets", json::array()}, {"sources", json::array()}};
      std::map<std::string, json> rows;
      std::vector<std::string> order;
      for (const auto& p : report_in) {
        const auto r = crv::read_json(p);
        merged["sources"].push_back({{"path", p}, {"manifest_hash", r.value("manifest_hash", std::string())}});
        for (const auto& d : r.at("datasets")) {
          if (std::find(merged["datasets"].begin(), merged["datasets"].end(), d) == merged["datasets"].end())
            merged["datasets"].push_back(d);
        }
        for (const auto& row : r.at("rows")) {
          const std::string method = row.at("method").get<std::string>();
          if (!rows.count(method)) {
            rows[method] = {{"paradigm", row.value("paradigm", std::string())}, {"method", method}, {"cells", json::object()}};
            order.push_back(method);
          }
          for (const auto& [k, v] : row.at("cells").items()) rows[method]["cells"][k] = v;
        }
      }
      merged["rows"] = json::array();
      for (const auto& m : order) merged["rows"].push_back(rows[m]);
      merged["manifest_hash"] = crv::json_hash(merged["sources"]);
      write_json_file(report_out, merged);
      if (!report_csv.empty()) {
        std::ostringstream csv;
        csv << "paradigm,method";
        for (const auto& d : merged["datasets"]) {
          const auto name = d.get<std::string>();
          csv << ',' << name << " AUROC," << name << " AUPR," << name << " FPR@95";
        }
        csv << '\n';
        for (const auto& row : merged["rows"]) {
          csv << row["paradigm"].get<std::string>() << ',' << row["method"].get<std::string>();
          for (const auto& d : merged["datasets"]) {
            const auto& cells = row["cells"];
            const auto it = cells.find(d.get<std::string>());
            for (const char* k : {"auroc", "aupr", "fpr_at_95"}) {
              csv << ',';
              if (it != cells.end() && !(*it)[k].is_null()) csv << (*it)[k].get<double>() * 100.0;
            }
          }
          csv << '\n';
        }
        crv::write_text(report_csv, csv.str());
      }
      std::cout << "merged " << report_in.size() << " reports\n";
    } else if (*plot) {
      const auto corpus = crv::read_fingerprints_jsonl(plot_in);
      auto m = manifest_for("plotdata", {{"bins", plot_bins}});
      m.dataset_paths = {plot_in};
      write_json_file(plot_out, crv::plot_data(corpus, plot_bins, m));
      std::cout << "wrote " << plot_out << "\n";
    } else if (*planted) {
      const auto spec = crv::signature_spec_from_json(crv::read_json(planted_spec));
      const auto items = crv::gen_corpus(spec, planted_n, seed, workers);
      crv::write_planted_corpus(items, planted_out, planted_gzip, workers);
      std::size_t pos = 0;
      for (const auto& it : items) pos += static_cast<std::size_t>(it.label);
      std::cout << "wrote " << items.size() << " graphs (" << pos << " incorrect) to " << planted_out << "\n";
    }
  } catch (const crv::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
