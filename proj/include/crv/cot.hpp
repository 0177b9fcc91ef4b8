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

// Chain-of-thought handling: step segmentation, programmatic state
// verification, label fusion with first-error truncation, and the prompt
// templates used to elicit and to judge reasoning.

#include <algorithm>
#include <cctype>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crv/error.hpp"
#include "crv/expr.hpp"
#include "crv/signal.hpp"

namespace crv {

enum class TaskKind { Boolean, Arithmetic, External };

enum class ProgLabel { Correct, Incorrect, Unverifiable };
enum class JudgeLabel { Correct, Incorrect, Unparseable };
enum class FinalLabel { Correct, Incorrect };

// How step labels are fused.
//   Intersection: both labelers must agree (synthetic tasks).
//   JudgeOnly:    the judge label is final (externally curated tasks).
//   ProgOnly:     the programmatic label is final (judge offline).
enum class LabelMode { Intersection, JudgeOnly, ProgOnly };

inline std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::Boolean: return "boolean";
    case TaskKind::Arithmetic: return "arithmetic";
    case TaskKind::External: return "external";
  }
  return "?";
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "boolean") return TaskKind::Boolean;
  if (s == "arithmetic") return TaskKind::Arithmetic;
  if (s == "external" || s == "gsm8k") return TaskKind::External;
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

inline ExprKind expr_kind(TaskKind t) {
  if (t == TaskKind::External) throw ConfigError("external tasks carry no expression");
  return t == TaskKind::Boolean ? ExprKind::Boolean : ExprKind::Arithmetic;
}

inline std::string_view to_string(ProgLabel l) {
  switch (l) {
    case ProgLabel::Correct: return "correct";
    case ProgLabel::Incorrect: return "incorrect";
    case ProgLabel::Unverifiable: return "unverifiable";
  }
  return "?";
}

inline std::string_view to_string(JudgeLabel l) {
  switch (l) {
    case JudgeLabel::Correct: return "correct";
    case JudgeLabel::Incorrect: return "incorrect";
    case JudgeLabel::Unparseable: return "unparseable";
  }
  return "?";
}

inline std::string_view to_string(FinalLabel l) {
  return l == FinalLabel::Correct ? "correct" : "incorrect";
}

inline std::string_view to_string(LabelMode m) {
  switch (m) {
    case LabelMode::Intersection: return "intersection";
    case LabelMode::JudgeOnly: return "judge_only";
    case LabelMode::ProgOnly: return "prog_only";
  }
  return "?";
}

inline JudgeLabel parse_judge_label(std::string_view s) {
  if (s == "correct") return JudgeLabel::Correct;
  if (s == "incorrect") return JudgeLabel::Incorrect;
  return JudgeLabel::Unparseable;
}

inline FinalLabel parse_final_label(std::string_view s) {
  if (s == "correct") return FinalLabel::Correct;
  if (s == "incorrect") return FinalLabel::Incorrect;
  throw SchemaError("final_label must be 'correct' or 'incorrect', got '" + std::string(s) + "'");
}

struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct Step {
  int index = 0;  // 1-based, contiguous within the segmented trace
  std::string text;
  CharSpan span;
  bool conclusion = false;
  // The model's restatement of the whole expression after this step, when the
  // runner elicited one.
  std::optional<std::string> reduced_text;
  std::optional<ProgLabel> prog_label;
  std::optional<JudgeLabel> judge_label;
  std::optional<FinalLabel> final_label;
};

struct CotTrace {
  std::string problem_id;
  TaskKind task = TaskKind::Arithmetic;
  std::optional<int> difficulty_n;
  std::optional<Expr> original_expr;
  std::string question;  // External tasks
  std::string prompt_text;
  std::string raw_cot_text;
  std::vector<Step> steps;
};

// ---------------------------------------------------------------------------
// Segmentation

namespace detail {

struct Line {
  std::size_t begin;  // offset of first character
  std::size_t end;    // offset one past the last non-space character
  std::size_t first;  // offset of first non-space character (== end if blank)
};

inline std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t stop = text.find('\n', start);
    if (stop == std::string_view::npos) stop = text.size();
    std::size_t first = start;
    while (first < stop && std::isspace(static_cast<unsigned char>(text[first]))) ++first;
    std::size_t end = stop;
    while (end > first && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
    lines.push_back({start, end, first});
    if (stop == text.size()) break;
    start = stop + 1;
  }
  return lines;
}

inline bool is_numbered(std::string_view text, const Line& l) {
  std::size_t i = l.first;
  const std::size_t digits = i;
  while (i < l.end && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
  return i > digits && i < l.end && text[i] == '.';
}

inline bool is_bullet(std::string_view text, const Line& l) {
  if (l.first >= l.end) return false;
  const char c = text[l.first];
  if (c != '*' && c != '-') return false;
  return l.first + 1 == l.end || std::isspace(static_cast<unsigned char>(text[l.first + 1]));
}

inline bool looks_like_conclusion(std::string_view text, const Line& l) {
  static const std::regex kConclusion(
      R"(^(the final (answer|result)|therefore|thus|hence|so,? the (final )?(answer|result)))",
      std::regex::icase);
  const std::string line(text.substr(l.first, l.end - l.first));
  return std::regex_search(line, kConclusion);
}

}  // namespace detail

// Splits raw CoT text into steps. A step starts at a line of the form
// "<digits>." (after optional indentation); bullet and other lines attach to
// the step above them. Text before the first numbered line is preamble and
// belongs to no step. After the last numbered line, the first non-bullet
// line that either follows a blank line or opens with a conclusion phrase
// ("The final answer ...", "Therefore ...") starts a separate conclusion step
// that runs to the end of the text.
inline std::vector<Step> segment_steps(std::string_view raw) {
  const auto lines = detail::split_lines(raw);
  std::size_t last_numbered = lines.size();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::is_numbered(raw, lines[i])) last_numbered = i;
  }
  if (last_numbered == lines.size()) throw NoStepsFound();

  std::vector<Step> steps;
  auto open_step = [&](const detail::Line& l, bool conclusion) {
    Step s;
    s.index = static_cast<int>(steps.size()) + 1;
    s.span = {l.first, l.end};
    s.conclusion = conclusion;
    steps.push_back(std::move(s));
  };

  bool previous_blank = false;
  bool in_conclusion = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& l = lines[i];
    const bool blank = l.first == l.end;
    if (blank) {
      previous_blank = true;
      continue;
    }
    if (detail::is_numbered(raw, l)) {
      open_step(l, false);
    } else if (!steps.empty()) {
      const bool after_last = i > last_numbered;
      if (after_last && !in_conclusion && !detail::is_bullet(raw, l) &&
          (previous_blank || detail::looks_like_conclusion(raw, l))) {
        in_conclusion = true;
        open_step(l, true);
      } else {
        steps.back().span.end = l.end;
      }
    }
    previous_blank = false;
  }
  for (auto& s : steps) s.text = std::string(raw.substr(s.span.begin, s.span.end - s.span.begin));
  return steps;
}

// ---------------------------------------------------------------------------
// Programmatic verification

namespace detail {

inline std::string strip_decoration(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  auto junk = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '`' || c == '"';
  };
  while (b < e && junk(s[b])) ++b;
  while (e > b && (junk(s[e - 1]) || s[e - 1] == '.')) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

// Correct iff the reduced expression still evaluates to the value of the
// original; Unverifiable if the text does not parse.
inline ProgLabel verify_state(const Expr& original, std::string_view reduced_text) {
  try {
    const Expr reduced = parse(detail::strip_decoration(reduced_text), original.kind());
    return evaluate(reduced) == evaluate(original) ? ProgLabel::Correct : ProgLabel::Incorrect;
  } catch (const ParseError&) {
    return ProgLabel::Unverifiable;
  }
}

// The value a conclusion sentence commits to: the last truth literal (boolean)
// or the last signed integer (arithmetic) in the text.
inline std::optional<Value> extract_final_value(std::string_view text, ExprKind kind) {
  const std::string s(text);
  static const std::regex kTruth(R"(\b(True|False|true|false|TRUE|FALSE)\b)");
  static const std::regex kNumber(R"((^|[^0-9])(-?\s?[0-9]+))");
  std::optional<Value> found;
  const std::regex& re = kind == ExprKind::Boolean ? kTruth : kNumber;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    if (kind == ExprKind::Boolean) {
      found = Value((*it)[1].str()[0] == 'T' || (*it)[1].str()[0] == 't');
    } else {
      std::string digits = (*it)[2].str();
      digits.erase(std::remove(digits.begin(), digits.end(), ' '), digits.end());
      found = Value(BigInt(digits));
    }
  }
  return found;
}

inline ProgLabel verify_conclusion(const Expr& original, std::string_view text) {
  const auto v = extract_final_value(text, original.kind());
  if (!v) return ProgLabel::Unverifiable;
  return *v == evaluate(original) ? ProgLabel::Correct : ProgLabel::Incorrect;
}

// Fills prog_label for every step of a synthetic trace: numbered steps are
// checked through their reduced expression, the conclusion through its stated
// value. Steps without a reduced expression are Unverifiable.
inline void apply_programmatic_labels(CotTrace& trace) {
  if (!trace.original_expr) return;
  for (auto& s : trace.steps) {
    if (s.conclusion) s.prog_label = verify_conclusion(*trace.original_expr, s.text);
    else if (s.reduced_text) s.prog_label = verify_state(*trace.original_expr, *s.reduced_text);
    else s.prog_label = ProgLabel::Unverifiable;
  }
}

// ---------------------------------------------------------------------------
// Label fusion

inline std::optional<FinalLabel> fuse(const Step& s, LabelMode mode) {
  auto from_prog = [](std::optional<ProgLabel> p) -> std::optional<FinalLabel> {
    if (p == ProgLabel::Correct) return FinalLabel::Correct;
    if (p == ProgLabel::Incorrect) return FinalLabel::Incorrect;
    return std::nullopt;
  };
  auto from_judge = [](std::optional<JudgeLabel> j) -> std::optional<FinalLabel> {
    if (j == JudgeLabel::Correct) return FinalLabel::Correct;
    if (j == JudgeLabel::Incorrect) return FinalLabel::Incorrect;
    return std::nullopt;
  };
  switch (mode) {
    case LabelMode::ProgOnly: return from_prog(s.prog_label);
    case LabelMode::JudgeOnly: return from_judge(s.judge_label);
    case LabelMode::Intersection: {
      const auto p = from_prog(s.prog_label);
      const auto j = from_judge(s.judge_label);
      if (p && j && *p == *j) return p;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

inline LabelMode default_label_mode(TaskKind task) {
  return task == TaskKind::External ? LabelMode::JudgeOnly : LabelMode::Intersection;
}

// Sets final_label where the labelers agree, then drops every step after the
// first step whose final label is Incorrect. Steps before the cut that lack a
// final label stay in the trace (for auditing) but are not emitted. Original
// step indices are preserved.
inline CotTrace finalize_labels(CotTrace trace, LabelMode mode) {
  for (auto& s : trace.steps) s.final_label = fuse(s, mode);
  const auto cut = std::find_if(trace.steps.begin(), trace.steps.end(), [](const Step& s) {
    return s.final_label == FinalLabel::Incorrect;
  });
  if (cut != trace.steps.end()) trace.steps.erase(cut + 1, trace.steps.end());
  return trace;
}

inline CotTrace finalize_labels(CotTrace trace) {
  const LabelMode mode = default_label_mode(trace.task);
  return finalize_labels(std::move(trace), mode);
}

inline std::vector<Step> emitted_steps(const CotTrace& trace) {
  std::vector<Step> out;
  for (const auto& s : trace.steps) {
    if (s.final_label) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompts

namespace detail {

inline constexpr std::string_view kBeginSystem =
    "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n\n";
inline constexpr std::string_view kToUser =
    "<|eot_id|><|start_header_id|>user<|end_header_id|>\n\n";
inline constexpr std::string_view kToAssistant =
    "<|eot_id|><|start_header_id|>assistant<|end_header_id|>\n\n";

inline std::string chat(std::string_view system, std::string_view user) {
  std::string out;
  out += kBeginSystem;
  out += system;
  out += kToUser;
  out += user;
  out += kToAssistant;
  return out;
}

}  // namespace detail

inline std::string_view generation_instruction(TaskKind task) {
  switch (task) {
    case TaskKind::Boolean: return "Evaluate the boolean expression below.";
    case TaskKind::Arithmetic: return "Evaluate the arithmetic expression below.";
    case TaskKind::External: return "Solve the following math problem step by step.";
  }
  return "";
}

// Chat-formatted generation prompt; expressions are rendered spaced.
inline std::string build_prompt(TaskKind task, const Expr& expr) {
  if (task == TaskKind::External || expr_kind(task) != expr.kind()) {
    throw ConfigError("build_prompt: expression does not match task");
  }
  return detail::chat(generation_instruction(task), render(expr, RenderStyle::Spaced));
}

inline std::string build_prompt(TaskKind task, std::string_view question) {
  if (task != TaskKind::External) throw ConfigError("build_prompt: synthetic tasks take an expression");
  return detail::chat(generation_instruction(task), question);
}

enum class JudgeTemplate { Boolean, Arithmetic, Gsm8k };

inline JudgeTemplate judge_template_for(TaskKind task) {
  switch (task) {
    case TaskKind::Boolean: return JudgeTemplate::Boolean;
    case TaskKind::Arithmetic: return JudgeTemplate::Arithmetic;
    case TaskKind::External: return JudgeTemplate::Gsm8k;
  }
  return JudgeTemplate::Gsm8k;
}

inline std::string_view to_string(JudgeTemplate t) {
  switch (t) {
    case JudgeTemplate::Boolean: return "boolean";
    case JudgeTemplate::Arithmetic: return "arithmetic";
    case JudgeTemplate::Gsm8k: return "gsm8k";
  }
  return "?";
}

inline JudgeTemplate parse_judge_template(std::string_view s) {
  if (s == "boolean") return JudgeTemplate::Boolean;
  if (s == "arithmetic") return JudgeTemplate::Arithmetic;
  if (s == "gsm8k") return JudgeTemplate::Gsm8k;
  throw ConfigError("unknown judge template '" + std::string(s) + "'");
}

struct JudgePrompt {
  std::string system;
  std::string user;

  std::string chat() const { return detail::chat(system, user); }
};

inline JudgePrompt build_judge_prompt(JudgeTemplate tmpl, std::string_view problem,
                                      std::string_view correct_value, std::string_view context,
                                      std::string_view step) {
  static constexpr std::string_view kRespond =
      "Respond with exactly one of the following:\n";
  static constexpr std::string_view kStartWith =
      "Your response should start with either \"CORRECT\" or \"INCORRECT\" followed by a brief "
      "explanation.";
  const std::string ctx = context.empty() ? std::string("(none)") : std::string(context);

  JudgePrompt p;
  std::string& u = p.user;
  switch (tmpl) {
    case JudgeTemplate::Boolean:
      p.system =
          "You are an expert in logical reasoning and boolean algebra. You evaluate the "
          "correctness of reasoning steps in boolean expression evaluation with high precision.";
      u += "Evaluate this reasoning step for logical correctness:\n\n";
      u += "Original Boolean Expression: " + std::string(problem) + "\n";
      u += "Correct Truth Value: " + std::string(correct_value) + "\n\n";
      u += "Context (previous steps):\n" + ctx + "\n\n";
      u += "Step to evaluate: " + std::string(step) + "\n\n";
      u += "Evaluation criteria:\n";
      u += "- Is the boolean operation applied correctly?\n";
      u += "- Does the step follow proper order of operations?\n";
      u += "- Are the truth values computed accurately?\n";
      u += "- Is the reasoning logically sound?\n\n";
      u += kRespond;
      u += "- CORRECT: if the step is logically sound and mathematically accurate\n";
      u += "- INCORRECT: if the step contains logical errors, mathematical mistakes, or invalid "
           "reasoning\n\n";
      u += kStartWith;
      break;
    case JudgeTemplate::Arithmetic:
      p.system =
          "You are an expert in mathematical reasoning and arithmetic operations. You evaluate "
          "the correctness of reasoning steps in arithmetic expression evaluation with high "
          "precision.";
      u += "Evaluate this reasoning step for mathematical correctness:\n\n";
      u += "Original Arithmetic Expression: " + std::string(problem) + "\n";
      u += "Correct Value: " + std::string(correct_value) + "\n\n";
      u += "Context (previous steps):\n" + ctx + "\n\n";
      u += "Step to evaluate: " + std::string(step) + "\n\n";
      u += "Evaluation criteria:\n";
      u += "- Are the arithmetic operations applied correctly?\n";
      u += "- Does the step follow proper order of operations (PEMDAS/BODMAS)?\n";
      u += "- Are the numerical computations accurate?\n";
      u += "- Is the mathematical reasoning sound?\n\n";
      u += kRespond;
      u += "- CORRECT: if the step is mathematically sound and computationally accurate\n";
      u += "- INCORRECT: if the step contains mathematical errors, computational mistakes, or "
           "invalid reasoning\n\n";
      u += kStartWith;
      break;
    case JudgeTemplate::Gsm8k:
      p.system =
          "You are an expert in mathematical word problems and quantitative reasoning. Your "
          "purpose is to evaluate a single reasoning step taken to solve a multi-step word "
          "problem. You must be precise, focusing only on the provided step and its "
          "relationship to the problem and previously established facts.";
      u += "Your task is to evaluate the provided reasoning step for logical and mathematical "
           "correctness.\n\n";
      u += "Original Math Problem: " + std::string(problem) + "\n";
      u += "Correct Final Answer: " + std::string(correct_value) + "\n\n";
      u += "Context (previous steps):\n" + ctx + "\n\n";
      u += "Step to evaluate: " + std::string(step) + "\n\n";
      u += "Evaluation criteria:\n";
      u += "- Does the step correctly extract and interpret information from the 'Original "
           "Problem' or the 'Context'?\n";
      u += "- Is it using the right numbers for the right concepts?\n";
      u += "- Is the chosen mathematical operation (e.g., addition, subtraction) the correct one "
           "to achieve the step's goal, based on the narrative of the 'Original Problem'?\n";
      u += "- Is the arithmetic in the step performed correctly?\n";
      u += "- Is the mathematical reasoning sound?\n";
      u += "- Is the step logically consistent with the problem and previous steps?\n";
      u += "- The following types of steps do not contain an error and must be classified as "
           "CORRECT:\n";
      u += "  - A simple, factually accurate restatement of information from the problem or "
           "context.\n";
      u += "  - A non-substantive introductory or conversational phrase (e.g., \"Let's solve "
           "this step by step\", \"First, we need to find...\").\n\n";
      u += kRespond;
      u += "- CORRECT: if the step is mathematically sound and computationally accurate\n";
      u += "- INCORRECT: if the step contains mathematical errors, computational mistakes, or "
           "invalid reasoning\n\n";
      u += kStartWith;
      break;
  }
  return p;
}

// Leading word of the reply, case-insensitive after whitespace.
inline JudgeLabel parse_judge_reply(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size() && std::isspace(static_cast<unsigned char>(reply[i]))) ++i;
  std::size_t j = i;
  while (j < reply.size() && std::isalpha(static_cast<unsigned char>(reply[j]))) ++j;
  const std::string_view word = reply.substr(i, j - i);
  if (detail::iequals(word, "incorrect")) return JudgeLabel::Incorrect;
  if (detail::iequals(word, "correct")) return JudgeLabel::Correct;
  return JudgeLabel::Unparseable;
}

// ---------------------------------------------------------------------------
// Dataset records (one JSON object per emitted step)

struct StepRecord {
  std::string problem_id;
  std::string task;
  std::optional<int> difficulty_n;
  int step_index = 0;
  std::string step_text;
  FinalLabel final_label = FinalLabel::Correct;
  std::string graph_path;
  StepSignal signal;
  std::string label_source;
};

inline nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j;
  j["problem_id"] = r.problem_id;
  j["task"] = r.task;
  j["difficulty_n"] = r.difficulty_n ? nlohmann::json(*r.difficulty_n) : nlohmann::json(nullptr);
  j["step_index"] = r.step_index;
  j["step_text"] = r.step_text;
  j["final_label"] = to_string(r.final_label);
  j["graph_path"] = r.graph_path;
  j["top_logits"] = r.signal.top_logits;
  j["token_logprobs"] = r.signal.token_logprobs;
  j["hidden_mean"] = r.signal.hidden_mean ? nlohmann::json(*r.signal.hidden_mean)
                                          : nlohmann::json(nullptr);
  if (!r.label_source.empty()) j["label_source"] = r.label_source;
  return j;
}

inline StepRecord step_record_from_json(const nlohmann::json& j) {
  try {
    StepRecord r;
    r.problem_id = j.at("problem_id").is_string() ? j.at("problem_id").get<std::string>()
                                                  : j.at("problem_id").dump();
    r.task = j.value("task", std::string("external"));
    if (j.contains("difficulty_n") && !j["difficulty_n"].is_null())
      r.difficulty_n = j["difficulty_n"].get<int>();
    r.step_index = j.at("step_index").get<int>();
    r.step_text = j.value("step_text", std::string());
    r.final_label = parse_final_label(j.at("final_label").get<std::string>());
    if (j.contains("graph_path") && !j["graph_path"].is_null())
      r.graph_path = j["graph_path"].get<std::string>();
    if (j.contains("top_logits")) r.signal.top_logits = j["top_logits"].get<std::vector<TopLogit>>();
    if (j.contains("token_logprobs"))
      r.signal.token_logprobs = j["token_logprobs"].get<std::vector<double>>();
    if (j.contains("hidden_mean") && !j["hidden_mean"].is_null())
      r.signal.hidden_mean = j["hidden_mean"].get<std::vector<double>>();
    r.label_source = j.value("label_source", std::string());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("step record: ") + e.what());
  }
}

// Records for every emitted step of a finalized trace. Per-step graph paths
// and signals are attached by the caller.
inline std::vector<StepRecord> to_records(const CotTrace& trace, LabelMode mode) {
  std::vector<StepRecord> out;
  for (const auto& s : emitted_steps(trace)) {
    StepRecord r;
    r.problem_id = trace.problem_id;
    r.task = std::string(to_string(trace.task));
    r.difficulty_n = trace.difficulty_n;
    r.step_index = s.index;
    r.step_text = s.text;
    r.final_label = *s.final_label;
    r.label_source = std::string(to_string(mode));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace crv
