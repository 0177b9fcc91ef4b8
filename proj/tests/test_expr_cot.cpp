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

#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "crv/cot.hpp"
#include "crv/expr.hpp"
#include "crv/pipeline.hpp"
#include "oracles.hpp"
#include "trace_gen.hpp"

namespace crv {
namespace {

std::string eval_text(const std::string& s, ExprKind kind) { return evaluate(parse(s, kind)).to_string(); }

TEST(Expr, QuotedResults) {
  EXPECT_EQ(eval_text("(7*((5+9)+7))", ExprKind::Arithmetic), "147");
  EXPECT_EQ(eval_text("((((-3)+(-6))*(9*6))+(-4))", ExprKind::Arithmetic), "-490");
  EXPECT_EQ(eval_text("(-(5+(4*9)))", ExprKind::Arithmetic), "-41");
  EXPECT_EQ(eval_text("(((True or True) and (True and True)) or (True and False))", ExprKind::Boolean), "True");
}

TEST(Expr, ParseShapes) {
  const Expr e = parse("( 7 * ( ( 5 + 9 ) + 7 ) )", ExprKind::Arithmetic);
  ASSERT_EQ(e.shape(), Expr::Shape::Binary);
  EXPECT_EQ(e.op(), Op::Mul);
  EXPECT_EQ(e.lhs().value(), Value(7));

  const Expr r = parse("8*2", ExprKind::Arithmetic);
  EXPECT_EQ(r.op(), Op::Mul);
  EXPECT_EQ(r.lhs().value(), Value(8));
  EXPECT_EQ(r.rhs().value(), Value(2));

  EXPECT_THROW(parse("True and", ExprKind::Boolean), ParseError);
  EXPECT_THROW(parse("8**2", ExprKind::Arithmetic), ParseError);
  EXPECT_THROW(parse("(1 + 2", ExprKind::Arithmetic), ParseError);
}

TEST(Expr, Precedence) {
  EXPECT_EQ(eval_text("not False or True", ExprKind::Boolean), "True");
  EXPECT_EQ(eval_text("True or False and False", ExprKind::Boolean), "True");
  EXPECT_EQ(eval_text("not not True", ExprKind::Boolean), "True");
  EXPECT_EQ(eval_text("2 + 3 * 4", ExprKind::Arithmetic), "14");
  EXPECT_EQ(eval_text("- 3 - 4", ExprKind::Arithmetic), "-7");
  EXPECT_EQ(eval_text("10 - 4 - 3", ExprKind::Arithmetic), "3");
  EXPECT_EQ(eval_text("- -7", ExprKind::Arithmetic), "7");
}

TEST(Expr, Render) {
  const Expr lit = Expr::literal(Value(true));
  EXPECT_EQ(render(lit), "True");
  const Expr e = Expr::binary(Op::Mul, Expr::literal(Value(7)),
                              Expr::binary(Op::Add, Expr::literal(Value(5)), Expr::literal(Value(9))));
  EXPECT_EQ(render(e), "( 7 * ( 5 + 9 ) )");
  EXPECT_EQ(render(e, RenderStyle::Compact), "(7*(5+9))");
  const Expr b = Expr::unary(Op::Not, Expr::binary(Op::And, Expr::literal(Value(true)), Expr::literal(Value(false))));
  EXPECT_EQ(render(b, RenderStyle::Compact), "(not (True and False))");
}

TEST(Expr, GenerationContract) {
  EXPECT_EQ(gen_expression(ExprKind::Boolean, 3, 11), gen_expression(ExprKind::Boolean, 3, 11));
  for (std::uint64_t s = 0; s < 50; ++s) {
    EXPECT_EQ(operator_count(gen_expression(ExprKind::Arithmetic, 5, s)), 5);
    const Expr e = gen_expression(ExprKind::Boolean, 4, s);
    EXPECT_EQ(parse(render(e), ExprKind::Boolean), e);
    EXPECT_EQ(parse(render(e, RenderStyle::Compact), ExprKind::Boolean), e);
  }
  EXPECT_THROW(gen_expression(ExprKind::Arithmetic, 0, 1), ConfigError);
}

TEST(Expr, BooleanSpaceSaturates) {
  std::set<std::string> seen;
  for (std::uint64_t s = 0; s < 20000; ++s) seen.insert(render(gen_expression(ExprKind::Boolean, 3, s)));
  EXPECT_LT(seen.size(), 10000u);
}

TEST(Expr, MatchesRewritingOracle) {
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto kind = s % 2 ? ExprKind::Boolean : ExprKind::Arithmetic;
    const Expr e = gen_expression(kind, 1 + static_cast<int>(s % 7), s);
    const auto expect = oracle::evaluate(render(e));
    ASSERT_TRUE(expect.has_value()) << render(e);
    EXPECT_EQ(evaluate(e).to_string(), *expect) << render(e);
  }
}

TEST(Expr, GenDataset) {
  const auto a = gen_dataset(TaskKind::Arithmetic, {3, 5, 7, 10}, 100, 5);
  EXPECT_EQ(a.items.size(), 400u);
  EXPECT_TRUE(a.warnings.empty());
  std::set<std::string> texts;
  for (const auto& it : a.items) texts.insert(render(*it.expr));
  EXPECT_EQ(texts.size(), 400u);
  const auto b = gen_dataset(TaskKind::Arithmetic, {3, 5, 7, 10}, 100, 5);
  for (std::size_t i = 0; i < a.items.size(); ++i) EXPECT_EQ(to_json(a.items[i]), to_json(b.items[i]));

  const auto small = gen_dataset(TaskKind::Boolean, {3}, 10000, 5, 3);
  EXPECT_LT(small.items.size(), 10000u);
  EXPECT_EQ(small.warnings.size(), 1u);
}

// ---------------------------------------------------------------------------

TEST(Segment, BooleanExample) {
  const std::string raw =
      "To evaluate the boolean expression, we need to follow the order of operations (PEMDAS):\n"
      "1. Evaluate the expressions inside the innermost parentheses:\n"
      "   * (True or True) = True\n"
      "   * (True and True) = True\n"
      "\n"
      "2. Now the expression becomes:\n"
      "   * (True and True) or (True and False)\n"
      "\n"
      "3. Evaluate the expressions inside the parentheses:\n"
      "   * (True and True) = True\n"
      "   * (True and False) = False\n"
      "\n"
      "4. Now the expression becomes:\n"
      "   * True or False\n"
      "\n"
      "5. Evaluate the final expression:\n"
      "   * True or False = True\n"
      "\n"
      "The final answer is True.";
  const auto steps = segment_steps(raw);
  ASSERT_EQ(steps.size(), 6u);
  EXPECT_TRUE(steps.back().conclusion);
  EXPECT_EQ(steps.back().text, "The final answer is True.");
  EXPECT_EQ(steps[4].index, 5);
  EXPECT_EQ(steps[4].text, "5. Evaluate the final expression:\n   * True or False = True");
}

TEST(Segment, Spans) {
  const std::string raw = "Intro\n1. a\n  2. bb\n3. ccc\n";
  const auto steps = segment_steps(raw);
  ASSERT_EQ(steps.size(), 3u);
  EXPECT_EQ(steps[0].span.begin, 6u);
  EXPECT_EQ(steps[0].span.end, 10u);
  EXPECT_EQ(steps[1].span.begin, 13u);
  EXPECT_EQ(steps[1].span.end, 18u);
  EXPECT_EQ(steps[2].span.begin, 19u);
  EXPECT_EQ(steps[2].span.end, 25u);
  EXPECT_FALSE(steps[2].conclusion);
  EXPECT_THROW(segment_steps("hello"), NoStepsFound);
}

TEST(Verify, States) {
  const Expr arith = parse("(3+5)*2", ExprKind::Arithmetic);
  EXPECT_EQ(verify_state(arith, "8*2"), ProgLabel::Correct);
  EXPECT_EQ(verify_state(arith, "8*3"), ProgLabel::Incorrect);
  EXPECT_EQ(verify_state(arith, "8**2"), ProgLabel::Unverifiable);
  const Expr b = parse("( not ( ( False or ( True and False ) ) or ( True or False ) ) )", ExprKind::Boolean);
  EXPECT_EQ(evaluate(b), Value(false));
  EXPECT_EQ(verify_state(b, "(not (False or (True and False)) or (True or False))"), ProgLabel::Incorrect);
  EXPECT_EQ(oracle::evaluate("( ( not ( False or ( True and False ) ) ) or ( True or False ) )"), "True");
  EXPECT_EQ(verify_conclusion(arith, "The final answer is 16."), ProgLabel::Correct);
  EXPECT_EQ(verify_conclusion(parse("-(5+(4*9))", ExprKind::Arithmetic), "so -1 * 41 = -41"), ProgLabel::Correct);
  EXPECT_EQ(verify_conclusion(arith, "no number here"), ProgLabel::Unverifiable);
}

CotTrace trace_with(const std::vector<char>& prog, const std::vector<char>& judge) {
  CotTrace t;
  t.problem_id = "p";
  for (std::size_t i = 0; i < prog.size(); ++i) {
    Step s;
    s.index = static_cast<int>(i) + 1;
    s.prog_label = prog[i] == 'C' ? ProgLabel::Correct : prog[i] == 'I' ? ProgLabel::Incorrect : ProgLabel::Unverifiable;
    s.judge_label = judge[i] == 'C' ? JudgeLabel::Correct : judge[i] == 'I' ? JudgeLabel::Incorrect : JudgeLabel::Unparseable;
    t.steps.push_back(s);
  }
  return t;
}

std::vector<std::pair<int, char>> emitted(const CotTrace& t, LabelMode mode) {
  std::vector<std::pair<int, char>> out;
  for (const auto& s : emitted_steps(finalize_labels(t, mode)))
    out.emplace_back(s.index, *s.final_label == FinalLabel::Correct ? 'C' : 'I');
  return out;
}

TEST(Fuse, IntersectionAndTruncation) {
  using V = std::vector<std::pair<int, char>>;
  EXPECT_EQ(emitted(trace_with({'C', 'C', 'I', 'C'}, {'C', 'C', 'I', 'I'}), LabelMode::Intersection),
            (V{{1, 'C'}, {2, 'C'}, {3, 'I'}}));
  EXPECT_EQ(emitted(trace_with({'C', 'C'}, {'C', 'C'}), LabelMode::Intersection), (V{{1, 'C'}, {2, 'C'}}));
  EXPECT_EQ(emitted(trace_with({'C', '?', 'C'}, {'C', 'C', 'C'}), LabelMode::Intersection), (V{{1, 'C'}, {3, 'C'}}));
  EXPECT_EQ(emitted(trace_with({'C', 'I', 'C'}, {'C', 'C', 'C'}), LabelMode::ProgOnly), (V{{1, 'C'}, {2, 'I'}}));
  EXPECT_EQ(emitted(trace_with({'C', 'I', 'C'}, {'C', 'C', 'C'}), LabelMode::JudgeOnly),
            (V{{1, 'C'}, {2, 'C'}, {3, 'C'}}));
}

TEST(Label, FixtureTrace) {
  const auto j = read_json(std::string(CRV_FIXTURE_DIR) + "/a4_trace.json");
  const auto out = label_trace(trace_from_json(j), LabelMode::Intersection);
  ASSERT_EQ(out.records.size(), 2u);
  EXPECT_EQ(out.records[0].step_index, 1);
  EXPECT_EQ(out.records[0].final_label, FinalLabel::Correct);
  EXPECT_EQ(out.records[1].step_index, 2);
  EXPECT_EQ(out.records[1].final_label, FinalLabel::Incorrect);
  EXPECT_EQ(out.audit.size(), 6u);
  for (const auto& a : out.audit) EXPECT_EQ(a["reason"], "after first incorrect step");

  auto j2 = j;
  j2.erase("judge");
  const auto prog = label_trace(trace_from_json(j2), LabelMode::ProgOnly);
  ASSERT_EQ(prog.records.size(), 2u);
  EXPECT_EQ(prog.records[1].final_label, FinalLabel::Incorrect);
  EXPECT_EQ(prog.records[0].label_source, "prog_only");
}

TEST(Label, AllCorrectTraceEmitsEverything) {
  nlohmann::json j = {{"problem_id", "ok"},
                      {"task", "arithmetic"},
                      {"expr", "( 7 * ( 5 + 9 ) )"},
                      {"raw_cot_text", "1. 5 + 9 = 14, giving 7 * 14\n2. 7 * 14 = 98\nThe final answer is 98."},
                      {"reduced", {"( 7 * 14 )", "98"}},
                      {"judge", {"correct", "correct", "correct"}}};
  const auto out = label_trace(trace_from_json(j), LabelMode::Intersection);
  ASSERT_EQ(out.records.size(), 3u);
  EXPECT_TRUE(out.audit.empty());
}

TEST(Label, CallbackJudgeSeesContext) {
  const auto j = read_json(std::string(CRV_FIXTURE_DIR) + "/a4_trace.json");
  auto in = trace_from_json(j);
  in.judge.reset();
  std::vector<std::string> contexts;
  const auto out = label_trace(std::move(in), LabelMode::Intersection,
                               [&](const CotTrace&, const Step& s, const std::string& context) {
                                 contexts.push_back(context);
                                 return s.index == 2 ? JudgeLabel::Incorrect : JudgeLabel::Correct;
                               });
  ASSERT_EQ(contexts.size(), 8u);
  EXPECT_TRUE(contexts[0].empty());
  EXPECT_EQ(contexts[1].rfind("1. Evaluate", 0), 0u);
  EXPECT_EQ(out.records.size(), 2u);
}

TEST(Label, GeneratedTracesMatchHandRule) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto g = testgen::make_trace(seed);
    const auto out = label_trace(trace_from_json(g.trace), LabelMode::Intersection);
    std::vector<std::pair<int, char>> got;
    for (const auto& r : out.records) got.emplace_back(r.step_index, r.final_label == FinalLabel::Correct ? 'C' : 'I');
    EXPECT_EQ(got, g.expected) << g.trace.dump();
  }
}

TEST(Prompt, Templates) {
  const Expr e = parse("(7*(5+9))", ExprKind::Arithmetic);
  const auto a = build_prompt(TaskKind::Arithmetic, e);
  EXPECT_NE(a.find("Evaluate the arithmetic expression below."), std::string::npos);
  EXPECT_NE(a.find("( 7 * ( 5 + 9 ) )"), std::string::npos);
  EXPECT_NE(build_prompt(TaskKind::Boolean, Expr::literal(Value(true))).find("Evaluate the boolean expression below."),
            std::string::npos);
  EXPECT_NE(build_prompt(TaskKind::External, "Q?").find("Solve the following math problem step by step."),
            std::string::npos);
  EXPECT_EQ(a.rfind("<|begin_of_text|>", 0), 0u);
}

TEST(Prompt, JudgeReplies) {
  EXPECT_EQ(parse_judge_reply("CORRECT: the step is sound"), JudgeLabel::Correct);
  EXPECT_EQ(parse_judge_reply("  incorrect because"), JudgeLabel::Incorrect);
  EXPECT_EQ(parse_judge_reply("INCORRECT because the sum is wrong"), JudgeLabel::Incorrect);
  EXPECT_EQ(parse_judge_reply("maybe"), JudgeLabel::Unparseable);
}

}  // namespace
}  // namespace crv
