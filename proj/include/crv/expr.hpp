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

// Boolean and integer-arithmetic expressions: generation, parsing, rendering
// and exact evaluation. This is the ground truth every synthetic label is
// checked against.
//
// Precedence used by parse():
//   boolean:     not  >  and  >  or
//   arithmetic:  unary -  >  *  >  + and binary -
// Binary operators are left-associative; parentheses override.

#include <boost/multiprecision/cpp_int.hpp>

#include <cctype>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "crv/error.hpp"
#include "crv/random.hpp"

namespace crv {

using BigInt = boost::multiprecision::cpp_int;

enum class ExprKind { Boolean, Arithmetic };

enum class Op { And, Or, Not, Add, Sub, Mul, Neg };

enum class RenderStyle { Spaced, Compact };

inline std::string_view to_string(ExprKind kind) {
  return kind == ExprKind::Boolean ? "boolean" : "arithmetic";
}

inline bool is_unary(Op op) { return op == Op::Not || op == Op::Neg; }

inline std::string_view op_symbol(Op op) {
  switch (op) {
    case Op::And: return "and";
    case Op::Or: return "or";
    case Op::Not: return "not";
    case Op::Add: return "+";
    case Op::Sub: return "-";
    case Op::Mul: return "*";
    case Op::Neg: return "-";
  }
  return "?";
}

// Result of evaluation: a truth value or an exact integer.
class Value {
 public:
  Value(bool truth) : v_(truth) {}  // NOLINT(google-explicit-constructor)
  Value(BigInt number) : v_(std::move(number)) {}  // NOLINT
  Value(long long number) : v_(BigInt(number)) {}  // NOLINT
  Value(int number) : v_(BigInt(number)) {}        // NOLINT

  bool is_truth() const { return std::holds_alternative<bool>(v_); }
  bool truth() const { return std::get<bool>(v_); }
  const BigInt& number() const { return std::get<BigInt>(v_); }

  std::string to_string() const {
    if (is_truth()) return truth() ? "True" : "False";
    return number().str();
  }

  friend bool operator==(const Value& a, const Value& b) { return a.v_ == b.v_; }

 private:
  std::variant<bool, BigInt> v_;
};

struct ExprNode;

// Immutable expression tree. Copies share structure.
class Expr {
 public:
  enum class Shape { Literal, Unary, Binary };

  static Expr literal(Value value);
  static Expr unary(Op op, Expr child);
  static Expr binary(Op op, Expr lhs, Expr rhs);

  ExprKind kind() const;
  Shape shape() const;
  Op op() const;
  const Value& value() const;
  const Expr& child() const;
  const Expr& lhs() const;
  const Expr& rhs() const;

  friend bool operator==(const Expr& a, const Expr& b);

 private:
  explicit Expr(std::shared_ptr<const ExprNode> node) : node_(std::move(node)) {}
  std::shared_ptr<const ExprNode> node_;
};

struct ExprNode {
  ExprKind kind;
  Expr::Shape shape;
  Op op;
  Value value;
  std::vector<Expr> children;
};

inline Expr Expr::literal(Value value) {
  const ExprKind kind = value.is_truth() ? ExprKind::Boolean : ExprKind::Arithmetic;
  return Expr(std::make_shared<const ExprNode>(
      ExprNode{kind, Shape::Literal, Op::Add, std::move(value), {}}));
}

inline Expr Expr::unary(Op op, Expr child) {
  const ExprKind kind = op == Op::Not ? ExprKind::Boolean : ExprKind::Arithmetic;
  return Expr(std::make_shared<const ExprNode>(
      ExprNode{kind, Shape::Unary, op, Value(false), {std::move(child)}}));
}

inline Expr Expr::binary(Op op, Expr lhs, Expr rhs) {
  const ExprKind kind =
      (op == Op::And || op == Op::Or) ? ExprKind::Boolean : ExprKind::Arithmetic;
  return Expr(std::make_shared<const ExprNode>(ExprNode{
      kind, Shape::Binary, op, Value(false), {std::move(lhs), std::move(rhs)}}));
}

inline ExprKind Expr::kind() const { return node_->kind; }
inline Expr::Shape Expr::shape() const { return node_->shape; }
inline Op Expr::op() const { return node_->op; }
inline const Value& Expr::value() const { return node_->value; }
inline const Expr& Expr::child() const { return node_->children.at(0); }
inline const Expr& Expr::lhs() const { return node_->children.at(0); }
inline const Expr& Expr::rhs() const { return node_->children.at(1); }

inline bool operator==(const Expr& a, const Expr& b) {
  if (a.node_ == b.node_) return true;
  if (a.shape() != b.shape()) return false;
  switch (a.shape()) {
    case Expr::Shape::Literal:
      return a.value() == b.value();
    case Expr::Shape::Unary:
      return a.op() == b.op() && a.child() == b.child();
    case Expr::Shape::Binary:
      return a.op() == b.op() && a.lhs() == b.lhs() && a.rhs() == b.rhs();
  }
  return false;
}

inline int operator_count(const Expr& e) {
  switch (e.shape()) {
    case Expr::Shape::Literal: return 0;
    case Expr::Shape::Unary: return 1 + operator_count(e.child());
    case Expr::Shape::Binary: return 1 + operator_count(e.lhs()) + operator_count(e.rhs());
  }
  return 0;
}

inline Value evaluate(const Expr& e) {
  switch (e.shape()) {
    case Expr::Shape::Literal:
      return e.value();
    case Expr::Shape::Unary: {
      const Value v = evaluate(e.child());
      if (e.op() == Op::Not) return Value(!v.truth());
      return Value(BigInt(-v.number()));
    }
    case Expr::Shape::Binary: {
      const Value a = evaluate(e.lhs());
      const Value b = evaluate(e.rhs());
      switch (e.op()) {
        case Op::And: return Value(a.truth() && b.truth());
        case Op::Or: return Value(a.truth() || b.truth());
        case Op::Add: return Value(BigInt(a.number() + b.number()));
        case Op::Sub: return Value(BigInt(a.number() - b.number()));
        case Op::Mul: return Value(BigInt(a.number() * b.number()));
        default: break;
      }
    }
  }
  throw Error("evaluate: malformed expression");
}

namespace detail {

inline void render_into(const Expr& e, RenderStyle style, std::string& out) {
  const bool spaced = style == RenderStyle::Spaced;
  switch (e.shape()) {
    case Expr::Shape::Literal:
      out += e.value().to_string();
      return;
    case Expr::Shape::Unary:
      out += spaced ? "( " : "(";
      out += op_symbol(e.op());
      if (spaced || e.op() == Op::Not) out += ' ';
      render_into(e.child(), style, out);
      out += spaced ? " )" : ")";
      return;
    case Expr::Shape::Binary: {
      const bool word = e.kind() == ExprKind::Boolean;
      out += spaced ? "( " : "(";
      render_into(e.lhs(), style, out);
      if (spaced || word) out += ' ';
      out += op_symbol(e.op());
      if (spaced || word) out += ' ';
      render_into(e.rhs(), style, out);
      out += spaced ? " )" : ")";
      return;
    }
  }
}

}  // namespace detail

// Fully parenthesized text. Spaced: "( 7 * ( 5 + 9 ) )"; compact: "(7*(5+9))".
inline std::string render(const Expr& e, RenderStyle style = RenderStyle::Spaced) {
  std::string out;
  detail::render_into(e, style, out);
  return out;
}

namespace detail {

enum class Tok { LParen, RParen, Plus, Minus, Star, Number, True, False, And, Or, Not, End };

struct Token {
  Tok type;
  std::size_t pos;
  std::string text;
};

inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  }
  return true;
}

inline std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (c == '(') { out.push_back({Tok::LParen, start, "("}); ++i; continue; }
    if (c == ')') { out.push_back({Tok::RParen, start, ")"}); ++i; continue; }
    if (c == '+') { out.push_back({Tok::Plus, start, "+"}); ++i; continue; }
    if (c == '-') { out.push_back({Tok::Minus, start, "-"}); ++i; continue; }
    if (c == '*') { out.push_back({Tok::Star, start, "*"}); ++i; continue; }
    // U+00D7 multiplication sign, U+2212 minus sign.
    if (s.substr(i, 2) == "\xC3\x97") { out.push_back({Tok::Star, start, "*"}); i += 2; continue; }
    if (s.substr(i, 3) == "\xE2\x88\x92") { out.push_back({Tok::Minus, start, "-"}); i += 3; continue; }
    if (std::isdigit(c)) {
      while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
      out.push_back({Tok::Number, start, std::string(s.substr(start, i - start))});
      continue;
    }
    if (std::isalpha(c)) {
      while (i < s.size() && std::isalpha(static_cast<unsigned char>(s[i]))) ++i;
      const std::string_view word = s.substr(start, i - start);
      Tok t;
      if (iequals(word, "true")) t = Tok::True;
      else if (iequals(word, "false")) t = Tok::False;
      else if (iequals(word, "and")) t = Tok::And;
      else if (iequals(word, "or")) t = Tok::Or;
      else if (iequals(word, "not")) t = Tok::Not;
      else throw ParseError(start, "operator, literal or parenthesis");
      out.push_back({t, start, std::string(word)});
      continue;
    }
    throw ParseError(start, "operator, literal or parenthesis");
  }
  out.push_back({Tok::End, s.size(), ""});
  return out;
}

class Parser {
 public:
  Parser(std::string_view text, ExprKind kind) : tokens_(tokenize(text)), kind_(kind) {}

  Expr parse() {
    Expr e = kind_ == ExprKind::Boolean ? parse_or() : parse_sum();
    if (peek().type != Tok::End) throw ParseError(peek().pos, "end of expression");
    return e;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& take() { return tokens_[pos_++]; }

  Expr parse_or() {
    Expr e = parse_and();
    while (peek().type == Tok::Or) {
      take();
      e = Expr::binary(Op::Or, e, parse_and());
    }
    return e;
  }

  Expr parse_and() {
    Expr e = parse_not();
    while (peek().type == Tok::And) {
      take();
      e = Expr::binary(Op::And, e, parse_not());
    }
    return e;
  }

  Expr parse_not() {
    if (peek().type == Tok::Not) {
      take();
      return Expr::unary(Op::Not, parse_not());
    }
    const Token& t = peek();
    switch (t.type) {
      case Tok::True: take(); return Expr::literal(Value(true));
      case Tok::False: take(); return Expr::literal(Value(false));
      case Tok::LParen: {
        take();
        Expr inner = parse_or();
        expect(Tok::RParen, "')'");
        return inner;
      }
      default:
        throw ParseError(t.pos, "True, False, 'not' or '('");
    }
  }

  Expr parse_sum() {
    Expr e = parse_product();
    while (peek().type == Tok::Plus || peek().type == Tok::Minus) {
      const Op op = take().type == Tok::Plus ? Op::Add : Op::Sub;
      e = Expr::binary(op, e, parse_product());
    }
    return e;
  }

  Expr parse_product() {
    Expr e = parse_negation();
    while (peek().type == Tok::Star) {
      take();
      e = Expr::binary(Op::Mul, e, parse_negation());
    }
    return e;
  }

  Expr parse_negation() {
    if (peek().type == Tok::Minus) {
      take();
      return Expr::unary(Op::Neg, parse_negation());
    }
    const Token& t = peek();
    switch (t.type) {
      case Tok::Number: take(); return Expr::literal(Value(BigInt(t.text)));
      case Tok::LParen: {
        take();
        Expr inner = parse_sum();
        expect(Tok::RParen, "')'");
        return inner;
      }
      default:
        throw ParseError(t.pos, "integer, '-' or '('");
    }
  }

  void expect(Tok type, const char* what) {
    if (peek().type != type) throw ParseError(peek().pos, what);
    take();
  }

  std::vector<Token> tokens_;
  ExprKind kind_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Parses model-written or rendered expression text. Throws ParseError with the
// byte offset of the offending token.
inline Expr parse(std::string_view text, ExprKind kind) {
  return detail::Parser(text, kind).parse();
}

// Random expression with exactly n_ops operators.
//
// The operator sequence is drawn uniformly from the kind's alphabet
// ({and, or, not} or {+, -, *, unary -}). One literal is drawn per binary
// operator plus one, then the operators are applied in sequence: a unary
// operator wraps a uniformly chosen pool entry, a binary operator combines two
// distinct uniformly chosen entries (in draw order) into one. The pool always
// ends with a single tree.
inline Expr gen_expression(ExprKind kind, int n_ops, std::uint64_t seed) {
  if (n_ops < 1) throw ConfigError("gen_expression: n_ops must be >= 1");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(n_ops)));

  static constexpr Op kBoolOps[] = {Op::And, Op::Or, Op::Not};
  static constexpr Op kArithOps[] = {Op::Add, Op::Sub, Op::Mul, Op::Neg};
  const bool boolean = kind == ExprKind::Boolean;

  std::vector<Op> ops;
  ops.reserve(static_cast<std::size_t>(n_ops));
  for (int i = 0; i < n_ops; ++i) {
    ops.push_back(boolean ? kBoolOps[rng.uniform_index(3)] : kArithOps[rng.uniform_index(4)]);
  }
  std::size_t binaries = 0;
  for (Op op : ops) binaries += is_unary(op) ? 0 : 1;

  std::vector<Expr> pool;
  pool.reserve(binaries + 1);
  for (std::size_t i = 0; i <= binaries; ++i) {
    if (boolean) pool.push_back(Expr::literal(Value(rng.uniform_index(2) == 1)));
    else pool.push_back(Expr::literal(Value(static_cast<int>(rng.uniform_index(10)))));
  }

  for (Op op : ops) {
    const auto i = static_cast<std::size_t>(rng.uniform_index(pool.size()));
    if (is_unary(op)) {
      pool[i] = Expr::unary(op, pool[i]);
      continue;
    }
    auto j = static_cast<std::size_t>(rng.uniform_index(pool.size() - 1));
    if (j >= i) ++j;
    pool[i] = Expr::binary(op, pool[i], pool[j]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return pool.front();
}

}  // namespace crv
