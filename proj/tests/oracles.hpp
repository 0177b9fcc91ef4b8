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

// Slow reference implementations used by the unit and acceptance tests. None
// of them share code with the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace oracle {

// ---------------------------------------------------------------------------
// Expressions: innermost-parenthesis rewriting over spaced text such as
// "( 7 * ( 5 + 9 ) )". Values are int64 or the words True/False. Returns
// nullopt on anything malformed.

inline std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline bool is_int(const std::string& w) {
  std::size_t i = (w.size() > 1 && w[0] == '-') ? 1 : 0;
  if (i == w.size()) return false;
  for (; i < w.size(); ++i) {
    if (w[i] < '0' || w[i] > '9') return false;
  }
  return true;
}

inline bool is_bool(const std::string& w) { return w == "True" || w == "False"; }

inline std::optional<std::string> apply(const std::vector<std::string>& t) {
  auto b = [](bool v) { return std::string(v ? "True" : "False"); };
  if (t.size() == 1 && (is_int(t[0]) || is_bool(t[0]))) return t[0];
  if (t.size() == 2 && t[0] == "not" && is_bool(t[1])) return b(t[1] == "False");
  if (t.size() == 2 && t[0] == "-" && is_int(t[1])) return std::to_string(-std::stoll(t[1]));
  if (t.size() == 3 && is_bool(t[0]) && is_bool(t[2])) {
    const bool x = t[0] == "True";
    const bool y = t[2] == "True";
    if (t[1] == "and") return b(x && y);
    if (t[1] == "or") return b(x || y);
  }
  if (t.size() == 3 && is_int(t[0]) && is_int(t[2])) {
    const long long x = std::stoll(t[0]);
    const long long y = std::stoll(t[2]);
    if (t[1] == "+") return std::to_string(x + y);
    if (t[1] == "-") return std::to_string(x - y);
    if (t[1] == "*") return std::to_string(x * y);
  }
  return std::nullopt;
}

// One rewrite: the leftmost innermost "( ... )" group is replaced by its
// value. Returns nullopt if the text has no group or the group is malformed.
inline std::optional<std::string> rewrite_once(const std::string& s) {
  const auto close = s.find(')');
  if (close == std::string::npos) return std::nullopt;
  const auto open = s.rfind('(', close);
  if (open == std::string::npos) return std::nullopt;
  const auto v = apply(words(s.substr(open + 1, close - open - 1)));
  if (!v) return std::nullopt;
  return s.substr(0, open) + *v + s.substr(close + 1);
}

inline std::optional<std::string> evaluate(std::string s) {
  while (s.find('(') != std::string::npos || s.find(')') != std::string::npos) {
    auto next = rewrite_once(s);
    if (!next) return std::nullopt;
    s = *next;
  }
  const auto w = words(s);
  if (w.size() != 1 || !(is_int(w[0]) || is_bool(w[0]))) return std::nullopt;
  return w[0];
}

// ---------------------------------------------------------------------------
// Graph paths. Edge lengths are 1/|w|; zero weights carry no path.

struct WEdge {
  int u;
  int v;
  double w;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline bool tie(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b)); }

// Directed betweenness by enumerating every simple path between every
// ordered pair and keeping the shortest ones.
inline std::vector<double> betweenness(int n, const std::vector<WEdge>& edges) {
  std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(n));
  for (const auto& e : edges) {
    if (e.w != 0.0) adj[static_cast<std::size_t>(e.u)].emplace_back(e.v, 1.0 / std::abs(e.w));
  }
  std::vector<double> cb(static_cast<std::size_t>(n), 0.0);
  for (int s = 0; s < n; ++s) {
    for (int t = 0; t < n; ++t) {
      if (s == t) continue;
      std::vector<std::pair<double, std::vector<int>>> paths;
      std::vector<int> stack = {s};
      std::vector<bool> on(static_cast<std::size_t>(n), false);
      on[static_cast<std::size_t>(s)] = true;
      std::function<void(int, double)> dfs = [&](int u, double len) {
        if (u == t) {
          paths.emplace_back(len, stack);
          return;
        }
        for (const auto& [v, l] : adj[static_cast<std::size_t>(u)]) {
          if (on[static_cast<std::size_t>(v)]) continue;
          on[static_cast<std::size_t>(v)] = true;
          stack.push_back(v);
          dfs(v, len + l);
          stack.pop_back();
          on[static_cast<std::size_t>(v)] = false;
        }
      };
      dfs(s, 0.0);
      if (paths.empty()) continue;
      double best = kInf;
      for (const auto& p : paths) best = std::min(best, p.first);
      std::vector<const std::vector<int>*> shortest;
      for (const auto& p : paths) {
        if (tie(p.first, best)) shortest.push_back(&p.second);
      }
      for (const auto* p : shortest) {
        for (std::size_t i = 1; i + 1 < p->size(); ++i)
          cb[static_cast<std::size_t>((*p)[i])] += 1.0 / static_cast<double>(shortest.size());
      }
    }
  }
  return cb;
}

// All-pairs distances (Floyd-Warshall).
inline std::vector<std::vector<double>> all_pairs(int n, const std::vector<WEdge>& edges, bool undirected) {
  std::vector<std::vector<double>> d(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), kInf));
  for (int i = 0; i < n; ++i) d[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 0.0;
  auto relax = [&](int a, int b, double l) {
    auto& x = d[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
    x = std::min(x, l);
  };
  for (const auto& e : edges) {
    if (e.w == 0.0) continue;
    relax(e.u, e.v, 1.0 / std::abs(e.w));
    if (undirected) relax(e.v, e.u, 1.0 / std::abs(e.w));
  }
  for (std::size_t k = 0; k < d.size(); ++k) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t j = 0; j < d.size(); ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    }
  }
  return d;
}

// Weakly connected components by repeated closure; component of each node.
inline std::vector<int> components(int n, const std::vector<WEdge>& edges) {
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  int next = 0;
  for (int s = 0; s < n; ++s) {
    if (comp[static_cast<std::size_t>(s)] >= 0) continue;
    comp[static_cast<std::size_t>(s)] = next;
    bool grew = true;
    while (grew) {
      grew = false;
      for (const auto& e : edges) {
        auto& a = comp[static_cast<std::size_t>(e.u)];
        auto& b = comp[static_cast<std::size_t>(e.v)];
        if (a == next && b < 0) b = next, grew = true;
        if (b == next && a < 0) a = next, grew = true;
      }
    }
    ++next;
  }
  return comp;
}

// ---------------------------------------------------------------------------
// Metrics.

inline double auroc_pairwise(const std::vector<double>& s, const std::vector<int>& y) {
  std::uint64_t wins2 = 0;
  std::uint64_t pos = 0;
  std::uint64_t neg = 0;
  for (int v : y) (v == 1 ? pos : neg)++;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      if (s[i] > s[j]) wins2 += 2;
      else if (s[i] == s[j]) wins2 += 1;
    }
  }
  return static_cast<double>(wins2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
};

// Predict positive when score >= t, for each distinct score t (descending).
inline std::vector<Confusion> threshold_table(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  std::vector<Confusion> out;
  for (double t : thresholds) {
    Confusion c;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] == 1 ? c.tp : c.fp)++;
    }
    out.push_back(c);
  }
  return out;
}

inline double aupr_sweep(const std::vector<double>& s, const std::vector<int>& y) {
  const auto pos = static_cast<std::uint64_t>(std::count(y.begin(), y.end(), 1));
  double ap = 0.0;
  std::uint64_t prev = 0;
  for (const auto& c : threshold_table(s, y)) {
    if (c.tp == prev) continue;
    ap += static_cast<double>(c.tp - prev) / static_cast<double>(pos) * static_cast<double>(c.tp) /
          static_cast<double>(c.tp + c.fp);
    prev = c.tp;
  }
  return ap;
}

inline double fpr95_sweep(const std::vector<double>& s, const std::vector<int>& y) {
  const auto pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const auto neg = static_cast<double>(y.size()) - pos;
  double best = 1.0;
  for (const auto& c : threshold_table(s, y)) {
    if (static_cast<double>(c.tp) / pos >= 0.95) best = std::min(best, static_cast<double>(c.fp) / neg);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Labeling: intersection of the two labelers, then cut after the first
// Incorrect. Labels: 'C', 'I', or '?' (unverifiable / unparseable).

inline std::vector<std::pair<int, char>> emitted_labels(const std::vector<char>& prog, const std::vector<char>& judge) {
  std::vector<std::pair<int, char>> out;
  for (std::size_t i = 0; i < prog.size(); ++i) {
    const bool agree = prog[i] == judge[i] && prog[i] != '?';
    if (!agree) continue;
    out.emplace_back(static_cast<int>(i) + 1, prog[i]);
    if (prog[i] == 'I') break;
  }
  return out;
}

}  // namespace oracle
