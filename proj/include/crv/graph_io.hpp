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

// crv-graph/1 wire format:
//
//   {"format": "crv-graph/1",
//    "meta": {"model_name", "num_layers", "attribution_position",
//             "max_feature_nodes", "max_logit_nodes", "logit_cum_prob",
//             "total_active_features"?},
//    "nodes": [{"id", "kind", "layer"?, "pos"?, "feature_id"?,
//               "activation"?, "token"?, "prob"?}],
//    "edges": [{"src", "dst", "w"}]}
//
// Files whose first two bytes are the gzip magic are inflated transparently;
// store() compresses when the path ends in ".gz".

#include <zlib.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "json.hpp"

#include "crv/error.hpp"
#include "crv/graph.hpp"

namespace crv {

inline constexpr std::string_view kGraphFormat = "crv-graph/1";

namespace detail {

inline NodeKind parse_node_kind(std::string_view s) {
  if (s == "token") return NodeKind::Token;
  if (s == "feature") return NodeKind::Feature;
  if (s == "error") return NodeKind::Error;
  if (s == "logit") return NodeKind::Logit;
  throw SchemaError("unknown node kind '" + std::string(s) + "'");
}

// Ids may be written as strings or integers.
inline std::string id_from_json(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw SchemaError("node ids must be strings or integers");
}

template <class T>
std::optional<T> optional_field(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

inline bool has_suffix(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::array<char, 2> magic{};
  in.read(magic.data(), 2);
  const bool gz = in.gcount() == 2 && static_cast<unsigned char>(magic[0]) == 0x1f &&
                  static_cast<unsigned char>(magic[1]) == 0x8b;
  if (!gz) {
    in.clear();
    in.seekg(0);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed on " + path);
    return ss.str();
  }
  in.close();
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::string out;
  std::array<char, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      int code = 0;
      const std::string msg = gzerror(f, &code);
      gzclose(f);
      throw SchemaError("corrupt gzip stream in " + path + ": " + msg);
    }
    if (n == 0) break;
    out.append(buf.data(), static_cast<std::size_t>(n));
  }
  // A truncated stream ends without error from gzread; the JSON parse below
  // then fails and reports it.
  gzclose(f);
  return out;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  if (has_suffix(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot create " + path);
    const int n = bytes.empty() ? 0 : gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int rc = gzclose(f);
    if (n != static_cast<int>(bytes.size()) || rc != Z_OK) throw IoError("write failed on " + path);
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed on " + path);
}

}  // namespace detail

inline nlohmann::json graph_to_json(const AttributionGraph& g) {
  nlohmann::json meta = {{"model_name", g.meta.model_name},
                         {"num_layers", g.meta.num_layers},
                         {"attribution_position", std::string(to_string(g.meta.attribution_position))},
                         {"max_feature_nodes", g.meta.max_feature_nodes},
                         {"max_logit_nodes", g.meta.max_logit_nodes},
                         {"logit_cum_prob", g.meta.logit_cum_prob}};
  if (g.meta.total_active_features) meta["total_active_features"] = *g.meta.total_active_features;
  auto nodes = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    nlohmann::json j = {{"id", n.id}, {"kind", std::string(to_string(n.kind))}};
    if (n.layer) j["layer"] = *n.layer;
    if (n.position) j["pos"] = *n.position;
    if (n.feature_id) j["feature_id"] = *n.feature_id;
    if (n.activation) j["activation"] = *n.activation;
    if (n.token) j["token"] = *n.token;
    if (n.prob) j["prob"] = *n.prob;
    nodes.push_back(std::move(j));
  }
  auto edges = nlohmann::json::array();
  for (const auto& e : g.edges) edges.push_back({{"src", e.src}, {"dst", e.dst}, {"w", e.weight}});
  return {{"format", std::string(kGraphFormat)}, {"meta", std::move(meta)}, {"nodes", std::move(nodes)},
          {"edges", std::move(edges)}};
}

// Decodes and validates. Any structural problem surfaces as SchemaError.
inline AttributionGraph graph_from_json(const nlohmann::json& j) {
  AttributionGraph g;
  try {
    if (!j.is_object()) throw SchemaError("graph document must be a JSON object");
    const auto fmt = j.find("format");
    if (fmt == j.end() || !fmt->is_string()) throw SchemaError("missing \"format\" field");
    if (fmt->get<std::string>() != kGraphFormat)
      throw SchemaError("unsupported format '" + fmt->get<std::string>() + "'");
    const auto& m = j.at("meta");
    g.meta.model_name = m.value("model_name", std::string());
    g.meta.num_layers = m.at("num_layers").get<int>();
    const std::string pos = m.value("attribution_position", std::string("after"));
    if (pos == "before") g.meta.attribution_position = AttributionPosition::Before;
    else if (pos == "after") g.meta.attribution_position = AttributionPosition::After;
    else throw SchemaError("attribution_position must be 'before' or 'after'");
    g.meta.max_feature_nodes = m.value("max_feature_nodes", 4096);
    g.meta.max_logit_nodes = m.value("max_logit_nodes", 10);
    g.meta.logit_cum_prob = m.value("logit_cum_prob", 0.95);
    g.meta.total_active_features = detail::optional_field<int>(m, "total_active_features");

    for (const auto& jn : j.at("nodes")) {
      Node n;
      n.id = detail::id_from_json(jn.at("id"));
      n.kind = detail::parse_node_kind(jn.at("kind").get<std::string>());
      n.layer = detail::optional_field<int>(jn, "layer");
      n.position = detail::optional_field<int>(jn, "pos");
      n.feature_id = detail::optional_field<std::int64_t>(jn, "feature_id");
      n.activation = detail::optional_field<double>(jn, "activation");
      n.token = detail::optional_field<std::string>(jn, "token");
      n.prob = detail::optional_field<double>(jn, "prob");
      g.nodes.push_back(std::move(n));
    }
    for (const auto& je : j.at("edges")) {
      g.edges.push_back(
          {detail::id_from_json(je.at("src")), detail::id_from_json(je.at("dst")), je.at("w").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(e.what());
  }
  validate(g);
  return g;
}

inline AttributionGraph parse_graph(std::string_view text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw SchemaError("malformed or truncated JSON");
  return graph_from_json(j);
}

inline AttributionGraph load_graph(const std::string& path) {
  try {
    return parse_graph(detail::read_file_bytes(path));
  } catch (const SchemaError& e) {
    throw SchemaError(path + ": " + std::string(e.what()).substr(std::string_view("schema error: ").size()));
  }
}

inline void store_graph(const AttributionGraph& g, const std::string& path) {
  detail::write_file_bytes(path, graph_to_json(g).dump());
}

}  // namespace crv
