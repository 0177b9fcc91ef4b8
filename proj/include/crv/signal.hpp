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

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace crv {

struct TopLogit {
  std::string token;
  double logprob = 0.0;

  friend bool operator==(const TopLogit&, const TopLogit&) = default;
};

// Per-step logit and hidden-state summary captured next to the graph.
// top_logits describe the distribution at the step's final token (usually the
// 20 most likely tokens); token_logprobs cover every generated token of the
// step; hidden_mean is the step-averaged hidden state at one layer.
struct StepSignal {
  std::vector<TopLogit> top_logits;
  std::vector<double> token_logprobs;
  std::optional<std::vector<double>> hidden_mean;

  friend bool operator==(const StepSignal&, const StepSignal&) = default;
};

inline void to_json(nlohmann::json& j, const TopLogit& t) {
  j = nlohmann::json{{"token", t.token}, {"logprob", t.logprob}};
}

inline void from_json(const nlohmann::json& j, TopLogit& t) {
  t.token = j.value("token", std::string());
  t.logprob = j.at("logprob").get<double>();
}

}  // namespace crv
