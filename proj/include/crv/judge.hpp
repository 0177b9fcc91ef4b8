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

// Step judge over an OpenAI-compatible chat-completions endpoint.
//
// Request:  POST <endpoint_url>
//           {"model": ..., "temperature": 0,
//            "messages": [{"role": "system", ...}, {"role": "user", ...}]}
// Response: {"choices": [{"message": {"content": "..."}}]}
//
// The API key, if any, is read from CRV_JUDGE_API_KEY and sent as a bearer
// token.

#include <chrono>
#include <cstdlib>
#include <string>
#include <string_view>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "crv/cot.hpp"
#include "crv/error.hpp"

namespace crv {

inline constexpr const char* kJudgeApiKeyEnv = "CRV_JUDGE_API_KEY";

struct JudgeConfig {
  std::string endpoint_url;  // e.g. http://localhost:8000/v1/chat/completions
  std::string model_name;
  JudgeTemplate prompt_template = JudgeTemplate::Arithmetic;
  double timeout_seconds = 60.0;
  int max_retries = 3;
  int retry_backoff_ms = 250;
  std::string api_key;  // falls back to the environment when empty
};

inline JudgeConfig judge_config_from_json(const nlohmann::json& j) {
  JudgeConfig c;
  c.endpoint_url = j.at("endpoint_url").get<std::string>();
  c.model_name = j.value("model_name", std::string());
  c.prompt_template = parse_judge_template(j.value("prompt_template_id", std::string("arithmetic")));
  c.timeout_seconds = j.value("timeout", 60.0);
  c.max_retries = j.value("max_retries", 3);
  c.retry_backoff_ms = j.value("retry_backoff_ms", 250);
  return c;
}

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline SplitUrl split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw ConfigError("judge endpoint needs a scheme: " + std::string(url));
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

}  // namespace detail

// Sends one judging request and maps the reply's leading word to a label.
// Transport failures, 429 and 5xx responses are retried up to max_retries
// times; after that (or on any other HTTP error) JudgeUnavailable is thrown.
inline JudgeLabel judge_step(const JudgeConfig& cfg, std::string_view context,
                             std::string_view step, std::string_view problem,
                             std::string_view correct_value) {
  const JudgePrompt prompt =
      build_judge_prompt(cfg.prompt_template, problem, correct_value, context, step);
  nlohmann::json body = {
      {"model", cfg.model_name},
      {"temperature", 0},
      {"messages",
       nlohmann::json::array({{{"role", "system"}, {"content", prompt.system}},
                              {{"role", "user"}, {"content", prompt.user}}})}};
  const std::string payload = body.dump();

  const auto url = detail::split_url(cfg.endpoint_url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(cfg.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  std::string key = cfg.api_key;
  if (key.empty()) {
    if (const char* env = std::getenv(kJudgeApiKeyEnv)) key = env;
  }
  httplib::Headers headers;
  if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);

  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0 && cfg.retry_backoff_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg.retry_backoff_ms * attempt));
    }
    auto res = client.Post(url.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw JudgeUnavailable("judge returned HTTP " + std::to_string(res->status));
    }
    const auto reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) {
      last_error = "malformed JSON response";
      continue;
    }
    const auto choices = reply.find("choices");
    if (choices == reply.end() || !choices->is_array() || choices->empty()) {
      return JudgeLabel::Unparseable;
    }
    const auto& message = (*choices)[0].value("message", nlohmann::json::object());
    if (!message.contains("content") || !message["content"].is_string()) {
      return JudgeLabel::Unparseable;
    }
    return parse_judge_reply(message["content"].get<std::string>());
  }
  throw JudgeUnavailable("judge unavailable after " + std::to_string(cfg.max_retries + 1) +
                         " attempts: " + last_error);
}

// Judges every step of a trace, giving each the preceding steps as context.
// `problem` is the rendered expression (or question) and `correct_value` the
// ground-truth answer.
inline void apply_judge_labels(const JudgeConfig& cfg, CotTrace& trace, std::string_view problem,
                               std::string_view correct_value) {
  std::string context;
  for (auto& s : trace.steps) {
    s.judge_label = judge_step(cfg, context, s.text, problem, correct_value);
    if (!context.empty()) context += '\n';
    context += s.text;
  }
}

}  // namespace crv
