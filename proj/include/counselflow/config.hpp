// Copyright 2026 The Counselflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef COUNSELFLOW_CONFIG_HPP_
#define COUNSELFLOW_CONFIG_HPP_

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "counselflow/dialogue.hpp"
#include "counselflow/error.hpp"
#include "counselflow/http_transport.hpp"
#include "counselflow/llm_client.hpp"
#include "counselflow/mock_backend.hpp"
#include "counselflow/pipeline.hpp"
#include "counselflow/prompts.hpp"

namespace counselflow {

enum class BackendType { kOpenAI, kMock };

struct BackendEntry {
  BackendType type = BackendType::kOpenAI;
  BackendConfig config;
};

struct ModelRef {
  std::string backend;
  std::string model;
};

struct NamedJudge {
  std::string name;
  ModelRef ref;
};

/// Experiment manifest: where models live, which to use, and defaults for
/// the pipeline. Command-line flags override individual fields.
struct AppConfig {
  std::map<std::string, BackendEntry> backends;
  ModelRef generation;
  std::vector<NamedJudge> judges;
  std::filesystem::path template_dir = "templates";
  std::filesystem::path cache_dir = ".counselflow-cache";
  Locale locale = Locale::kEn;
  std::size_t window_size = 6;
  Mode mode = Mode::kFull;
  double temperature = 0.0;
  std::optional<int> max_tokens;

  /// Offline configuration: one simulated backend, two simulated judges.
  static AppConfig offline() {
    AppConfig c;
    BackendEntry mock;
    mock.type = BackendType::kMock;
    mock.config.name = "mock";
    mock.config.base_url = "mock://local";
    c.backends.emplace("mock", mock);
    c.generation = {"mock", "mock-counselor"};
    c.judges = {{"judge-1", {"mock", "mock-judge-1"}}, {"judge-2", {"mock", "mock-judge-2"}}};
    return c;
  }

  const BackendEntry& backend(const std::string& name) const {
    auto it = backends.find(name);
    if (it == backends.end()) throw Error(ErrorCode::kConfigError, "unknown backend '" + name + "'");
    return it->second;
  }

  PipelineConfig pipeline_config(std::string model) const {
    PipelineConfig p;
    p.model = std::move(model);
    p.mode = mode;
    p.window_size = window_size;
    p.temperature = temperature;
    p.max_tokens = max_tokens;
    p.locale = locale;
    return p;
  }
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    return v ? std::optional<std::string>(v) : std::nullopt;
  };
}

/// Replaces ${NAME} and ${NAME:-fallback}; "$$" is a literal "$".
inline std::string interpolate_env(std::string_view s, const EnvLookup& env) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '$' || i + 1 >= s.size()) {
      out.push_back(s[i]);
      continue;
    }
    if (s[i + 1] == '$') {
      out.push_back('$');
      ++i;
      continue;
    }
    if (s[i + 1] != '{') {
      out.push_back(s[i]);
      continue;
    }
    const auto close = s.find('}', i + 2);
    if (close == std::string_view::npos) throw Error(ErrorCode::kConfigError, "unterminated ${ in '" + std::string(s) + "'");
    auto expr = s.substr(i + 2, close - i - 2);
    std::optional<std::string_view> fallback;
    if (const auto sep = expr.find(":-"); sep != std::string_view::npos) {
      fallback = expr.substr(sep + 2);
      expr = expr.substr(0, sep);
    }
    if (expr.empty()) throw Error(ErrorCode::kConfigError, "empty variable name in '" + std::string(s) + "'");
    auto value = env(std::string(expr));
    if (!value || (value->empty() && fallback)) {
      if (!fallback) throw Error(ErrorCode::kConfigError, "environment variable " + std::string(expr) + " is not set");
      value = std::string(*fallback);
    }
    out += *value;
    i = close;
  }
  return out;
}

namespace detail {

inline void interpolate_tree(json& j, const EnvLookup& env) {
  if (j.is_string()) {
    j = interpolate_env(j.get_ref<const std::string&>(), env);
  } else if (j.is_structured()) {
    for (auto& child : j) interpolate_tree(child, env);
  }
}

/// "model", "model@backend"
inline ModelRef parse_model_ref(const json& j, const std::string& default_backend) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    const auto at = s.rfind('@');
    if (at == std::string::npos) return {default_backend, s};
    return {s.substr(at + 1), s.substr(0, at)};
  }
  return {j.value("backend", default_backend), j.at("model").get<std::string>()};
}

}  // namespace detail

inline ModelRef parse_model_ref(std::string_view s, const std::string& default_backend) {
  return detail::parse_model_ref(json(std::string(s)), default_backend);
}

/// Builds a config from JSON. Relative paths resolve against `base_dir`.
inline AppConfig config_from_json(json j, const std::filesystem::path& base_dir = {},
                                  const EnvLookup& env = process_env()) {
  detail::interpolate_tree(j, env);
  AppConfig c;
  try {
    for (const auto& [name, b] : j.at("backends").items()) {
      BackendEntry e;
      const auto type = b.value("type", std::string("openai"));
      if (type == "openai") {
        e.type = BackendType::kOpenAI;
      } else if (type == "mock") {
        e.type = BackendType::kMock;
      } else {
        throw Error(ErrorCode::kConfigError, "backend '" + name + "': unknown type '" + type + "'");
      }
      e.config.name = name;
      e.config.base_url = normalize_base_url(b.value("base_url", e.type == BackendType::kMock ? "mock://local" : ""));
      if (e.type == BackendType::kOpenAI && e.config.base_url.empty()) {
        throw Error(ErrorCode::kConfigError, "backend '" + name + "' needs base_url");
      }
      e.config.api_key_env = b.value("api_key_env", std::string());
      e.config.timeout = Milliseconds(b.value("timeout_ms", e.config.timeout.count()));
      e.config.max_retries = b.value("max_retries", e.config.max_retries);
      e.config.backoff_initial = Milliseconds(b.value("backoff_initial_ms", e.config.backoff_initial.count()));
      e.config.backoff_multiplier = b.value("backoff_multiplier", e.config.backoff_multiplier);
      c.backends.emplace(name, std::move(e));
    }
    if (c.backends.empty()) throw Error(ErrorCode::kConfigError, "no backends configured");
    const auto first_backend = c.backends.begin()->first;

    c.generation = detail::parse_model_ref(j.at("generation"), first_backend);
    if (j.contains("judges")) {
      for (const auto& jj : j.at("judges")) {
        auto ref = detail::parse_model_ref(jj, first_backend);
        auto name = jj.is_object() ? jj.value("name", ref.model) : ref.model;
        c.judges.push_back({std::move(name), std::move(ref)});
      }
    }
    if (j.contains("template_dir")) c.template_dir = j.at("template_dir").get<std::string>();
    if (j.contains("cache_dir")) c.cache_dir = j.at("cache_dir").get<std::string>();
    if (j.contains("locale")) {
      const auto s = j.at("locale").get<std::string>();
      const auto l = parse_locale(s);
      if (!l) throw Error(ErrorCode::kConfigError, "unknown locale '" + s + "'");
      c.locale = *l;
    }
    if (j.contains("mode")) {
      const auto s = j.at("mode").get<std::string>();
      const auto m = parse_mode(s);
      if (!m) throw Error(ErrorCode::kConfigError, "unknown mode '" + s + "'");
      c.mode = *m;
    }
    c.window_size = j.value("window_size", c.window_size);
    c.temperature = j.value("temperature", c.temperature);
    if (j.contains("max_tokens") && !j.at("max_tokens").is_null()) c.max_tokens = j.at("max_tokens").get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, e.what());
  }

  if (!base_dir.empty()) {
    if (c.template_dir.is_relative()) c.template_dir = base_dir / c.template_dir;
    if (c.cache_dir.is_relative()) c.cache_dir = base_dir / c.cache_dir;
  }
  c.backend(c.generation.backend);
  for (const auto& judge : c.judges) c.backend(judge.ref.backend);
  return c;
}

inline AppConfig load_config(const std::filesystem::path& path, const EnvLookup& env = process_env()) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
  return config_from_json(std::move(j), path.parent_path(), env);
}

inline std::shared_ptr<Transport> make_transport(const BackendEntry& entry) {
  if (entry.type == BackendType::kMock) {
    return std::make_shared<mock::ScriptedTransport>(mock::simulated_counselor());
  }
  return std::make_shared<HttplibTransport>();
}

/// One client per backend, shared by every model served from it.
class ClientRegistry {
 public:
  explicit ClientRegistry(const AppConfig& config) {
    for (const auto& [name, entry] : config.backends) {
      clients_.emplace(name, std::make_unique<ChatClient>(entry.config, make_transport(entry)));
    }
  }

  ClientRegistry(const AppConfig& config, std::shared_ptr<Transport> shared_transport, ClientOptions options = {}) {
    for (const auto& [name, entry] : config.backends) {
      clients_.emplace(name, std::make_unique<ChatClient>(entry.config, shared_transport, options));
    }
  }

  ChatClient& get(const std::string& backend) {
    auto it = clients_.find(backend);
    if (it == clients_.end()) throw Error(ErrorCode::kConfigError, "unknown backend '" + backend + "'");
    return *it->second;
  }

  std::size_t backend_calls() const {
    std::size_t n = 0;
    for (const auto& [_, c] : clients_) n += c->backend_calls();
    return n;
  }

 private:
  std::map<std::string, std::unique_ptr<ChatClient>> clients_;
};

}  // namespace counselflow

#endif  // COUNSELFLOW_CONFIG_HPP_
