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

#ifndef COUNSELFLOW_LLM_CLIENT_HPP_
#define COUNSELFLOW_LLM_CLIENT_HPP_

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "counselflow/error.hpp"
#include "counselflow/hash.hpp"

namespace counselflow {

using json = nlohmann::json;
using Milliseconds = std::chrono::milliseconds;

enum class Role { kSystem, kUser, kAssistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::optional<int> max_tokens;
  // Caller-side label ("perspective", "judge", ...). Not sent, not hashed.
  std::string purpose;
};

inline void validate(const ChatRequest& req) {
  if (req.model.empty()) throw Error(ErrorCode::kInvalidRequest, "model name is empty");
  if (req.messages.empty()) throw Error(ErrorCode::kInvalidRequest, "request has no messages");
  for (const auto& m : req.messages) {
    if (m.content.empty()) throw Error(ErrorCode::kInvalidRequest, "message content is empty");
  }
  if (!std::isfinite(req.temperature) || req.temperature < 0.0) {
    throw Error(ErrorCode::kInvalidRequest, "temperature must be finite and >= 0");
  }
  if (req.max_tokens && *req.max_tokens <= 0) throw Error(ErrorCode::kInvalidRequest, "max_tokens must be positive");
}

struct BackendConfig {
  std::string name = "default";
  std::string base_url;
  std::string api_key_env;  // empty: no Authorization header
  Milliseconds timeout{60000};
  int max_retries = 3;
  Milliseconds backoff_initial{500};
  double backoff_multiplier = 2.0;
};

struct CompletionResult {
  std::string text;
  std::string request_hash;
  Milliseconds latency{0};
  bool from_cache = false;
};

inline std::string normalize_base_url(std::string_view url) {
  while (!url.empty() && url.back() == '/') url.remove_suffix(1);
  return std::string(url);
}

inline json messages_json(const std::vector<ChatMessage>& messages) {
  json out = json::array();
  for (const auto& m : messages) out.push_back({{"content", m.content}, {"role", to_string(m.role)}});
  return out;
}

/// Canonical form hashed for cache keys. Object keys are emitted sorted and
/// without whitespace, so logically identical requests serialize equal.
inline std::string canonical_request(std::string_view base_url, const ChatRequest& req) {
  const double temperature = req.temperature == 0.0 ? 0.0 : req.temperature;  // folds -0.0
  json j = {{"base_url", normalize_base_url(base_url)},
            {"max_tokens", req.max_tokens ? json(*req.max_tokens) : json(nullptr)},
            {"messages", messages_json(req.messages)},
            {"model", req.model},
            {"temperature", temperature}};
  return j.dump();
}

inline std::string request_hash(std::string_view base_url, const ChatRequest& req) {
  return sha256_hex(canonical_request(base_url, req));
}

/// JSON body for POST {base_url}/v1/chat/completions.
inline json wire_body(const ChatRequest& req) {
  json body = {{"model", req.model}, {"messages", messages_json(req.messages)}, {"temperature", req.temperature}};
  if (req.max_tokens) body["max_tokens"] = *req.max_tokens;
  return body;
}

/// Assistant text of the first choice.
inline std::string extract_completion_text(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedResponse, std::string("response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw Error(ErrorCode::kMalformedResponse, "response has no choices");
  }
  const auto& choice = j["choices"][0];
  if (!choice.is_object() || !choice.contains("message") || !choice["message"].is_object()) {
    throw Error(ErrorCode::kMalformedResponse, "first choice has no message");
  }
  const auto& msg = choice["message"];
  if (!msg.contains("content") || !msg["content"].is_string()) {
    throw Error(ErrorCode::kMalformedResponse, "message has no string content");
  }
  return msg["content"].get<std::string>();
}

// ---------------------------------------------------------------------------
// Transport

struct HttpRequest {
  std::string url;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
  Milliseconds timeout{60000};
  std::string purpose;
};

struct HttpResponse {
  int status = 0;
  std::string body;
  bool timed_out = false;
  std::string transport_error;  // non-empty when no HTTP status was received
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Cache

/// Content-addressed completion store: <dir>/<first two hex chars>/<hash>.json.
/// Writes go through a temporary file and rename, serialized per key stripe.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::kCacheIOError, "cannot create cache dir '" + dir_.string() + "': " + ec.message());
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path path_for(const std::string& key) const { return dir_ / key.substr(0, 2) / (key + ".json"); }

  std::optional<std::string> get(const std::string& key) const {
    std::lock_guard lock(stripe(key));
    const auto p = path_for(key);
    std::ifstream in(p);
    if (!in) return std::nullopt;
    try {
      const auto j = json::parse(in);
      return j.at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kCacheIOError, "corrupt cache entry '" + p.string() + "': " + e.what());
    }
  }

  void put(const std::string& key, const std::string& text, const std::string& canonical) {
    std::lock_guard lock(stripe(key));
    const auto p = path_for(key);
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw Error(ErrorCode::kCacheIOError, "cannot create '" + p.parent_path().string() + "': " + ec.message());
    std::ostringstream tmp_name;
    tmp_name << key << ".tmp." << std::this_thread::get_id();
    const auto tmp = p.parent_path() / tmp_name.str();
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw Error(ErrorCode::kCacheIOError, "cannot write '" + tmp.string() + "'");
      out << json{{"key", key}, {"request", json::parse(canonical)}, {"text", text}}.dump();
      if (!out) throw Error(ErrorCode::kCacheIOError, "short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, p, ec);
    if (ec) throw Error(ErrorCode::kCacheIOError, "cannot rename into '" + p.string() + "': " + ec.message());
  }

 private:
  std::mutex& stripe(const std::string& key) const {
    return stripes_[std::hash<std::string>{}(key) % stripes_.size()];
  }

  std::filesystem::path dir_;
  mutable std::array<std::mutex, 32> stripes_;
};

// ---------------------------------------------------------------------------
// Client

struct TranscriptEntry {
  std::string purpose;
  std::string request_hash;
  json request;  // wire body
  std::string response;
  bool from_cache = false;
  int attempts = 0;
  Milliseconds latency{0};
};

struct ClientOptions {
  // Backoff sleeper; tests replace it with a recorder.
  std::function<void(Milliseconds)> sleep = [](Milliseconds d) { std::this_thread::sleep_for(d); };
  std::function<std::optional<std::string>(const std::string&)> getenv = [](const std::string& name)
      -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    return v ? std::optional<std::string>(v) : std::nullopt;
  };
};

/// Chat-completion client for one OpenAI-compatible backend. Safe for
/// concurrent use.
class ChatClient {
 public:
  ChatClient(BackendConfig config, std::shared_ptr<Transport> transport, ClientOptions options = {})
      : config_(std::move(config)), transport_(std::move(transport)), options_(std::move(options)) {
    if (config_.max_retries < 0) throw Error(ErrorCode::kConfigError, "max_retries must be >= 0");
    if (config_.timeout <= Milliseconds::zero()) throw Error(ErrorCode::kConfigError, "timeout must be > 0");
    if (!transport_) throw Error(ErrorCode::kConfigError, "backend '" + config_.name + "' has no transport");
  }

  const BackendConfig& config() const { return config_; }

  CompletionResult complete(const ChatRequest& req) {
    validate(req);
    const auto hash = request_hash(config_.base_url, req);
    const auto started = std::chrono::steady_clock::now();
    int attempts = 0;
    auto text = send_with_retries(req, attempts);
    const auto latency = std::chrono::duration_cast<Milliseconds>(std::chrono::steady_clock::now() - started);
    record({req.purpose, hash, wire_body(req), text, false, attempts, latency});
    return {std::move(text), hash, latency, false};
  }

  /// Serves from `cache` when present; otherwise calls the backend and
  /// stores the completion.
  CompletionResult complete_cached(ResponseCache& cache, const ChatRequest& req) {
    validate(req);
    const auto canonical = canonical_request(config_.base_url, req);
    const auto hash = sha256_hex(canonical);
    if (auto hit = cache.get(hash)) {
      record({req.purpose, hash, wire_body(req), *hit, true, 0, Milliseconds{0}});
      return {std::move(*hit), hash, Milliseconds{0}, true};
    }
    auto result = complete(req);
    cache.put(hash, result.text, canonical);
    return result;
  }

  std::vector<TranscriptEntry> transcripts() const {
    std::lock_guard lock(mu_);
    return transcripts_;
  }

  /// Requests that reached the transport, retries included.
  std::size_t backend_calls() const { return backend_calls_.load(); }

 private:
  std::string send_with_retries(const ChatRequest& req, int& attempts) {
    HttpRequest http;
    http.url = normalize_base_url(config_.base_url) + "/v1/chat/completions";
    http.headers.emplace_back("Content-Type", "application/json");
    if (!config_.api_key_env.empty()) {
      const auto key = options_.getenv(config_.api_key_env);
      if (!key || key->empty()) {
        throw Error(ErrorCode::kAuthError, "environment variable " + config_.api_key_env + " is not set");
      }
      http.headers.emplace_back("Authorization", "Bearer " + *key);
    }
    http.body = wire_body(req).dump();
    http.timeout = config_.timeout;
    http.purpose = req.purpose;

    auto delay = config_.backoff_initial;
    for (;;) {
      ++attempts;
      ++backend_calls_;
      const auto resp = transport_->post(http);
      std::optional<Error> transient;
      if (resp.timed_out) {
        transient.emplace(ErrorCode::kTimeout, "request to " + config_.name + " timed out");
      } else if (!resp.transport_error.empty()) {
        transient.emplace(ErrorCode::kTransportError, config_.name + ": " + resp.transport_error);
      } else if (resp.status == 401 || resp.status == 403) {
        throw Error(ErrorCode::kAuthError, config_.name + " rejected credentials (HTTP " + std::to_string(resp.status) + ")");
      } else if (resp.status == 429) {
        transient.emplace(ErrorCode::kRateLimited, config_.name + " rate limited the request");
      } else if (resp.status >= 500) {
        transient.emplace(ErrorCode::kTransportError, config_.name + " returned HTTP " + std::to_string(resp.status));
      } else if (resp.status < 200 || resp.status >= 300) {
        throw Error(ErrorCode::kInvalidRequest,
                    config_.name + " returned HTTP " + std::to_string(resp.status) + ": " + resp.body.substr(0, 200));
      } else {
        return extract_completion_text(resp.body);
      }
      if (attempts > config_.max_retries) throw *transient;
      options_.sleep(delay);
      delay = std::chrono::duration_cast<Milliseconds>(delay * config_.backoff_multiplier);
    }
  }

  void record(TranscriptEntry entry) {
    std::lock_guard lock(mu_);
    transcripts_.push_back(std::move(entry));
  }

  BackendConfig config_;
  std::shared_ptr<Transport> transport_;
  ClientOptions options_;
  mutable std::mutex mu_;
  std::vector<TranscriptEntry> transcripts_;
  std::atomic<std::size_t> backend_calls_{0};
};

}  // namespace counselflow

#endif  // COUNSELFLOW_LLM_CLIENT_HPP_
