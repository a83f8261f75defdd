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

#ifndef COUNSELFLOW_MOCK_BACKEND_HPP_
#define COUNSELFLOW_MOCK_BACKEND_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "counselflow/hash.hpp"
#include "counselflow/llm_client.hpp"

namespace counselflow::mock {

using json = nlohmann::json;

struct RecordedCall {
  HttpRequest request;
  json body;
};

using Handler = std::function<HttpResponse(const HttpRequest& request, const json& body, std::size_t call_index)>;

/// In-process transport driven by a handler. Every call is recorded; calls
/// are serialized so handlers need no locking of their own.
class ScriptedTransport : public Transport {
 public:
  explicit ScriptedTransport(Handler handler) : handler_(std::move(handler)) {}

  HttpResponse post(const HttpRequest& request) override {
    std::lock_guard lock(mu_);
    json body;
    try {
      body = json::parse(request.body);
    } catch (const json::parse_error&) {
      body = nullptr;
    }
    calls_.push_back({request, body});
    return handler_(request, body, calls_.size() - 1);
  }

  std::vector<RecordedCall> calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

  std::size_t call_count() const {
    std::lock_guard lock(mu_);
    return calls_.size();
  }

 private:
  Handler handler_;
  mutable std::mutex mu_;
  std::vector<RecordedCall> calls_;
};

inline HttpResponse completion_reply(std::string_view text) {
  json body = {{"id", "mock"},
               {"object", "chat.completion"},
               {"choices", json::array({{{"index", 0},
                                         {"message", {{"role", "assistant"}, {"content", std::string(text)}}},
                                         {"finish_reason", "stop"}}})}};
  return {200, body.dump(), false, {}};
}

inline HttpResponse status_reply(int status, std::string body = "{}") { return {status, std::move(body), false, {}}; }

/// Content of the last user message in a chat-completion body.
inline std::string prompt_of(const json& body) {
  if (!body.is_object() || !body.contains("messages")) return {};
  const auto& msgs = body["messages"];
  for (auto it = msgs.rbegin(); it != msgs.rend(); ++it) {
    if (it->value("role", "") == "user") return it->value("content", "");
  }
  return {};
}

inline std::string prompt_hash(std::string_view prompt) { return sha256_hex(prompt); }

inline Handler fixed_reply(std::string text) {
  return [text = std::move(text)](const HttpRequest&, const json&, std::size_t) { return completion_reply(text); };
}

/// Replies by prompt hash; unknown prompts get `fallback`.
inline Handler scripted(std::map<std::string, std::string> by_prompt_hash, std::string fallback) {
  return [script = std::move(by_prompt_hash), fallback = std::move(fallback)](const HttpRequest&, const json& body,
                                                                              std::size_t) {
    auto it = script.find(prompt_hash(prompt_of(body)));
    return completion_reply(it == script.end() ? fallback : it->second);
  };
}

/// Fails the first `failures` calls with `failure`, then delegates.
inline Handler fail_first(std::size_t failures, HttpResponse failure, Handler then) {
  return [=](const HttpRequest& r, const json& b, std::size_t i) { return i < failures ? failure : then(r, b, i); };
}

/// Replies by request purpose ("perspective", "phase", "response", "judge").
inline Handler by_purpose(std::map<std::string, std::string> replies, std::string fallback = "OK") {
  return [replies = std::move(replies), fallback = std::move(fallback)](const HttpRequest& r, const json&, std::size_t) {
    auto it = replies.find(r.purpose);
    return completion_reply(it == replies.end() ? fallback : it->second);
  };
}

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Labels X of lines starting with "[Response X", in order of appearance.
inline std::vector<std::string> judge_labels(std::string_view prompt) {
  std::vector<std::string> labels;
  std::size_t pos = 0;
  while (pos < prompt.size()) {
    auto eol = prompt.find('\n', pos);
    if (eol == std::string_view::npos) eol = prompt.size();
    const auto line = prompt.substr(pos, eol - pos);
    constexpr std::string_view kHead = "[Response ";
    if (line.substr(0, kHead.size()) == kHead && line.size() > kHead.size()) {
      std::string label;
      for (auto i = kHead.size(); i < line.size() && line[i] >= 'A' && line[i] <= 'Z'; ++i) label.push_back(line[i]);
      if (!label.empty()) labels.push_back(label);
    }
    pos = eol + 1;
  }
  return labels;
}

}  // namespace detail

/// Deterministic stand-in for a generation/judge model. Output depends only
/// on the request purpose and prompt text.
inline Handler simulated_counselor() {
  return [](const HttpRequest& r, const json& body, std::size_t) {
    const auto prompt = prompt_of(body);
    const auto h = detail::fnv1a(prompt);
    if (r.purpose == "perspective") {
      static constexpr const char* kFeelings[] = {"anxious", "lonely", "overwhelmed", "uncertain", "discouraged"};
      std::ostringstream s;
      s << "The client appears " << kFeelings[h % 5] << " and is looking for understanding. "
        << "Their words suggest a wish to be heard before receiving any advice. "
        << "They seem to need reassurance that their feelings make sense.";
      return completion_reply(s.str());
    }
    if (r.purpose == "phase") {
      static constexpr const char* kNames[] = {"Rapport Building", "Situation Understanding", "Emotion Exploration",
                                               "Problem Clarification", "Problem Solving", "Hopeful Wrap-up"};
      const auto idx = h % 6;
      std::ostringstream s;
      s << "The conversation is currently in the \"" << kNames[idx] << "\" phase. "
        << "The counselor should keep listening closely and reflect the client's feelings. "
        << "When the client seems ready, the session can move on to the next phase.";
      return completion_reply(s.str());
    }
    if (r.purpose == "judge") {
      std::ostringstream s;
      static constexpr const char* kDims[] = {"Comprehensiveness", "Professionalism", "Authenticity", "Safety"};
      for (const auto& label : detail::judge_labels(prompt)) {
        const auto lh = detail::fnv1a(prompt + label);
        s << "[Response " << label << "]\n";
        for (int d = 0; d < 4; ++d) {
          const double score = 2.0 + static_cast<double>((lh >> (8 * d)) % 7) * 0.5;
          s << kDims[d] << ": " << score << "; simulated judgement\n";
        }
        s << "\n";
      }
      return completion_reply(s.str());
    }
    static constexpr const char* kReplies[] = {
        "That sounds really hard. Could you tell me a little more about what has been weighing on you?",
        "I can hear how much this has been on your mind. What feels most difficult about it right now?",
        "Thank you for sharing that with me. It makes sense that you feel this way.",
    };
    return completion_reply(kReplies[h % 3]);
  };
}

}  // namespace counselflow::mock

#endif  // COUNSELFLOW_MOCK_BACKEND_HPP_
