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

#ifndef COUNSELFLOW_CHAT_SERVICE_HPP_
#define COUNSELFLOW_CHAT_SERVICE_HPP_

#include <openssl/rand.h>

#include <array>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "counselflow/dataset_io.hpp"
#include "counselflow/dialogue.hpp"
#include "counselflow/error.hpp"
#include "counselflow/llm_client.hpp"
#include "counselflow/phases.hpp"
#include "counselflow/pipeline.hpp"
#include "counselflow/prompts.hpp"
#include "counselflow/text.hpp"

namespace counselflow {

/// Per-turn inference scaffolding, shown only in the operator panel.
struct Annotation {
  std::optional<std::string> psych_state;
  std::optional<std::string> phase_label;
  std::optional<std::string> phase_narrative;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Exchange {
  std::string idempotency_token;
  std::string client_text;
  std::string counselor_text;
  std::optional<Annotation> annotation;  // absent in Direct mode
};

struct Session {
  std::string id;
  Locale locale = Locale::kEn;
  Mode mode = Mode::kFull;
  std::string created_at;
  std::vector<Exchange> exchanges;

  /// The alternating client/counselor dialogue built from the exchanges.
  Dialogue dialogue() const {
    Dialogue d;
    d.id = id;
    d.topic = "live-session";
    d.locale = locale;
    d.merged = true;
    for (const auto& e : exchanges) {
      d.utterances.push_back({Speaker::kClient, e.client_text, d.utterances.size()});
      d.utterances.push_back({Speaker::kCounselor, e.counselor_text, d.utterances.size()});
    }
    return d;
  }
};

struct Reply {
  std::string counselor_text;
  std::optional<Annotation> annotation;
  bool replayed = false;  // served from a previous identical request
};

inline json to_json(const std::optional<Annotation>& a) {
  if (!a) return nullptr;
  auto opt = [](const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); };
  return {{"psych_state", opt(a->psych_state)},
          {"phase_label", opt(a->phase_label)},
          {"phase_narrative", opt(a->phase_narrative)},
          {"operator_only", true}};
}

inline std::optional<Annotation> annotation_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  auto opt = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<std::string>();
  };
  return Annotation{opt("psych_state"), opt("phase_label"), opt("phase_narrative")};
}

inline Annotation annotation_of(const PipelineRun& run) {
  Annotation a;
  if (run.psych_state) a.psych_state = run.psych_state->text;
  if (run.phase) {
    if (run.phase->phase) a.phase_label = std::string(to_string(*run.phase->phase));
    a.phase_narrative = run.phase->narrative;
  }
  return a;
}

/// Transcript view served to the UI.
inline json to_json(const Session& s) {
  json utterances = json::array();
  for (const auto& u : s.dialogue().utterances) {
    utterances.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}, {"index", u.index}});
  }
  json annotations = json::array();
  for (const auto& e : s.exchanges) annotations.push_back(to_json(e.annotation));
  return {{"session_id", s.id},          {"locale", to_string(s.locale)}, {"mode", to_string(s.mode)},
          {"created_at", s.created_at},  {"utterances", utterances},      {"annotations", annotations}};
}

inline std::string random_session_id() {
  std::array<unsigned char, 16> bytes{};
  if (RAND_bytes(bytes.data(), static_cast<int>(bytes.size())) != 1) {
    throw Error(ErrorCode::kIOError, "system random source unavailable");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (auto b : bytes) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

inline bool valid_session_id(std::string_view id) {
  if (id.size() != 32) return false;
  for (char c : id) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Append-only JSONL log per session: a "created" record followed by one
/// "exchange" record per completed turn.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::kIOError, "cannot create session dir " + dir_.string() + ": " + ec.message());
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path path_for(const std::string& id) const { return dir_ / (id + ".jsonl"); }

  Session create(Locale locale, Mode mode) {
    Session s;
    s.id = random_session_id();
    s.locale = locale;
    s.mode = mode;
    s.created_at = utc_timestamp();
    append(s.id, {{"type", "created"},
                  {"id", s.id},
                  {"locale", to_string(s.locale)},
                  {"mode", to_string(s.mode)},
                  {"created_at", s.created_at}});
    return s;
  }

  Session load(const std::string& id) const {
    const auto path = path_for(id);
    if (!valid_session_id(id) || !std::filesystem::exists(path)) throw Error(ErrorCode::kSessionNotFound, id);
    std::lock_guard lock(mutex_for(id));
    Session s;
    bool created = false;
    for_each_jsonl(path, [&](const json& j, std::size_t line) {
      try {
        const auto type = j.at("type").get<std::string>();
        if (type == "created") {
          s.id = j.at("id").get<std::string>();
          s.locale = parse_locale(j.at("locale").get<std::string>()).value();
          s.mode = parse_mode(j.at("mode").get<std::string>()).value();
          s.created_at = j.at("created_at").get<std::string>();
          created = true;
        } else if (type == "exchange") {
          s.exchanges.push_back({j.at("idempotency_token").get<std::string>(), j.at("client_text").get<std::string>(),
                                 j.at("counselor_text").get<std::string>(), annotation_from_json(j.at("annotation"))});
        }
      } catch (const std::exception& e) {
        throw Error(ErrorCode::kSchemaError, path.string() + " line " + std::to_string(line) + ": " + e.what());
      }
    });
    if (!created) throw Error(ErrorCode::kSchemaError, path.string() + " has no created record");
    return s;
  }

  void append_exchange(const std::string& id, const Exchange& e) {
    append(id, {{"type", "exchange"},
                {"idempotency_token", e.idempotency_token},
                {"client_text", e.client_text},
                {"counselor_text", e.counselor_text},
                {"annotation", to_json(e.annotation)}});
  }

 private:
  std::mutex& mutex_for(const std::string& id) const { return stripes_[std::hash<std::string>{}(id) % stripes_.size()]; }

  void append(const std::string& id, const json& record) {
    std::lock_guard lock(mutex_for(id));
    std::ofstream out(path_for(id), std::ios::app | std::ios::binary);
    out << record.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::kIOError, "cannot append to " + path_for(id).string());
  }

  std::filesystem::path dir_;
  mutable std::array<std::mutex, 16> stripes_;
};

/// Runs one pipeline turn per client message. Holds no session state beyond
/// the in-flight markers; everything else is read from the store.
class ChatService {
 public:
  ChatService(SessionStore& store, ChatClient& client, std::filesystem::path template_dir, PipelineConfig base)
      : store_(store), client_(client), template_dir_(std::move(template_dir)), base_(std::move(base)) {}

  Session create_session(Locale locale, Mode mode) {
    resources(locale);  // fail early if the locale has no templates
    return store_.create(locale, mode);
  }

  Session get_session(const std::string& id) const { return store_.load(id); }

  Reply post_message(const std::string& id, std::string client_text, std::string idempotency_token = {}) {
    client_text = text::trim_copy(client_text);
    if (client_text.empty()) throw Error(ErrorCode::kInvalidRequest, "message text is empty");
    auto session = store_.load(id);

    InFlight guard(*this, id);
    session = store_.load(id);  // re-read: a concurrent turn may have just finished
    if (!idempotency_token.empty()) {
      for (const auto& e : session.exchanges) {
        if (e.idempotency_token != idempotency_token) continue;
        if (e.client_text != client_text) {
          throw Error(ErrorCode::kInvalidRequest, "idempotency token reused with a different message");
        }
        return {e.counselor_text, e.annotation, true};
      }
    }

    auto dialogue = session.dialogue();
    Instance inst;
    inst.dialogue_id = session.id;
    inst.locale = session.locale;
    inst.history = std::move(dialogue.utterances);
    inst.history.push_back({Speaker::kClient, client_text, inst.history.size()});

    auto& res = resources(session.locale);
    auto cfg = base_;
    cfg.mode = session.mode;
    cfg.locale = session.locale;
    Pipeline pipeline(client_, res.templates, res.phases, cfg);
    const auto run = pipeline.run_instance(inst);

    Exchange e{idempotency_token, client_text, run.response, std::nullopt};
    if (session.mode != Mode::kDirect) e.annotation = annotation_of(run);
    store_.append_exchange(session.id, e);
    return {e.counselor_text, e.annotation, false};
  }

 private:
  struct Resources {
    TemplateStore templates;
    PhaseTable phases;
  };

  class InFlight {
   public:
    InFlight(ChatService& svc, std::string id) : svc_(svc), id_(std::move(id)) {
      std::lock_guard lock(svc_.mu_);
      if (!svc_.in_flight_.insert(id_).second) throw Error(ErrorCode::kBusy, "a message is already in flight for " + id_);
    }
    ~InFlight() {
      std::lock_guard lock(svc_.mu_);
      svc_.in_flight_.erase(id_);
    }
    InFlight(const InFlight&) = delete;
    InFlight& operator=(const InFlight&) = delete;

   private:
    ChatService& svc_;
    std::string id_;
  };

  Resources& resources(Locale locale) {
    std::lock_guard lock(mu_);
    auto it = resources_.find(locale);
    if (it == resources_.end()) {
      auto r = std::make_unique<Resources>(
          Resources{TemplateStore::load(template_dir_, locale), PhaseTable::load(template_dir_, locale)});
      it = resources_.emplace(locale, std::move(r)).first;
    }
    return *it->second;
  }

  SessionStore& store_;
  ChatClient& client_;
  std::filesystem::path template_dir_;
  PipelineConfig base_;
  std::mutex mu_;
  std::set<std::string> in_flight_;
  std::map<Locale, std::unique_ptr<Resources>> resources_;
};

inline int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSessionNotFound: return 404;
    case ErrorCode::kBusy: return 409;
    case ErrorCode::kInvalidRequest:
    case ErrorCode::kParseError:
    case ErrorCode::kSchemaError:
    case ErrorCode::kEmptyHistory: return 400;
    case ErrorCode::kStageFailure:
    case ErrorCode::kAuthError:
    case ErrorCode::kRateLimited:
    case ErrorCode::kMalformedResponse:
    case ErrorCode::kTimeout:
    case ErrorCode::kTransportError: return 502;
    default: return 500;
  }
}

inline json error_json(ErrorCode code, std::string_view message) {
  return {{"error", {{"code", to_string(code)}, {"message", message}}}};
}

/// JSON API over ChatService plus static hosting of the UI bundle.
class ChatServer {
 public:
  ChatServer(ChatService& service, Locale default_locale, Mode default_mode,
             std::optional<std::filesystem::path> ui_dir = std::nullopt)
      : service_(service), default_locale_(default_locale), default_mode_(default_mode) {
    server_.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const auto body = parse_body(req);
        auto locale = default_locale_;
        auto mode = default_mode_;
        if (body.contains("locale")) {
          const auto l = parse_locale(body.at("locale").get<std::string>());
          if (!l) throw Error(ErrorCode::kInvalidRequest, "unknown locale");
          locale = *l;
        }
        if (body.contains("mode")) {
          const auto m = parse_mode(body.at("mode").get<std::string>());
          if (!m) throw Error(ErrorCode::kInvalidRequest, "unknown mode");
          mode = *m;
        }
        const auto s = service_.create_session(locale, mode);
        res.status = 201;
        return json{{"session_id", s.id},
                    {"locale", to_string(s.locale)},
                    {"mode", to_string(s.mode)},
                    {"created_at", s.created_at}};
      });
    });
    server_.Post(R"(/api/sessions/([0-9a-zA-Z]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        const auto body = parse_body(req);
        if (!body.contains("text") || !body.at("text").is_string()) {
          throw Error(ErrorCode::kInvalidRequest, "field 'text' is required");
        }
        const auto reply = service_.post_message(req.matches[1], body.at("text").get<std::string>(),
                                                 body.value("idempotency_token", std::string()));
        return json{{"counselor_text", reply.counselor_text},
                    {"annotations", to_json(reply.annotation)},
                    {"replayed", reply.replayed}};
      });
    });
    server_.Get(R"(/api/sessions/([0-9a-zA-Z]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { return to_json(service_.get_session(req.matches[1])); });
    });
    if (ui_dir && std::filesystem::is_directory(*ui_dir)) {
      server_.set_mount_point("/", ui_dir->string());
    }
  }

  /// Blocks until stop().
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  /// Binds an ephemeral port; call listen_after_bind() (typically on another
  /// thread) to start serving.
  int bind_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  void stop() { server_.stop(); }

 private:
  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      auto j = json::parse(req.body);
      if (!j.is_object()) throw Error(ErrorCode::kInvalidRequest, "request body must be a JSON object");
      return j;
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kInvalidRequest, std::string("malformed JSON: ") + e.what());
    }
  }

  template <typename Fn>
  static void handle(httplib::Response& res, Fn&& fn) {
    try {
      auto out = fn();
      if (res.status == -1 || res.status == 0) res.status = 200;
      res.set_content(out.dump(), "application/json");
    } catch (const Error& e) {
      res.status = http_status_for(e.code());
      if (res.status >= 500) spdlog::warn("request failed: {}", e.what());
      res.set_content(error_json(e.code(), e.what()).dump(), "application/json");
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(error_json(ErrorCode::kInvalidRequest, e.what()).dump(), "application/json");
    }
  }

  ChatService& service_;
  Locale default_locale_;
  Mode default_mode_;
  httplib::Server server_;
};

}  // namespace counselflow

#endif  // COUNSELFLOW_CHAT_SERVICE_HPP_
