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

#ifndef COUNSELFLOW_PROMPTS_HPP_
#define COUNSELFLOW_PROMPTS_HPP_

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "counselflow/dialogue.hpp"
#include "counselflow/error.hpp"
#include "counselflow/text.hpp"

namespace counselflow {

enum class TemplateId { kPerspective, kPhase, kResponse, kJudge };

inline constexpr std::array<TemplateId, 4> kAllTemplateIds = {TemplateId::kPerspective, TemplateId::kPhase,
                                                              TemplateId::kResponse, TemplateId::kJudge};

inline std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::kPerspective: return "perspective";
    case TemplateId::kPhase: return "phase";
    case TemplateId::kResponse: return "response";
    case TemplateId::kJudge: return "judge";
  }
  return "perspective";
}

inline std::optional<TemplateId> parse_template_id(std::string_view s) {
  for (auto id : kAllTemplateIds) {
    if (to_string(id) == s) return id;
  }
  return std::nullopt;
}

namespace placeholder {
inline constexpr std::string_view kDialogueHistory = "DIALOGUE_HISTORY";
inline constexpr std::string_view kPerspectiveTaking = "PERSPECTIVE_TAKING";
inline constexpr std::string_view kCounselingStage = "COUNSELING_STAGE";
inline constexpr std::string_view kResponses = "RESPONSES";
inline constexpr std::string_view kLabel = "LABEL";
inline constexpr std::string_view kModelTag = "MODEL_TAG";
inline constexpr std::string_view kResponse = "RESPONSE";
}  // namespace placeholder

// ---------------------------------------------------------------------------
// History formatting

struct SpeakerLabels {
  std::string_view client;
  std::string_view counselor;
};

inline SpeakerLabels speaker_labels(Locale locale) {
  switch (locale) {
    case Locale::kJa: return {"クライアント", "カウンセラー"};
    case Locale::kZh: return {"来访者", "咨询师"};
    case Locale::kEn: return {"Client", "Counselor"};
  }
  return {"Client", "Counselor"};
}

/// One "<Label>: <text>" line per utterance, newline-joined, no trailing
/// newline. Line breaks inside an utterance are folded to spaces.
inline std::string format_history(std::span<const Utterance> utterances, Locale locale) {
  if (utterances.empty()) throw Error(ErrorCode::kEmptyHistory, "cannot format an empty history");
  const auto labels = speaker_labels(locale);
  std::string out;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    if (i > 0) out.push_back('\n');
    const auto& u = utterances[i];
    out += u.speaker == Speaker::kClient ? labels.client : labels.counselor;
    out += ": ";
    for (char c : u.text) out.push_back(c == '\n' || c == '\r' ? ' ' : c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Templates
//
// Syntax:
//   {NAME}               placeholder
//   {?NAME} ... {/NAME}  section dropped wholesale when NAME is omitted
//   {#RESPONSES} ... {/RESPONSES}
//                        repeated once per judged response; inside it
//                        {LABEL}, {MODEL_TAG} and {RESPONSE} are bound
//   {{ and }}            literal braces
// Lines starting with "##!" are file comments and are dropped on load.

struct TemplateNode {
  enum class Kind { kText, kPlaceholder, kOptional, kRepeat };
  Kind kind = Kind::kText;
  std::string value;  // text, or placeholder/section name
  std::vector<TemplateNode> children;
};

namespace detail {

inline bool valid_name(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return (c >= 'A' && c <= 'Z') || c == '_'; });
}

class TemplateParser {
 public:
  explicit TemplateParser(std::string_view body) : body_(body) {}

  std::vector<TemplateNode> parse() {
    return parse_until({});
  }

 private:
  Error lint(const std::string& what) const {
    return Error(ErrorCode::kTemplateLint, what + " at offset " + std::to_string(pos_));
  }

  std::vector<TemplateNode> parse_until(std::string_view closing) {
    std::vector<TemplateNode> nodes;
    std::string text;
    auto flush = [&] {
      if (!text.empty()) nodes.push_back({TemplateNode::Kind::kText, std::move(text), {}});
      text.clear();
    };
    while (pos_ < body_.size()) {
      const char c = body_[pos_];
      if (c == '{' && pos_ + 1 < body_.size() && body_[pos_ + 1] == '{') {
        text.push_back('{');
        pos_ += 2;
        continue;
      }
      if (c == '}' && pos_ + 1 < body_.size() && body_[pos_ + 1] == '}') {
        text.push_back('}');
        pos_ += 2;
        continue;
      }
      if (c == '}') throw lint("unbalanced '}'");
      if (c != '{') {
        text.push_back(c);
        ++pos_;
        continue;
      }
      const auto close = body_.find('}', pos_);
      if (close == std::string_view::npos) throw lint("unterminated '{'");
      const auto inner = body_.substr(pos_ + 1, close - pos_ - 1);
      const char sigil = inner.empty() ? '\0' : inner.front();
      if (sigil == '/') {
        if (inner.substr(1) != closing) throw lint("mismatched close {" + std::string(inner) + "}");
        flush();
        pos_ = close + 1;
        return nodes;
      }
      flush();
      pos_ = close + 1;
      if (sigil == '?' || sigil == '#') {
        const auto name = std::string(inner.substr(1));
        if (!valid_name(name)) throw lint("bad section name '" + name + "'");
        auto children = parse_until(name);
        nodes.push_back({sigil == '?' ? TemplateNode::Kind::kOptional : TemplateNode::Kind::kRepeat, name,
                         std::move(children)});
        continue;
      }
      if (!valid_name(inner)) throw lint("bad placeholder '{" + std::string(inner) + "}'");
      nodes.push_back({TemplateNode::Kind::kPlaceholder, std::string(inner), {}});
    }
    flush();
    if (!closing.empty()) throw lint("section '" + std::string(closing) + "' is not closed");
    return nodes;
  }

  std::string_view body_;
  std::size_t pos_ = 0;
};

inline void collect_names(const std::vector<TemplateNode>& nodes, bool in_repeat, std::set<std::string, std::less<>>& top,
                          std::set<std::string, std::less<>>& repeated) {
  for (const auto& n : nodes) {
    switch (n.kind) {
      case TemplateNode::Kind::kText: break;
      case TemplateNode::Kind::kPlaceholder: (in_repeat ? repeated : top).insert(n.value); break;
      case TemplateNode::Kind::kOptional: collect_names(n.children, in_repeat, top, repeated); break;
      case TemplateNode::Kind::kRepeat: collect_names(n.children, true, top, repeated); break;
    }
  }
}

inline bool has_optional_section(const std::vector<TemplateNode>& nodes, std::string_view name) {
  return std::any_of(nodes.begin(), nodes.end(), [&](const TemplateNode& n) {
    if (n.kind == TemplateNode::Kind::kOptional && n.value == name) return true;
    return has_optional_section(n.children, name);
  });
}

inline void collect_optional_sections(const std::vector<TemplateNode>& nodes, std::set<std::string, std::less<>>& out) {
  for (const auto& n : nodes) {
    if (n.kind == TemplateNode::Kind::kOptional) out.insert(n.value);
    collect_optional_sections(n.children, out);
  }
}

inline bool has_repeat(const std::vector<TemplateNode>& nodes) {
  return std::any_of(nodes.begin(), nodes.end(), [](const TemplateNode& n) {
    return n.kind == TemplateNode::Kind::kRepeat || has_repeat(n.children);
  });
}

}  // namespace detail

/// Placeholders each template must reference.
inline std::vector<std::string_view> required_placeholders(TemplateId id) {
  using namespace placeholder;
  switch (id) {
    case TemplateId::kPerspective: return {kDialogueHistory};
    case TemplateId::kPhase: return {kDialogueHistory, kPerspectiveTaking};
    case TemplateId::kResponse: return {kDialogueHistory, kPerspectiveTaking, kCounselingStage};
    case TemplateId::kJudge: return {kDialogueHistory};
  }
  return {};
}

/// Placeholders a caller may omit; each must sit inside a same-named
/// optional section.
inline std::vector<std::string_view> omittable_placeholders(TemplateId id) {
  using namespace placeholder;
  switch (id) {
    case TemplateId::kPhase: return {kPerspectiveTaking};
    case TemplateId::kResponse: return {kPerspectiveTaking, kCounselingStage};
    default: return {};
  }
}

/// Heading that introduces the one-shot example in each locale.
inline std::string_view example_heading(Locale locale) {
  switch (locale) {
    case Locale::kJa: return "# 例";
    case Locale::kZh: return "# 示例";
    case Locale::kEn: return "# Example";
  }
  return "# Example";
}

struct JudgeEntry {
  std::string label;
  std::string model_tag;
  std::string response;
};

struct RenderContext {
  std::map<std::string, std::string, std::less<>> values;
  std::set<std::string, std::less<>> omitted;
  std::vector<JudgeEntry> responses;

  RenderContext& set(std::string_view name, std::string value) {
    values[std::string(name)] = std::move(value);
    return *this;
  }
  RenderContext& omit(std::string_view name) {
    omitted.insert(std::string(name));
    return *this;
  }
};

class PromptTemplate {
 public:
  /// Parses and lints `body`; throws kTemplateLint or kUnknownPlaceholder.
  PromptTemplate(TemplateId id, Locale locale, std::string body) : id_(id), locale_(locale), body_(std::move(body)) {
    nodes_ = detail::TemplateParser(body_).parse();
    lint();
  }

  TemplateId id() const { return id_; }
  Locale locale() const { return locale_; }
  const std::string& body() const { return body_; }

  std::string render(const RenderContext& ctx) const {
    const auto required = required_placeholders(id_);
    const auto omittable = omittable_placeholders(id_);
    for (auto name : required) {
      const bool is_omittable = std::find(omittable.begin(), omittable.end(), name) != omittable.end();
      if (ctx.omitted.contains(name)) {
        if (!is_omittable) throw Error(ErrorCode::kMissingPlaceholder, std::string(name) + " cannot be omitted");
        continue;
      }
      auto it = ctx.values.find(name);
      if (it == ctx.values.end() || text::trim(it->second).empty()) {
        throw Error(ErrorCode::kMissingPlaceholder, std::string(name));
      }
    }
    for (const auto& [name, _] : ctx.values) {
      if (!top_names_.contains(name)) throw Error(ErrorCode::kUnknownPlaceholder, name);
    }
    for (const auto& name : ctx.omitted) {
      if (!top_names_.contains(name)) throw Error(ErrorCode::kUnknownPlaceholder, name);
    }
    if (id_ == TemplateId::kJudge && ctx.responses.empty()) {
      throw Error(ErrorCode::kMissingPlaceholder, std::string(placeholder::kResponses));
    }
    if (id_ != TemplateId::kJudge && !ctx.responses.empty()) {
      throw Error(ErrorCode::kUnknownPlaceholder, std::string(placeholder::kResponses));
    }
    std::string out;
    emit(nodes_, ctx, nullptr, out);
    return out;
  }

 private:
  void lint() {
    detail::collect_names(nodes_, false, top_names_, repeat_names_);
    const auto required = required_placeholders(id_);
    std::set<std::string, std::less<>> allowed(required.begin(), required.end());
    for (const auto& n : top_names_) {
      if (!allowed.contains(n)) throw Error(ErrorCode::kUnknownPlaceholder, n + " in " + std::string(to_string(id_)));
    }
    for (auto name : required) {
      if (!top_names_.contains(name)) {
        throw Error(ErrorCode::kTemplateLint,
                    std::string(to_string(id_)) + " template lacks {" + std::string(name) + "}");
      }
    }
    for (auto name : omittable_placeholders(id_)) {
      if (!detail::has_optional_section(nodes_, name)) {
        throw Error(ErrorCode::kTemplateLint, std::string(to_string(id_)) + " template must wrap {" +
                                                  std::string(name) + "} in {?" + std::string(name) + "}");
      }
    }
    std::set<std::string, std::less<>> sections;
    detail::collect_optional_sections(nodes_, sections);
    const auto omittable = omittable_placeholders(id_);
    for (const auto& name : sections) {
      if (std::find(omittable.begin(), omittable.end(), name) == omittable.end()) {
        throw Error(ErrorCode::kTemplateLint, "{?" + name + "} names no omittable placeholder of " + std::string(to_string(id_)));
      }
    }
    if (id_ == TemplateId::kJudge) {
      if (!detail::has_repeat(nodes_)) throw Error(ErrorCode::kTemplateLint, "judge template lacks {#RESPONSES}");
      for (const auto& n : repeat_names_) {
        if (n != placeholder::kLabel && n != placeholder::kModelTag && n != placeholder::kResponse) {
          throw Error(ErrorCode::kUnknownPlaceholder, n + " in judge response block");
        }
      }
      if (!repeat_names_.contains(std::string(placeholder::kLabel)) ||
          !repeat_names_.contains(std::string(placeholder::kResponse))) {
        throw Error(ErrorCode::kTemplateLint, "judge response block needs {LABEL} and {RESPONSE}");
      }
    } else if (detail::has_repeat(nodes_)) {
      throw Error(ErrorCode::kTemplateLint, "only the judge template may contain a repeated block");
    }
    if ((id_ == TemplateId::kPerspective || id_ == TemplateId::kPhase) &&
        body_.find(example_heading(locale_)) == std::string::npos) {
      throw Error(ErrorCode::kTemplateLint, std::string(to_string(id_)) + " template lacks its one-shot example ('" +
                                                std::string(example_heading(locale_)) + "')");
    }
  }

  void emit(const std::vector<TemplateNode>& nodes, const RenderContext& ctx, const JudgeEntry* entry,
            std::string& out) const {
    for (const auto& n : nodes) {
      switch (n.kind) {
        case TemplateNode::Kind::kText: out += n.value; break;
        case TemplateNode::Kind::kPlaceholder:
          if (entry && n.value == placeholder::kLabel) {
            out += entry->label;
          } else if (entry && n.value == placeholder::kModelTag) {
            out += entry->model_tag;
          } else if (entry && n.value == placeholder::kResponse) {
            out += entry->response;
          } else {
            out += ctx.values.at(n.value);
          }
          break;
        case TemplateNode::Kind::kOptional:
          if (!ctx.omitted.contains(n.value)) emit(n.children, ctx, entry, out);
          break;
        case TemplateNode::Kind::kRepeat:
          for (const auto& e : ctx.responses) emit(n.children, ctx, &e, out);
          break;
      }
    }
  }

  TemplateId id_;
  Locale locale_;
  std::string body_;
  std::vector<TemplateNode> nodes_;
  std::set<std::string, std::less<>> top_names_;
  std::set<std::string, std::less<>> repeat_names_;
};

/// Strips "##!" comment lines.
inline std::string strip_template_comments(std::string_view raw) {
  std::string out;
  std::size_t pos = 0;
  while (pos < raw.size()) {
    auto eol = raw.find('\n', pos);
    const auto line_end = eol == std::string_view::npos ? raw.size() : eol + 1;
    const auto line = raw.substr(pos, line_end - pos);
    if (!text::starts_with(line, "##!")) out += line;
    pos = line_end;
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIOError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// The four templates of one locale, loaded from <dir>/<locale>/<id>.txt.
class TemplateStore {
 public:
  static TemplateStore load(const std::filesystem::path& dir, Locale locale) {
    TemplateStore store;
    store.locale_ = locale;
    for (auto id : kAllTemplateIds) {
      const auto path = dir / std::string(to_string(locale)) / (std::string(to_string(id)) + ".txt");
      auto body = strip_template_comments(read_text_file(path));
      try {
        store.templates_.emplace(id, PromptTemplate(id, locale, std::move(body)));
      } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.detail());
      }
    }
    return store;
  }

  Locale locale() const { return locale_; }
  const PromptTemplate& get(TemplateId id) const { return templates_.at(id); }

 private:
  Locale locale_ = Locale::kEn;
  std::map<TemplateId, PromptTemplate> templates_;
};

}  // namespace counselflow

#endif  // COUNSELFLOW_PROMPTS_HPP_
