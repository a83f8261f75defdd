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

#ifndef COUNSELFLOW_PHASES_HPP_
#define COUNSELFLOW_PHASES_HPP_

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "counselflow/dialogue.hpp"
#include "counselflow/error.hpp"
#include "counselflow/prompts.hpp"
#include "counselflow/text.hpp"

namespace counselflow {

/// The six counseling stages, in session order.
enum class Phase {
  kRapportBuilding,
  kProblemIdentification,
  kEmotionExploration,
  kProblemClarification,
  kProblemSolving,
  kHopefulWrapUp,
};

inline constexpr std::array<Phase, 6> kAllPhases = {
    Phase::kRapportBuilding,      Phase::kProblemIdentification, Phase::kEmotionExploration,
    Phase::kProblemClarification, Phase::kProblemSolving,        Phase::kHopefulWrapUp,
};

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::kRapportBuilding: return "RapportBuilding";
    case Phase::kProblemIdentification: return "ProblemIdentification";
    case Phase::kEmotionExploration: return "EmotionExploration";
    case Phase::kProblemClarification: return "ProblemClarification";
    case Phase::kProblemSolving: return "ProblemSolving";
    case Phase::kHopefulWrapUp: return "HopefulWrapUp";
  }
  return "RapportBuilding";
}

inline std::optional<Phase> parse_phase_id(std::string_view s) {
  for (auto p : kAllPhases) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

struct PhaseAssessment {
  std::optional<Phase> phase;
  std::string narrative;

  friend bool operator==(const PhaseAssessment&, const PhaseAssessment&) = default;
};

/// Folding applied to both aliases and narratives before matching: ASCII
/// lowercase, quote marks removed, hyphens/underscores and whitespace runs
/// collapsed to one space.
inline std::string normalize_for_match(std::string_view s) {
  static constexpr std::string_view kQuotes[] = {
      "\xE2\x80\x9C", "\xE2\x80\x9D", "\xE2\x80\x98", "\xE2\x80\x99",  // “ ” ‘ ’
      "\xE3\x80\x8C", "\xE3\x80\x8D", "\xE3\x80\x8E", "\xE3\x80\x8F",  // 「 」 『 』
      "\xEF\xBC\x82",                                                  // ＂
  };
  static constexpr std::string_view kDashes[] = {"\xE2\x80\x90", "\xE2\x80\x91", "\xE2\x80\x93"};  // ‐ ‑ –
  std::string out;
  out.reserve(s.size());
  auto push_space = [&] {
    if (!out.empty() && out.back() != ' ') out.push_back(' ');
  };
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == '"' || c == '\'' || c == '*') {
      ++i;
      continue;
    }
    if (c == '-' || c == '_' || text::is_space(c)) {
      push_space();
      ++i;
      continue;
    }
    bool matched = false;
    for (auto q : kQuotes) {
      if (s.compare(i, q.size(), q) == 0) {
        i += q.size();
        matched = true;
        break;
      }
    }
    if (!matched) {
      for (auto d : kDashes) {
        if (s.compare(i, d.size(), d) == 0) {
          push_space();
          i += d.size();
          matched = true;
          break;
        }
      }
    }
    if (matched) continue;
    out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
    ++i;
  }
  return out;
}

/// Localized names, descriptions and surface aliases for the six stages.
class PhaseTable {
 public:
  struct Entry {
    std::string name;
    std::string description;
    std::vector<std::string> aliases;
  };

  /// Throws kSchemaError when a stage is missing, has no alias, or when an
  /// alias resolves to more than one stage.
  static PhaseTable from_json(const nlohmann::json& j, Locale locale) {
    PhaseTable t;
    t.locale_ = locale;
    if (!j.is_object()) throw Error(ErrorCode::kSchemaError, "phase table must be an object");
    for (const auto& [key, value] : j.items()) {
      if (key.starts_with("//")) continue;  // comment entry
      const auto phase = parse_phase_id(key);
      if (!phase) throw Error(ErrorCode::kSchemaError, "unknown phase '" + key + "'");
      Entry e;
      try {
        e.name = value.at("name").get<std::string>();
        e.description = value.at("description").get<std::string>();
        e.aliases = value.at("aliases").get<std::vector<std::string>>();
      } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorCode::kSchemaError, "phase '" + key + "': " + ex.what());
      }
      t.entries_.emplace(*phase, std::move(e));
    }
    for (auto p : kAllPhases) {
      auto it = t.entries_.find(p);
      if (it == t.entries_.end()) throw Error(ErrorCode::kSchemaError, "phase table lacks " + std::string(to_string(p)));
      if (it->second.aliases.empty()) {
        throw Error(ErrorCode::kSchemaError, std::string(to_string(p)) + " has no alias");
      }
      for (const auto& alias : it->second.aliases) {
        auto norm = normalize_for_match(alias);
        if (norm.empty()) throw Error(ErrorCode::kSchemaError, "empty alias for " + std::string(to_string(p)));
        auto [pos, inserted] = t.alias_index_.emplace(norm, p);
        if (!inserted && pos->second != p) {
          throw Error(ErrorCode::kSchemaError, "alias '" + alias + "' maps to both " +
                                                   std::string(to_string(pos->second)) + " and " +
                                                   std::string(to_string(p)));
        }
      }
    }
    return t;
  }

  static PhaseTable load(const std::filesystem::path& template_dir, Locale locale) {
    const auto path = template_dir / ("phases." + std::string(to_string(locale)) + ".json");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
    }
    try {
      return from_json(j, locale);
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ": " + e.detail());
    }
  }

  Locale locale() const { return locale_; }
  const Entry& entry(Phase p) const { return entries_.at(p); }

  /// Normalized alias -> stage.
  const std::map<std::string, Phase>& alias_index() const { return alias_index_; }

  /// The stage whose alias occurs earliest in `narrative`; ties at the same
  /// position go to the longest alias. The narrative is kept verbatim.
  PhaseAssessment parse(std::string_view narrative) const {
    if (text::trim(narrative).empty()) throw Error(ErrorCode::kContractViolation, "phase narrative is empty");
    const auto hay = normalize_for_match(narrative);
    std::optional<Phase> best;
    std::size_t best_pos = std::string::npos;
    std::size_t best_len = 0;
    for (const auto& [alias, phase] : alias_index_) {
      const auto pos = hay.find(alias);
      if (pos == std::string::npos) continue;
      if (pos < best_pos || (pos == best_pos && alias.size() > best_len)) {
        best = phase;
        best_pos = pos;
        best_len = alias.size();
      }
    }
    return {best, std::string(narrative)};
  }

 private:
  Locale locale_ = Locale::kEn;
  std::map<Phase, Entry> entries_;
  std::map<std::string, Phase> alias_index_;
};

inline PhaseAssessment parse_phase(std::string_view narrative, const PhaseTable& table) {
  return table.parse(narrative);
}

}  // namespace counselflow

#endif  // COUNSELFLOW_PHASES_HPP_
