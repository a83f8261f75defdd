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

#ifndef COUNSELFLOW_DIALOGUE_HPP_
#define COUNSELFLOW_DIALOGUE_HPP_

#include <algorithm>
#include <cstddef>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "counselflow/error.hpp"
#include "counselflow/text.hpp"

namespace counselflow {

enum class Speaker { kClient, kCounselor };
enum class Locale { kJa, kZh, kEn };

inline std::string_view to_string(Speaker s) {
  return s == Speaker::kClient ? "client" : "counselor";
}

inline std::optional<Speaker> parse_speaker(std::string_view s) {
  if (s == "client") return Speaker::kClient;
  if (s == "counselor") return Speaker::kCounselor;
  return std::nullopt;
}

inline std::string_view to_string(Locale l) {
  switch (l) {
    case Locale::kJa: return "ja";
    case Locale::kZh: return "zh";
    case Locale::kEn: return "en";
  }
  return "en";
}

inline std::optional<Locale> parse_locale(std::string_view s) {
  if (s == "ja") return Locale::kJa;
  if (s == "zh") return Locale::kZh;
  if (s == "en") return Locale::kEn;
  return std::nullopt;
}

/// Separator placed between merged same-speaker utterances.
inline std::string default_separator(Locale l) { return l == Locale::kEn ? " " : ""; }

struct Utterance {
  Speaker speaker = Speaker::kClient;
  std::string text;
  std::size_t index = 0;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Dialogue {
  std::string id;
  std::string topic;
  Locale locale = Locale::kEn;
  std::vector<Utterance> utterances;
  bool merged = false;

  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

/// A history prefix ending in a client turn, paired with the counselor
/// reply that actually followed it.
struct Instance {
  std::string dialogue_id;
  std::vector<Utterance> history;
  std::optional<std::string> gold_response;
  Locale locale = Locale::kEn;

  /// "<dialogue_id>#<index of the final client utterance>"
  std::string id() const {
    return dialogue_id + "#" + (history.empty() ? std::string("0") : std::to_string(history.back().index));
  }

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct DatasetStats {
  std::size_t dialogues = 0;
  std::size_t utterances = 0;
  std::size_t client_utterances = 0;
  std::size_t counselor_utterances = 0;
  double mean_length = 0.0;  // code points per utterance
  double mean_client_length = 0.0;
  double mean_counselor_length = 0.0;

  double utterances_per_dialogue() const {
    return dialogues == 0 ? 0.0 : static_cast<double>(utterances) / static_cast<double>(dialogues);
  }
  double client_per_dialogue() const {
    return dialogues == 0 ? 0.0 : static_cast<double>(client_utterances) / static_cast<double>(dialogues);
  }
  double counselor_per_dialogue() const {
    return dialogues == 0 ? 0.0 : static_cast<double>(counselor_utterances) / static_cast<double>(dialogues);
  }

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

struct Dataset {
  std::string name;
  Locale locale = Locale::kEn;
  std::vector<Dialogue> dialogues;
  DatasetStats stats;
};

inline DatasetStats compute_stats(std::span<const Dialogue> dialogues) {
  DatasetStats st;
  st.dialogues = dialogues.size();
  std::size_t len_all = 0, len_client = 0, len_counselor = 0;
  for (const auto& d : dialogues) {
    for (const auto& u : d.utterances) {
      const auto len = text::codepoint_count(u.text);
      ++st.utterances;
      len_all += len;
      if (u.speaker == Speaker::kClient) {
        ++st.client_utterances;
        len_client += len;
      } else {
        ++st.counselor_utterances;
        len_counselor += len;
      }
    }
  }
  auto mean = [](std::size_t total, std::size_t n) {
    return n == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(n);
  };
  st.mean_length = mean(len_all, st.utterances);
  st.mean_client_length = mean(len_client, st.client_utterances);
  st.mean_counselor_length = mean(len_counselor, st.counselor_utterances);
  return st;
}

inline bool stats_consistent(const Dataset& ds) { return compute_stats(ds.dialogues) == ds.stats; }

/// Joins each run of same-speaker utterances into one utterance. Indices are
/// renumbered from zero. An empty `separator` override falls back to the
/// locale default (space for en, nothing for ja/zh).
inline Dialogue merge_consecutive(const Dialogue& d, std::optional<std::string> separator = std::nullopt) {
  if (d.utterances.empty()) throw Error(ErrorCode::kEmptyDialogue, "dialogue '" + d.id + "' has no utterances");
  const std::string sep = separator.value_or(default_separator(d.locale));

  Dialogue out;
  out.id = d.id;
  out.topic = d.topic;
  out.locale = d.locale;
  out.merged = true;
  for (const auto& u : d.utterances) {
    if (!out.utterances.empty() && out.utterances.back().speaker == u.speaker) {
      out.utterances.back().text += sep;
      out.utterances.back().text += u.text;
    } else {
      out.utterances.push_back(Utterance{u.speaker, u.text, out.utterances.size()});
    }
  }
  return out;
}

inline bool alternates(std::span<const Utterance> us) {
  return std::adjacent_find(us.begin(), us.end(), [](const Utterance& a, const Utterance& b) {
           return a.speaker == b.speaker;
         }) == us.end();
}

/// One instance per client utterance immediately followed by a counselor
/// utterance. A trailing client turn has no gold reply and yields nothing.
inline std::vector<Instance> extract_instances(const Dialogue& d) {
  if (!d.merged) throw Error(ErrorCode::kNotMerged, "dialogue '" + d.id + "' must be merged before extraction");
  std::vector<Instance> out;
  const auto& us = d.utterances;
  for (std::size_t i = 0; i + 1 < us.size(); ++i) {
    if (us[i].speaker == Speaker::kClient && us[i + 1].speaker == Speaker::kCounselor) {
      Instance inst;
      inst.dialogue_id = d.id;
      inst.locale = d.locale;
      inst.history.assign(us.begin(), us.begin() + static_cast<std::ptrdiff_t>(i) + 1);
      inst.gold_response = us[i + 1].text;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

inline std::vector<Instance> extract_instances(std::span<const Dialogue> dialogues) {
  std::vector<Instance> out;
  for (const auto& d : dialogues) {
    auto part = extract_instances(d);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

/// The final min(n, size) utterances, in order.
inline std::span<const Utterance> last_window(std::span<const Utterance> history, std::size_t n) {
  const auto take = std::min(n, history.size());
  return history.subspan(history.size() - take, take);
}

}  // namespace counselflow

#endif  // COUNSELFLOW_DIALOGUE_HPP_
