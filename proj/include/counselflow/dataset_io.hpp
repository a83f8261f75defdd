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

#ifndef COUNSELFLOW_DATASET_IO_HPP_
#define COUNSELFLOW_DATASET_IO_HPP_

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "counselflow/dialogue.hpp"
#include "counselflow/error.hpp"

namespace counselflow {

using json = nlohmann::json;

namespace detail {

inline const json& require_field(const json& obj, const char* field, std::size_t line) {
  if (!obj.is_object() || !obj.contains(field)) {
    throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": missing field '" + field + "'");
  }
  return obj.at(field);
}

inline std::string require_string(const json& obj, const char* field, std::size_t line) {
  const auto& v = require_field(obj, field, line);
  if (!v.is_string()) {
    throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": field '" + field + "' must be a string");
  }
  return v.get<std::string>();
}

}  // namespace detail

inline json to_json(const Dialogue& d) {
  json us = json::array();
  for (const auto& u : d.utterances) {
    us.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}});
  }
  return {{"id", d.id}, {"topic", d.topic}, {"locale", to_string(d.locale)}, {"utterances", std::move(us)}};
}

/// Parses one dataset line. Utterance text is trimmed; empty utterances are
/// dropped with a warning appended to `warnings`.
inline Dialogue dialogue_from_json(const json& j, std::size_t line, std::vector<std::string>* warnings = nullptr) {
  using detail::require_field;
  using detail::require_string;
  if (!j.is_object()) throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": expected a JSON object");

  Dialogue d;
  d.id = require_string(j, "id", line);
  d.topic = require_string(j, "topic", line);
  const auto loc = require_string(j, "locale", line);
  const auto parsed_locale = parse_locale(loc);
  if (!parsed_locale) {
    throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": field 'locale' has unsupported value '" + loc + "'");
  }
  d.locale = *parsed_locale;

  const auto& us = require_field(j, "utterances", line);
  if (!us.is_array()) throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": field 'utterances' must be an array");
  for (std::size_t k = 0; k < us.size(); ++k) {
    const auto& u = us[k];
    const auto where = "utterances[" + std::to_string(k) + "]";
    if (!u.is_object()) throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": field '" + where + "' must be an object");
    const auto spk = require_string(u, "speaker", line);
    const auto speaker = parse_speaker(spk);
    if (!speaker) {
      throw Error(ErrorCode::kSchemaError,
                  "line " + std::to_string(line) + ": field '" + where + ".speaker' has unsupported value '" + spk + "'");
    }
    auto body = text::trim_copy(require_string(u, "text", line));
    if (body.empty()) {
      const auto msg = "line " + std::to_string(line) + ": dropped empty " + where + " in dialogue '" + d.id + "'";
      spdlog::warn("{}", msg);
      if (warnings) warnings->push_back(msg);
      continue;
    }
    d.utterances.push_back(Utterance{*speaker, std::move(body), d.utterances.size()});
  }
  if (d.utterances.empty()) {
    throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": field 'utterances' has no non-empty utterance");
  }
  return d;
}

/// Reads JSON Lines, calling `fn(json, line_number)` for each non-blank line.
template <typename Fn>
void for_each_jsonl(std::istream& in, Fn&& fn) {
  std::string buf;
  std::size_t line = 0;
  while (std::getline(in, buf)) {
    ++line;
    if (text::trim(buf).empty()) continue;
    json j;
    try {
      j = json::parse(buf);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line) + ": " + e.what());
    }
    fn(j, line);
  }
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIOError, "cannot open '" + path.string() + "'");
  for_each_jsonl(in, std::forward<Fn>(fn));
}

struct LoadedDataset {
  Dataset dataset;
  std::vector<std::string> warnings;
};

inline LoadedDataset read_dataset(std::istream& in, std::string name) {
  LoadedDataset out;
  out.dataset.name = std::move(name);
  for_each_jsonl(in, [&](const json& j, std::size_t line) {
    out.dataset.dialogues.push_back(dialogue_from_json(j, line, &out.warnings));
  });
  if (!out.dataset.dialogues.empty()) out.dataset.locale = out.dataset.dialogues.front().locale;
  out.dataset.stats = compute_stats(out.dataset.dialogues);
  return out;
}

inline LoadedDataset load_dataset_with_warnings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIOError, "cannot open dataset '" + path.string() + "'");
  return read_dataset(in, path.stem().string());
}

inline Dataset load_dataset(const std::filesystem::path& path) { return load_dataset_with_warnings(path).dataset; }

inline void write_dataset(std::ostream& out, const Dataset& ds) {
  for (const auto& d : ds.dialogues) out << to_json(d).dump() << '\n';
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIOError, "cannot write dataset '" + path.string() + "'");
  write_dataset(out, ds);
}

/// Merges every dialogue in place and recomputes stats.
inline Dataset merge_dataset(const Dataset& ds) {
  Dataset out = ds;
  for (auto& d : out.dialogues) d = merge_consecutive(d);
  out.stats = compute_stats(out.dialogues);
  return out;
}

// Instance lists (evaluation samples) use one JSON object per line.

inline json to_json(const Instance& inst) {
  json hist = json::array();
  for (const auto& u : inst.history) hist.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}, {"index", u.index}});
  return {{"instance_id", inst.id()},
          {"dialogue_id", inst.dialogue_id},
          {"locale", to_string(inst.locale)},
          {"history", std::move(hist)},
          {"gold_response", inst.gold_response ? json(*inst.gold_response) : json(nullptr)}};
}

inline Instance instance_from_json(const json& j, std::size_t line) {
  using detail::require_field;
  using detail::require_string;
  Instance inst;
  inst.dialogue_id = require_string(j, "dialogue_id", line);
  const auto loc = parse_locale(require_string(j, "locale", line));
  if (!loc) throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": field 'locale' is not ja, zh or en");
  inst.locale = *loc;
  const auto& hist = require_field(j, "history", line);
  if (!hist.is_array() || hist.empty()) {
    throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": field 'history' must be a non-empty array");
  }
  for (const auto& u : hist) {
    const auto spk = parse_speaker(require_string(u, "speaker", line));
    if (!spk) throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": bad speaker in 'history'");
    const auto index = u.contains("index") ? u.at("index").get<std::size_t>() : inst.history.size();
    inst.history.push_back({*spk, require_string(u, "text", line), index});
  }
  if (inst.history.back().speaker != Speaker::kClient) {
    throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": history must end with a client utterance");
  }
  if (j.contains("gold_response") && j.at("gold_response").is_string()) inst.gold_response = j.at("gold_response").get<std::string>();
  return inst;
}

inline std::vector<Instance> load_instances(const std::filesystem::path& path) {
  std::vector<Instance> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) { out.push_back(instance_from_json(j, line)); });
  return out;
}

inline void save_instances(const std::filesystem::path& path, std::span<const Instance> instances) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIOError, "cannot write '" + path.string() + "'");
  for (const auto& inst : instances) out << to_json(inst).dump() << '\n';
}

}  // namespace counselflow

#endif  // COUNSELFLOW_DATASET_IO_HPP_
