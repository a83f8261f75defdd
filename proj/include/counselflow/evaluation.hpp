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

#ifndef COUNSELFLOW_EVALUATION_HPP_
#define COUNSELFLOW_EVALUATION_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "counselflow/dataset_io.hpp"
#include "counselflow/dialogue.hpp"
#include "counselflow/error.hpp"
#include "counselflow/llm_client.hpp"
#include "counselflow/prompts.hpp"
#include "counselflow/rng.hpp"
#include "counselflow/text.hpp"

namespace counselflow {

enum class Dimension { kComprehensiveness, kProfessionalism, kAuthenticity, kSafety };

inline constexpr std::array<Dimension, 4> kAllDimensions = {Dimension::kComprehensiveness, Dimension::kProfessionalism,
                                                            Dimension::kAuthenticity, Dimension::kSafety};

inline std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::kComprehensiveness: return "Comprehensiveness";
    case Dimension::kProfessionalism: return "Professionalism";
    case Dimension::kAuthenticity: return "Authenticity";
    case Dimension::kSafety: return "Safety";
  }
  return "Comprehensiveness";
}

/// Column header used in score tables.
inline std::string_view short_name(Dimension d) {
  switch (d) {
    case Dimension::kComprehensiveness: return "Comp";
    case Dimension::kProfessionalism: return "Prof";
    case Dimension::kAuthenticity: return "Auth";
    case Dimension::kSafety: return "Safe";
  }
  return "Comp";
}

inline constexpr double kMinScore = 0.0;
inline constexpr double kMaxScore = 5.0;

struct DimensionScore {
  double score = 0.0;
  std::string reason;

  friend bool operator==(const DimensionScore&, const DimensionScore&) = default;
};

struct JudgeScore {
  std::string judge_name;
  std::string response_label;
  std::string model_tag;
  std::array<DimensionScore, 4> dims{};

  double score(Dimension d) const { return dims[static_cast<std::size_t>(d)].score; }
  const std::string& reason(Dimension d) const { return dims[static_cast<std::size_t>(d)].reason; }

  friend bool operator==(const JudgeScore&, const JudgeScore&) = default;
};

struct LabelAssignment {
  std::string label;
  std::string model_tag;

  friend bool operator==(const LabelAssignment&, const LabelAssignment&) = default;
};

struct ResponseCandidate {
  std::string model_tag;
  std::string text;
};

// ---------------------------------------------------------------------------
// Judge prompt

inline std::string response_label(std::size_t i) {
  if (i >= 26) throw Error(ErrorCode::kInvalidRequest, "at most 26 responses can be judged together");
  return std::string(1, static_cast<char>('A' + i));
}

struct JudgeRequest {
  std::string prompt;
  std::vector<LabelAssignment> label_map;  // label order
};

/// Labels responses A, B, C... in input order, or in a seeded permutation of
/// it when `shuffle_seed` is set.
inline JudgeRequest build_judge_request(const PromptTemplate& judge_template, std::span<const Utterance> history,
                                        std::span<const ResponseCandidate> responses,
                                        std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  if (judge_template.id() != TemplateId::kJudge) throw Error(ErrorCode::kInvalidRequest, "not a judge template");
  if (responses.size() < 2) {
    throw Error(ErrorCode::kTooFewResponses, "need at least 2 responses, got " + std::to_string(responses.size()));
  }
  std::vector<std::size_t> order(responses.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle_seed) SeededRng(*shuffle_seed).shuffle(order);

  JudgeRequest out;
  RenderContext ctx;
  ctx.set(placeholder::kDialogueHistory, format_history(history, judge_template.locale()));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& r = responses[order[i]];
    auto label = response_label(i);
    out.label_map.push_back({label, r.model_tag});
    ctx.responses.push_back({std::move(label), r.model_tag, r.text});
  }
  out.prompt = judge_template.render(ctx);
  return out;
}

// ---------------------------------------------------------------------------
// Judge output parsing

namespace detail {

/// Line with fullwidth punctuation/digits folded to ASCII; origin[i] is the
/// byte offset in the source line of folded byte i.
struct FoldedLine {
  std::string text;
  std::vector<std::size_t> origin;
};

inline FoldedLine fold_fullwidth(std::string_view line) {
  static const std::pair<std::string_view, char> kMap[] = {
      {"\xEF\xBC\xBB", '['}, {"\xEF\xBC\xBD", ']'}, {"\xE3\x80\x90", '['}, {"\xE3\x80\x91", ']'},
      {"\xEF\xBC\x88", '('}, {"\xEF\xBC\x89", ')'}, {"\xEF\xBC\x9A", ':'}, {"\xEF\xBC\x9B", ';'},
      {"\xEF\xBC\x8C", ','}, {"\xE3\x80\x81", ','}, {"\xEF\xBC\x8E", '.'}, {"\xEF\xBC\x8F", '/'},
      {"\xEF\xBC\x8A", '*'}, {"\xE3\x80\x80", ' '},
  };
  FoldedLine out;
  std::size_t i = 0;
  while (i < line.size()) {
    bool mapped = false;
    // Fullwidth digits U+FF10..U+FF19: EF BC 90..99.
    if (i + 2 < line.size() && static_cast<unsigned char>(line[i]) == 0xEF &&
        static_cast<unsigned char>(line[i + 1]) == 0xBC) {
      const auto b = static_cast<unsigned char>(line[i + 2]);
      if (b >= 0x90 && b <= 0x99) {
        out.text.push_back(static_cast<char>('0' + (b - 0x90)));
        out.origin.push_back(i);
        i += 3;
        continue;
      }
    }
    for (const auto& [wide, ascii] : kMap) {
      if (line.compare(i, wide.size(), wide) == 0) {
        out.text.push_back(ascii);
        out.origin.push_back(i);
        i += wide.size();
        mapped = true;
        break;
      }
    }
    if (mapped) continue;
    out.text.push_back(line[i]);
    out.origin.push_back(i);
    ++i;
  }
  out.origin.push_back(line.size());
  return out;
}

inline const std::regex& block_header_regex() {
  static const std::regex re(
      R"(^[\s>#*_\-]*\[?\s*\**\s*[Rr][Ee][Ss][Pp][Oo][Nn][Ss][Ee]\s+([A-Z]{1,2})(?![A-Za-z])\s*\**\s*(?:\([^)]*\))?\s*\**\s*\]?\s*\**\s*:?\s*\**\s*$)");
  return re;
}

inline std::string_view dimension_pattern(Dimension d) {
  switch (d) {
    case Dimension::kComprehensiveness: return "comprehensiveness|全面性|包括性|網羅性";
    case Dimension::kProfessionalism: return "professionalism|专业性|専門性|專業性";
    case Dimension::kAuthenticity: return "authenticity|真实性|真正性|真実性|真實性";
    case Dimension::kSafety: return "safety|安全性";
  }
  return "";
}

inline const std::regex& dimension_regex(Dimension d) {
  static const std::array<std::regex, 4> res = [] {
    std::array<std::regex, 4> out;
    for (auto dim : kAllDimensions) {
      const auto pattern = std::string(R"(^[\s>#*_\-|]*(?:)") + std::string(dimension_pattern(dim)) +
                           R"()\s*\**\s*(?:\([^)]*\))?\s*\**\s*:\s*&?\s*\**\s*(-?\d+(?:\.\d+)?)\s*(?:/\s*5(?:\.0+)?)?\s*(?:points?|pts?|点|分)?\s*\**\s*(?:[;,|]|-\s)?\s*)";
      out[static_cast<std::size_t>(dim)] = std::regex(pattern, std::regex::icase);
    }
    return out;
  }();
  return res[static_cast<std::size_t>(d)];
}

inline std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto eol = s.find('\n', pos);
    if (eol == std::string_view::npos) eol = s.size();
    auto line = s.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    pos = eol + 1;
  }
  return out;
}

}  // namespace detail

/// Extracts the four dimension scores for each expected label. Blocks may
/// appear in any order; bold markers, fullwidth punctuation and decimal
/// scores are accepted. Reasons are kept verbatim.
inline std::vector<JudgeScore> parse_judge_output(std::string_view text, std::span<const std::string> expected_labels) {
  if (expected_labels.empty()) throw Error(ErrorCode::kInvalidRequest, "no expected labels");
  const auto lines = detail::split_lines(text);

  // Header line index per label (first occurrence).
  std::vector<std::pair<std::size_t, std::string>> headers;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto folded = detail::fold_fullwidth(lines[i]);
    std::smatch m;
    if (std::regex_match(folded.text, m, detail::block_header_regex())) headers.emplace_back(i, m[1].str());
  }

  std::vector<JudgeScore> out;
  for (const auto& label : expected_labels) {
    auto it = std::find_if(headers.begin(), headers.end(), [&](const auto& h) { return h.second == label; });
    if (it == headers.end()) throw Error(ErrorCode::kMissingBlock, "Response " + label);
    const auto begin = it->first + 1;
    auto end = lines.size();
    for (const auto& h : headers) {
      if (h.first > it->first) {
        end = h.first;
        break;
      }
    }

    JudgeScore js;
    js.response_label = label;
    for (auto dim : kAllDimensions) {
      bool found = false;
      for (auto i = begin; i < end && !found; ++i) {
        const auto folded = detail::fold_fullwidth(lines[i]);
        std::smatch m;
        if (!std::regex_search(folded.text, m, detail::dimension_regex(dim), std::regex_constants::match_continuous)) {
          continue;
        }
        const double score = std::stod(m[1].str());
        if (!(score >= kMinScore && score <= kMaxScore)) {
          throw Error(ErrorCode::kScoreOutOfRange,
                      "Response " + label + " " + std::string(to_string(dim)) + " = " + m[1].str());
        }
        const auto reason_start = folded.origin[static_cast<std::size_t>(m.position(0) + m.length(0))];
        auto reason = text::trim_copy(lines[i].substr(reason_start));
        js.dims[static_cast<std::size_t>(dim)] = {score, std::move(reason)};
        found = true;
      }
      if (!found) {
        throw Error(ErrorCode::kMissingDimension, "Response " + label + " lacks " + std::string(to_string(dim)));
      }
    }
    out.push_back(std::move(js));
  }
  return out;
}

/// Writes scores in the judge output format; the inverse of
/// parse_judge_output for well-formed input.
inline std::string format_judge_output(std::span<const JudgeScore> scores) {
  std::ostringstream s;
  for (const auto& js : scores) {
    s << "[Response " << js.response_label;
    if (!js.model_tag.empty()) s << " (" << js.model_tag << ")";
    s << "]\n";
    for (auto dim : kAllDimensions) {
      s << to_string(dim) << ": " << js.score(dim) << "; " << js.reason(dim) << "\n";
    }
    s << "\n";
  }
  return s.str();
}

// ---------------------------------------------------------------------------
// Judging

struct JudgeSpec {
  std::string name;
  ChatClient* client = nullptr;
  std::string model;
};

struct JudgeFailure {
  std::string judge_name;
  ErrorCode code = ErrorCode::kMalformedResponse;
  std::string message;
};

struct ScoreCard {
  std::string instance_id;
  std::vector<LabelAssignment> label_map;
  std::vector<std::string> judges;
  std::vector<JudgeScore> scores;
  std::vector<JudgeFailure> failures;

  /// Every model scored by every configured judge.
  bool complete() const { return failures.empty() && scores.size() == judges.size() * label_map.size(); }
};

struct JudgeOptions {
  std::optional<std::uint64_t> shuffle_seed;
  std::optional<int> max_tokens;
  ResponseCache* cache = nullptr;
};

/// One temperature-0 request per judge, all responses in one prompt. A judge
/// whose call or output fails is recorded on the card, which is then partial.
inline ScoreCard judge_instance(std::span<const JudgeSpec> judges, const PromptTemplate& judge_template,
                                const Instance& instance, std::span<const ResponseCandidate> responses,
                                const JudgeOptions& options = {}) {
  if (judges.empty()) throw Error(ErrorCode::kConfigError, "no judges configured");
  const auto request = build_judge_request(judge_template, instance.history, responses, options.shuffle_seed);

  ScoreCard card;
  card.instance_id = instance.id();
  card.label_map = request.label_map;
  std::vector<std::string> labels;
  for (const auto& la : request.label_map) labels.push_back(la.label);

  for (const auto& judge : judges) {
    card.judges.push_back(judge.name);
    try {
      if (!judge.client) throw Error(ErrorCode::kConfigError, "judge '" + judge.name + "' has no client");
      ChatRequest req;
      req.model = judge.model;
      req.messages.push_back({Role::kUser, request.prompt});
      req.temperature = 0.0;
      req.max_tokens = options.max_tokens;
      req.purpose = "judge";
      const auto result = options.cache ? judge.client->complete_cached(*options.cache, req) : judge.client->complete(req);
      auto scores = parse_judge_output(result.text, labels);
      for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i].judge_name = judge.name;
        scores[i].model_tag = request.label_map[i].model_tag;
        card.scores.push_back(std::move(scores[i]));
      }
    } catch (const Error& e) {
      card.failures.push_back({judge.name, e.code(), e.what()});
    }
  }
  return card;
}

inline json to_json(const ScoreCard& card) {
  json labels = json::array();
  for (const auto& la : card.label_map) labels.push_back({{"label", la.label}, {"model", la.model_tag}});
  json scores = json::array();
  for (const auto& s : card.scores) {
    json dims = json::object();
    for (auto d : kAllDimensions) dims[std::string(to_string(d))] = {{"score", s.score(d)}, {"reason", s.reason(d)}};
    scores.push_back({{"judge", s.judge_name}, {"label", s.response_label}, {"model", s.model_tag}, {"dimensions", dims}});
  }
  json failures = json::array();
  for (const auto& f : card.failures) {
    failures.push_back({{"judge", f.judge_name}, {"error", to_string(f.code)}, {"message", f.message}});
  }
  return {{"instance_id", card.instance_id}, {"label_map", labels}, {"judges", card.judges},
          {"scores", scores},                {"failures", failures}, {"complete", card.complete()}};
}

inline ScoreCard card_from_json(const json& j, std::size_t line = 0) {
  ScoreCard card;
  try {
    card.instance_id = j.at("instance_id").get<std::string>();
    for (const auto& la : j.at("label_map")) card.label_map.push_back({la.at("label"), la.at("model")});
    card.judges = j.at("judges").get<std::vector<std::string>>();
    for (const auto& s : j.at("scores")) {
      JudgeScore js;
      js.judge_name = s.at("judge").get<std::string>();
      js.response_label = s.at("label").get<std::string>();
      js.model_tag = s.at("model").get<std::string>();
      for (auto d : kAllDimensions) {
        const auto& dj = s.at("dimensions").at(std::string(to_string(d)));
        js.dims[static_cast<std::size_t>(d)] = {dj.at("score").get<double>(), dj.value("reason", std::string())};
      }
      card.scores.push_back(std::move(js));
    }
    for (const auto& f : j.value("failures", json::array())) {
      card.failures.push_back({f.at("judge").get<std::string>(), ErrorCode::kMalformedResponse, f.value("message", "")});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": " + e.what());
  }
  return card;
}

inline std::vector<ScoreCard> load_cards(const std::filesystem::path& path) {
  std::vector<ScoreCard> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) { out.push_back(card_from_json(j, line)); });
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateRow {
  std::string model;
  std::array<double, 4> means{};
  double avg = 0.0;
  std::size_t samples = 0;  // judge x instance scores behind each mean
};

struct AggregateTable {
  std::vector<AggregateRow> rows;  // sorted by model tag
  std::size_t complete_cards = 0;
  std::size_t excluded_partial = 0;
};

/// Per-model mean of each dimension over all judges and instances of the
/// complete cards; Avg is the mean of the four dimension means.
inline AggregateTable aggregate(std::span<const ScoreCard> cards) {
  AggregateTable table;
  struct Acc {
    std::array<double, 4> sum{};
    std::size_t n = 0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& card : cards) {
    if (!card.complete()) {
      ++table.excluded_partial;
      continue;
    }
    ++table.complete_cards;
    for (const auto& s : card.scores) {
      auto& a = acc[s.model_tag];
      for (auto d : kAllDimensions) a.sum[static_cast<std::size_t>(d)] += s.score(d);
      ++a.n;
    }
  }
  if (table.complete_cards == 0) throw Error(ErrorCode::kNoCompleteCards, std::to_string(table.excluded_partial) + " partial cards");
  for (const auto& [model, a] : acc) {
    AggregateRow row;
    row.model = model;
    row.samples = a.n;
    for (std::size_t k = 0; k < 4; ++k) row.means[k] = a.sum[k] / static_cast<double>(a.n);
    row.avg = (row.means[0] + row.means[1] + row.means[2] + row.means[3]) / 4.0;
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline std::string to_csv(const AggregateTable& table, int precision = 2) {
  std::ostringstream s;
  s << "model";
  for (auto d : kAllDimensions) s << ',' << short_name(d);
  s << ",Avg\n";
  s << std::fixed << std::setprecision(precision);
  for (const auto& r : table.rows) {
    s << r.model;
    for (double m : r.means) s << ',' << m;
    s << ',' << r.avg << '\n';
  }
  return s.str();
}

inline json to_json(const AggregateTable& table) {
  json rows = json::array();
  for (const auto& r : table.rows) {
    json row = {{"model", r.model}};
    for (auto d : kAllDimensions) row[std::string(short_name(d))] = r.means[static_cast<std::size_t>(d)];
    row["Avg"] = r.avg;
    row["n"] = r.samples;
    rows.push_back(std::move(row));
  }
  return {{"columns", {"Comp", "Prof", "Auth", "Safe", "Avg"}},
          {"rows", rows},
          {"complete_cards", table.complete_cards},
          {"excluded_partial", table.excluded_partial}};
}

// ---------------------------------------------------------------------------
// Human-evaluation sampling and pairwise packs

/// Samples `per_dialogue` instances from each dialogue without replacement.
/// Output is grouped by dialogue in input order, positions ascending.
inline std::vector<Instance> sample_eval_instances(std::span<const Dialogue> merged_dialogues, std::size_t per_dialogue,
                                                   std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<Instance> out;
  for (const auto& d : merged_dialogues) {
    auto pool = extract_instances(d);
    if (pool.size() < per_dialogue) {
      throw Error(ErrorCode::kInsufficientInstances, d.id + " has " + std::to_string(pool.size()) + " instances, need " +
                                                         std::to_string(per_dialogue));
    }
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // Partial Fisher-Yates: the first per_dialogue slots are the sample.
    for (std::size_t i = 0; i < per_dialogue; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(per_dialogue);
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) out.push_back(std::move(pool[i]));
  }
  return out;
}

enum class Verdict { kSide1, kSide2, kTie };

inline std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "side1") return Verdict::kSide1;
  if (s == "side2") return Verdict::kSide2;
  if (s == "tie") return Verdict::kTie;
  return std::nullopt;
}

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kSide1: return "side1";
    case Verdict::kSide2: return "side2";
    case Verdict::kTie: return "tie";
  }
  return "tie";
}

struct PairItem {
  std::string item_id;
  std::string history;
  std::string side1;
  std::string side2;
};

struct PairKeyEntry {
  std::string item_id;
  std::string instance_id;
  std::string side1_model;
  std::string side2_model;
};

struct PairPack {
  std::vector<PairItem> items;
  std::vector<PairKeyEntry> key;
};

/// model -> instance id -> response text
using OutputsByModel = std::map<std::string, std::map<std::string, std::string>>;

/// One item per instance per model pair. Side order is a seeded coin flip,
/// items are shuffled, and ids are sequential after shuffling so neither
/// reveals the models. Model identities live only in the key.
inline PairPack build_pairwise_pack(std::span<const Instance> instances, const OutputsByModel& outputs,
                                    std::span<const std::string> models, std::uint64_t seed) {
  if (models.size() < 2) throw Error(ErrorCode::kTooFewResponses, "pairwise comparison needs at least 2 models");
  for (const auto& inst : instances) {
    for (const auto& m : models) {
      auto mit = outputs.find(m);
      if (mit == outputs.end() || !mit->second.contains(inst.id())) {
        throw Error(ErrorCode::kMissingOutput, inst.id() + " has no output from " + m);
      }
    }
  }

  struct Draft {
    const Instance* instance;
    std::string first, second;
  };
  std::vector<Draft> drafts;
  for (const auto& inst : instances) {
    for (std::size_t a = 0; a < models.size(); ++a) {
      for (std::size_t b = a + 1; b < models.size(); ++b) drafts.push_back({&inst, models[a], models[b]});
    }
  }
  SeededRng rng(seed);
  for (auto& d : drafts) {
    if (rng.coin()) std::swap(d.first, d.second);
  }
  rng.shuffle(drafts);

  PairPack pack;
  const auto width = std::to_string(std::max<std::size_t>(drafts.size(), 1)).size();
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    const auto& d = drafts[i];
    auto num = std::to_string(i + 1);
    auto id = "item-" + std::string(width > num.size() ? width - num.size() : 0, '0') + num;
    pack.items.push_back({id, format_history(d.instance->history, d.instance->locale),
                          outputs.at(d.first).at(d.instance->id()), outputs.at(d.second).at(d.instance->id())});
    pack.key.push_back({std::move(id), d.instance->id(), d.first, d.second});
  }
  return pack;
}

/// Counts from the point of view of `model_a` (the lexicographically
/// smaller tag of the pair).
struct PairTally {
  std::string model_a;
  std::string model_b;
  std::size_t win = 0;
  std::size_t lose = 0;
  std::size_t tie = 0;
  double win_rate = 0.0;
  double lose_rate = 0.0;
  double tie_rate = 0.0;

  std::size_t judged() const { return win + lose + tie; }
};

using Tally = std::map<std::pair<std::string, std::string>, PairTally>;
using Judgments = std::map<std::string, Verdict>;

inline void fill_rates(PairTally& t) {
  const auto n = static_cast<double>(t.judged());
  if (n == 0) return;
  t.win_rate = static_cast<double>(t.win) / n;
  t.lose_rate = static_cast<double>(t.lose) / n;
  t.tie_rate = static_cast<double>(t.tie) / n;
}

inline Tally tally_pairwise(const Judgments& judgments, std::span<const PairKeyEntry> key) {
  std::map<std::string, const PairKeyEntry*> by_id;
  for (const auto& k : key) by_id[k.item_id] = &k;
  Tally tally;
  for (const auto& [item_id, verdict] : judgments) {
    auto it = by_id.find(item_id);
    if (it == by_id.end()) throw Error(ErrorCode::kUnknownItem, item_id);
    const auto& k = *it->second;
    const bool flipped = k.side2_model < k.side1_model;
    const auto& a = flipped ? k.side2_model : k.side1_model;
    const auto& b = flipped ? k.side1_model : k.side2_model;
    auto& t = tally[{a, b}];
    t.model_a = a;
    t.model_b = b;
    if (verdict == Verdict::kTie) {
      ++t.tie;
    } else if ((verdict == Verdict::kSide1) != flipped) {
      ++t.win;
    } else {
      ++t.lose;
    }
  }
  for (auto& [_, t] : tally) fill_rates(t);
  return tally;
}

enum class TallyMode { kPerEvaluatorMean, kPooled };

/// Combines several evaluators' judgments. Counts are always summed; rates
/// are either the mean of each evaluator's rates or recomputed from the
/// pooled counts.
inline Tally tally_evaluators(std::span<const Judgments> evaluators, std::span<const PairKeyEntry> key,
                              TallyMode mode = TallyMode::kPerEvaluatorMean) {
  Tally combined;
  std::map<std::pair<std::string, std::string>, std::size_t> contributors;
  for (const auto& j : evaluators) {
    for (const auto& [pair, t] : tally_pairwise(j, key)) {
      auto& c = combined[pair];
      c.model_a = t.model_a;
      c.model_b = t.model_b;
      c.win += t.win;
      c.lose += t.lose;
      c.tie += t.tie;
      if (mode == TallyMode::kPerEvaluatorMean) {
        c.win_rate += t.win_rate;
        c.lose_rate += t.lose_rate;
        c.tie_rate += t.tie_rate;
        ++contributors[pair];
      }
    }
  }
  for (auto& [pair, c] : combined) {
    if (mode == TallyMode::kPooled) {
      fill_rates(c);
    } else {
      const auto n = static_cast<double>(contributors[pair]);
      c.win_rate /= n;
      c.lose_rate /= n;
      c.tie_rate /= n;
    }
  }
  return combined;
}

// Pack / key / judgment JSONL.

inline json to_json(const PairItem& item) {
  return {{"item_id", item.item_id}, {"history", item.history}, {"side1", item.side1}, {"side2", item.side2}};
}

inline json to_json(const PairKeyEntry& k) {
  return {{"item_id", k.item_id}, {"instance_id", k.instance_id}, {"side1_model", k.side1_model},
          {"side2_model", k.side2_model}};
}

inline json to_json(const PairTally& t) {
  return {{"model_a", t.model_a}, {"model_b", t.model_b}, {"win", t.win},
          {"lose", t.lose},       {"tie", t.tie},         {"win_rate", t.win_rate},
          {"lose_rate", t.lose_rate}, {"tie_rate", t.tie_rate}};
}

inline std::vector<PairKeyEntry> load_pair_key(const std::filesystem::path& path) {
  std::vector<PairKeyEntry> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      out.push_back({j.at("item_id").get<std::string>(), j.value("instance_id", std::string()),
                     j.at("side1_model").get<std::string>(), j.at("side2_model").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

inline Judgments load_judgments(const std::filesystem::path& path) {
  Judgments out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    std::string id, verdict;
    try {
      id = j.at("item_id").get<std::string>();
      verdict = j.at("verdict").get<std::string>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": " + e.what());
    }
    const auto v = parse_verdict(verdict);
    if (!v) throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": field 'verdict' must be side1, side2 or tie");
    if (!out.emplace(id, *v).second) {
      throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": duplicate item_id '" + id + "'");
    }
  });
  return out;
}

}  // namespace counselflow

#endif  // COUNSELFLOW_EVALUATION_HPP_
