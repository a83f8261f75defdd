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

#ifndef COUNSELFLOW_PIPELINE_HPP_
#define COUNSELFLOW_PIPELINE_HPP_

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "counselflow/dataset_io.hpp"
#include "counselflow/dialogue.hpp"
#include "counselflow/error.hpp"
#include "counselflow/llm_client.hpp"
#include "counselflow/parallel.hpp"
#include "counselflow/phases.hpp"
#include "counselflow/prompts.hpp"
#include "counselflow/text.hpp"

namespace counselflow {

enum class Mode { kFull, kNoEmo, kNoStage, kDirect };

inline constexpr std::array<Mode, 4> kAllModes = {Mode::kFull, Mode::kNoEmo, Mode::kNoStage, Mode::kDirect};

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kFull: return "full";
    case Mode::kNoEmo: return "no-emo";
    case Mode::kNoStage: return "no-stage";
    case Mode::kDirect: return "direct";
  }
  return "full";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  auto norm = text::ascii_lower(s);
  std::replace(norm.begin(), norm.end(), '_', '-');
  if (norm == "full") return Mode::kFull;
  if (norm == "no-emo" || norm == "noemo" || norm == "w/o-emo") return Mode::kNoEmo;
  if (norm == "no-stage" || norm == "nostage" || norm == "w/o-stage") return Mode::kNoStage;
  if (norm == "direct" || norm == "base") return Mode::kDirect;
  return std::nullopt;
}

inline bool uses_perspective(Mode m) { return m == Mode::kFull || m == Mode::kNoStage; }
inline bool uses_phase(Mode m) { return m == Mode::kFull || m == Mode::kNoEmo; }
inline std::size_t expected_calls(Mode m) { return 1 + (uses_perspective(m) ? 1 : 0) + (uses_phase(m) ? 1 : 0); }

namespace stage {
inline constexpr std::string_view kPerspective = "perspective";
inline constexpr std::string_view kPhase = "phase";
inline constexpr std::string_view kResponse = "response";
}  // namespace stage

struct PipelineConfig {
  std::string model;
  Mode mode = Mode::kFull;
  std::size_t window_size = 6;  // utterances; 6 = three client/counselor turns
  double temperature = 0.0;
  std::optional<int> max_tokens;
  Locale locale = Locale::kEn;
};

inline void validate(const PipelineConfig& cfg) {
  if (cfg.model.empty()) throw Error(ErrorCode::kConfigError, "generation model is empty");
  if (cfg.window_size < 2 || cfg.window_size % 2 != 0) {
    throw Error(ErrorCode::kConfigError, "window_size must be even and >= 2, got " + std::to_string(cfg.window_size));
  }
}

// Soft limits the perspective prompt asks the model to respect.
inline constexpr std::size_t kPsychStateMaxSentences = 4;
inline constexpr std::size_t kPsychStateMaxUnits = 120;

struct PsychState {
  std::string text;
  std::size_t sentences = 0;
  std::size_t units = 0;  // words for en, characters for ja/zh
  bool within_bounds = false;

  friend bool operator==(const PsychState&, const PsychState&) = default;
};

inline PsychState make_psych_state(std::string text, Locale locale) {
  PsychState z;
  z.sentences = text::sentence_count(text);
  z.units = locale == Locale::kEn ? text::word_count(text) : text::visible_char_count(text);
  z.within_bounds = z.sentences <= kPsychStateMaxSentences && z.units <= kPsychStateMaxUnits;
  z.text = std::move(text);
  return z;
}

struct StageTranscript {
  std::string stage;
  std::string request_hash;
  bool from_cache = false;
  Milliseconds latency{0};
  std::string prompt;
  std::string output;
};

struct PipelineRun {
  std::string instance_id;
  std::string model;
  Mode mode = Mode::kFull;
  std::optional<PsychState> psych_state;
  std::optional<PhaseAssessment> phase;
  std::string response;
  std::vector<StageTranscript> transcripts;
};

/// A stage raised an error; `partial()` holds the transcripts of the stages
/// that completed before it.
class StageFailure : public Error {
 public:
  StageFailure(std::string stage_tag, const Error& cause, std::vector<StageTranscript> partial)
      : Error(ErrorCode::kStageFailure, stage_tag + ": " + cause.what()),
        stage_(std::move(stage_tag)),
        cause_(cause.code()),
        partial_(std::move(partial)) {}

  const std::string& stage() const { return stage_; }
  ErrorCode cause() const { return cause_; }
  const std::vector<StageTranscript>& partial() const { return partial_; }

 private:
  std::string stage_;
  ErrorCode cause_;
  std::vector<StageTranscript> partial_;
};

struct RunFailure {
  std::string instance_id;
  std::string stage;
  ErrorCode code = ErrorCode::kStageFailure;
  std::string message;
  std::vector<StageTranscript> partial;
};

struct RunOutcome {
  std::string instance_id;
  std::optional<PipelineRun> run;
  std::optional<RunFailure> failure;
};

struct BatchReport {
  std::vector<RunOutcome> outcomes;  // input order

  std::size_t successes() const {
    return static_cast<std::size_t>(std::count_if(outcomes.begin(), outcomes.end(), [](const RunOutcome& o) { return o.run.has_value(); }));
  }
  std::size_t failures() const { return outcomes.size() - successes(); }

  std::vector<PipelineRun> runs() const {
    std::vector<PipelineRun> out;
    for (const auto& o : outcomes) {
      if (o.run) out.push_back(*o.run);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Stage prompts. A null section argument removes that section entirely.

inline std::string render_perspective_prompt(const TemplateStore& templates, std::span<const Utterance> history) {
  RenderContext ctx;
  ctx.set(placeholder::kDialogueHistory, format_history(history, templates.locale()));
  return templates.get(TemplateId::kPerspective).render(ctx);
}

/// Only the last `window_size` utterances of `history` are shown.
inline std::string render_phase_prompt(const TemplateStore& templates, std::span<const Utterance> history,
                                       std::size_t window_size, const std::string* psych_state) {
  RenderContext ctx;
  ctx.set(placeholder::kDialogueHistory, format_history(last_window(history, window_size), templates.locale()));
  if (psych_state) {
    ctx.set(placeholder::kPerspectiveTaking, *psych_state);
  } else {
    ctx.omit(placeholder::kPerspectiveTaking);
  }
  return templates.get(TemplateId::kPhase).render(ctx);
}

inline std::string render_response_prompt(const TemplateStore& templates, std::span<const Utterance> history,
                                          const std::string* psych_state, const std::string* stage_narrative) {
  RenderContext ctx;
  ctx.set(placeholder::kDialogueHistory, format_history(history, templates.locale()));
  if (psych_state) {
    ctx.set(placeholder::kPerspectiveTaking, *psych_state);
  } else {
    ctx.omit(placeholder::kPerspectiveTaking);
  }
  if (stage_narrative) {
    ctx.set(placeholder::kCounselingStage, *stage_narrative);
  } else {
    ctx.omit(placeholder::kCounselingStage);
  }
  return templates.get(TemplateId::kResponse).render(ctx);
}

/// Runs perspective-taking, phase recognition and response generation for
/// one instance, skipping the stages the configured mode ablates.
class Pipeline {
 public:
  Pipeline(ChatClient& client, const TemplateStore& templates, const PhaseTable& phases, PipelineConfig cfg,
           ResponseCache* cache = nullptr)
      : client_(client), templates_(templates), phases_(phases), cfg_(std::move(cfg)), cache_(cache) {
    validate(cfg_);
    if (templates_.locale() != cfg_.locale || phases_.locale() != cfg_.locale) {
      throw Error(ErrorCode::kConfigError, "templates, phase table and pipeline locale disagree");
    }
  }

  const PipelineConfig& config() const { return cfg_; }

  PsychState perspective_take(std::span<const Utterance> history, std::vector<StageTranscript>* log = nullptr) const {
    require_client_last(history);
    if (!uses_perspective(cfg_.mode)) {
      throw Error(ErrorCode::kContractViolation, "mode " + std::string(to_string(cfg_.mode)) + " skips perspective-taking");
    }
    auto out = call(stage::kPerspective, render_perspective_prompt(templates_, history), log);
    auto z = make_psych_state(std::move(out), cfg_.locale);
    if (!z.within_bounds) {
      spdlog::warn("psych state exceeds soft bounds ({} sentences, {} units)", z.sentences, z.units);
    }
    return z;
  }

  /// Only the last `window_size` utterances reach the phase prompt.
  PhaseAssessment recognize_phase(std::span<const Utterance> history, const PsychState* z,
                                  std::vector<StageTranscript>* log = nullptr) const {
    require_client_last(history);
    if (!uses_phase(cfg_.mode)) {
      throw Error(ErrorCode::kContractViolation, "mode " + std::string(to_string(cfg_.mode)) + " skips phase recognition");
    }
    require_presence("psych state", z != nullptr, uses_perspective(cfg_.mode));
    auto out = call(stage::kPhase, render_phase_prompt(templates_, history, cfg_.window_size, z ? &z->text : nullptr), log);
    auto p = phases_.parse(out);
    if (!p.phase) spdlog::warn("no counseling phase named in phase narrative");
    return p;
  }

  std::string generate_response(std::span<const Utterance> history, const PsychState* z, const PhaseAssessment* p,
                                std::vector<StageTranscript>* log = nullptr) const {
    require_client_last(history);
    require_presence("psych state", z != nullptr, uses_perspective(cfg_.mode));
    require_presence("phase assessment", p != nullptr, uses_phase(cfg_.mode));
    return call(stage::kResponse,
                render_response_prompt(templates_, history, z ? &z->text : nullptr, p ? &p->narrative : nullptr), log);
  }

  /// Throws StageFailure carrying the transcripts completed so far.
  PipelineRun run_instance(const Instance& instance) const {
    if (instance.history.empty()) throw Error(ErrorCode::kContractViolation, "instance has an empty history");
    PipelineRun run;
    run.instance_id = instance.id();
    run.model = cfg_.model;
    run.mode = cfg_.mode;
    std::string current;
    try {
      if (uses_perspective(cfg_.mode)) {
        current = stage::kPerspective;
        run.psych_state = perspective_take(instance.history, &run.transcripts);
      }
      if (uses_phase(cfg_.mode)) {
        current = stage::kPhase;
        run.phase = recognize_phase(instance.history, run.psych_state ? &*run.psych_state : nullptr, &run.transcripts);
      }
      current = stage::kResponse;
      run.response = generate_response(instance.history, run.psych_state ? &*run.psych_state : nullptr,
                                       run.phase ? &*run.phase : nullptr, &run.transcripts);
    } catch (const Error& e) {
      throw StageFailure(current, e, std::move(run.transcripts));
    }
    return run;
  }

  /// Runs instances on up to `parallelism` workers. Outcomes keep input
  /// order; a failed instance is recorded and the batch continues.
  BatchReport run_batch(std::span<const Instance> instances, std::size_t parallelism,
                        const std::function<void(const RunOutcome&)>& on_complete = {}) const {
    if (parallelism == 0) throw Error(ErrorCode::kConfigError, "parallelism must be >= 1");
    BatchReport report;
    report.outcomes.resize(instances.size());
    std::mutex sink_mu;
    parallel_for(instances.size(), parallelism, [&](std::size_t i) {
      auto& slot = report.outcomes[i];
      slot.instance_id = instances[i].id();
      try {
        slot.run = run_instance(instances[i]);
      } catch (const StageFailure& f) {
        slot.failure = RunFailure{slot.instance_id, f.stage(), f.cause(), f.what(), f.partial()};
      } catch (const Error& e) {
        slot.failure = RunFailure{slot.instance_id, "", e.code(), e.what(), {}};
      } catch (const std::exception& e) {
        slot.failure = RunFailure{slot.instance_id, "", ErrorCode::kStageFailure, e.what(), {}};
      }
      if (on_complete) {
        std::lock_guard lock(sink_mu);
        on_complete(slot);
      }
    });
    return report;
  }

 private:
  static void require_client_last(std::span<const Utterance> history) {
    if (history.empty()) throw Error(ErrorCode::kContractViolation, "history is empty");
    if (history.back().speaker != Speaker::kClient) {
      throw Error(ErrorCode::kContractViolation, "history must end with a client utterance");
    }
  }

  void require_presence(const char* what, bool present, bool expected) const {
    if (present != expected) {
      throw Error(ErrorCode::kContractViolation, std::string(what) + (expected ? " is required" : " must be absent") +
                                                     " in mode " + std::string(to_string(cfg_.mode)));
    }
  }

  std::string call(std::string_view stage_tag, std::string prompt, std::vector<StageTranscript>* log) const {
    ChatRequest req;
    req.model = cfg_.model;
    req.messages.push_back({Role::kUser, prompt});
    req.temperature = cfg_.temperature;
    req.max_tokens = cfg_.max_tokens;
    req.purpose = std::string(stage_tag);
    auto result = cache_ ? client_.complete_cached(*cache_, req) : client_.complete(req);
    auto out = text::trim_copy(result.text);
    if (log) {
      log->push_back({std::string(stage_tag), result.request_hash, result.from_cache, result.latency, std::move(prompt), out});
    }
    if (out.empty()) throw Error(ErrorCode::kMalformedResponse, std::string(stage_tag) + " returned empty text");
    return out;
  }

  ChatClient& client_;
  const TemplateStore& templates_;
  const PhaseTable& phases_;
  PipelineConfig cfg_;
  ResponseCache* cache_;
};

// ---------------------------------------------------------------------------
// Results JSONL

struct ResultsFormat {
  bool timings = true;
  bool prompts = false;  // include rendered prompts and raw outputs
};

inline json to_json(const PipelineRun& run, const ResultsFormat& fmt = {}) {
  json j = {{"instance_id", run.instance_id}, {"model", run.model}, {"mode", to_string(run.mode)}};
  if (run.psych_state) {
    j["psych_state"] = run.psych_state->text;
    j["psych_state_within_bounds"] = run.psych_state->within_bounds;
  }
  if (run.phase) {
    j["phase_label"] = run.phase->phase ? json(to_string(*run.phase->phase)) : json(nullptr);
    j["phase_narrative"] = run.phase->narrative;
  }
  j["response"] = run.response;
  json ts = json::array();
  json timings = json::object();
  for (const auto& t : run.transcripts) {
    json tj = {{"stage", t.stage}, {"request_hash", t.request_hash}, {"from_cache", t.from_cache}};
    if (fmt.prompts) {
      tj["prompt"] = t.prompt;
      tj["output"] = t.output;
    }
    ts.push_back(std::move(tj));
    timings[t.stage] = t.latency.count();
  }
  j["transcripts"] = std::move(ts);
  if (fmt.timings) j["timings"] = std::move(timings);
  return j;
}

inline PipelineRun run_from_json(const json& j, std::size_t line = 0) {
  auto where = [&](const char* f) { return "line " + std::to_string(line) + ": field '" + f + "'"; };
  PipelineRun run;
  try {
    run.instance_id = j.at("instance_id").get<std::string>();
    run.model = j.value("model", std::string());
    const auto mode = parse_mode(j.at("mode").get<std::string>());
    if (!mode) throw Error(ErrorCode::kSchemaError, where("mode") + " has an unknown value");
    run.mode = *mode;
    run.response = j.at("response").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchemaError, "line " + std::to_string(line) + ": " + e.what());
  }
  if (j.contains("psych_state")) {
    PsychState z;
    z.text = j["psych_state"].get<std::string>();
    z.within_bounds = j.value("psych_state_within_bounds", true);
    run.psych_state = std::move(z);
  }
  if (j.contains("phase_narrative")) {
    PhaseAssessment p;
    p.narrative = j["phase_narrative"].get<std::string>();
    if (j.contains("phase_label") && j["phase_label"].is_string()) p.phase = parse_phase_id(j["phase_label"].get<std::string>());
    run.phase = std::move(p);
  }
  if (j.contains("transcripts")) {
    for (const auto& t : j["transcripts"]) {
      StageTranscript st;
      st.stage = t.value("stage", std::string());
      st.request_hash = t.value("request_hash", std::string());
      st.from_cache = t.value("from_cache", false);
      st.prompt = t.value("prompt", std::string());
      st.output = t.value("output", std::string());
      if (j.contains("timings") && j["timings"].contains(st.stage)) {
        st.latency = Milliseconds(j["timings"][st.stage].get<long long>());
      }
      run.transcripts.push_back(std::move(st));
    }
  }
  return run;
}

inline void write_results(std::ostream& out, std::span<const PipelineRun> runs, const ResultsFormat& fmt = {}) {
  for (const auto& r : runs) out << to_json(r, fmt).dump() << '\n';
}

inline void save_results(const std::filesystem::path& path, std::span<const PipelineRun> runs,
                         const ResultsFormat& fmt = {}) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIOError, "cannot write results '" + path.string() + "'");
  write_results(out, runs, fmt);
}

inline std::vector<PipelineRun> load_results(const std::filesystem::path& path) {
  std::vector<PipelineRun> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) { out.push_back(run_from_json(j, line)); });
  return out;
}

inline json to_json(const RunFailure& f) {
  return {{"instance_id", f.instance_id}, {"stage", f.stage}, {"error", to_string(f.code)}, {"message", f.message},
          {"completed_stages", f.partial.size()}};
}

}  // namespace counselflow

#endif  // COUNSELFLOW_PIPELINE_HPP_
