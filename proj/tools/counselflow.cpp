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

// Command-line front end: dataset ingestion, batch generation, judging,
// score aggregation, the pairwise human-evaluation workflow and the live
// chat service.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "counselflow/chat_service.hpp"
#include "counselflow/config.hpp"
#include "counselflow/dataset_io.hpp"
#include "counselflow/dialogue.hpp"
#include "counselflow/error.hpp"
#include "counselflow/evaluation.hpp"
#include "counselflow/llm_client.hpp"
#include "counselflow/parallel.hpp"
#include "counselflow/phases.hpp"
#include "counselflow/pipeline.hpp"
#include "counselflow/prompts.hpp"

namespace fs = std::filesystem;
using namespace counselflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Invalid flag combinations detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::string config_path;
  bool json = false;
  std::string log_level = "warn";
};

AppConfig load_app_config(const GlobalOptions& g) {
  if (g.config_path.empty()) {
    spdlog::info("no --config given; using the offline simulated backend");
    return AppConfig::offline();
  }
  return load_config(g.config_path);
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error(ErrorCode::kIOError, "cannot write '" + path.string() + "'");
  out << content;
}

template <typename T>
void write_jsonl(const fs::path& path, const std::vector<T>& items) {
  std::ostringstream s;
  for (const auto& item : items) s << to_json(item).dump() << '\n';
  write_text(path, s.str());
}

std::string sanitize_tag(std::string_view tag) {
  std::string out;
  for (char c : tag) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_' ? c : '_');
  return out;
}

/// "tag=path"
std::pair<std::string, fs::path> split_tagged(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
    throw UsageError("expected TAG=PATH, got '" + arg + "'");
  }
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

/// Instances from a dataset (merged on load) or from an instance list.
std::vector<Instance> load_instance_source(const std::string& dataset, const std::string& instances) {
  if (dataset.empty() == instances.empty()) throw UsageError("give exactly one of --dataset or --instances");
  if (!instances.empty()) return load_instances(instances);
  const auto merged = merge_dataset(load_dataset(dataset));
  return extract_instances(std::span<const Dialogue>(merged.dialogues));
}

// Model outputs keyed by instance id, read from a results file.
std::map<std::string, std::string> responses_by_instance(const fs::path& path) {
  std::map<std::string, std::string> out;
  for (const auto& run : load_results(path)) out[run.instance_id] = run.response;
  return out;
}

// ---------------------------------------------------------------------------
// ingest

struct IngestOptions {
  std::string input;
  std::string output;
  std::optional<std::string> separator;
};

json stats_json(const DatasetStats& s) {
  return {{"dialogues", s.dialogues},
          {"utterances", s.utterances},
          {"client_utterances", s.client_utterances},
          {"counselor_utterances", s.counselor_utterances},
          {"utterances_per_dialogue", s.utterances_per_dialogue()},
          {"client_per_dialogue", s.client_per_dialogue()},
          {"counselor_per_dialogue", s.counselor_per_dialogue()},
          {"mean_length", s.mean_length},
          {"mean_client_length", s.mean_client_length},
          {"mean_counselor_length", s.mean_counselor_length}};
}

int cmd_ingest(const GlobalOptions& g, const IngestOptions& o) {
  auto loaded = load_dataset_with_warnings(o.input);
  auto& raw = loaded.dataset;
  Dataset merged = raw;
  for (auto& d : merged.dialogues) d = merge_consecutive(d, o.separator);
  merged.stats = compute_stats(merged.dialogues);
  for (const auto& d : merged.dialogues) {
    if (!alternates(d.utterances)) throw Error(ErrorCode::kContractViolation, "dialogue '" + d.id + "' does not alternate after merging");
  }
  const auto instances = extract_instances(std::span<const Dialogue>(merged.dialogues));
  if (!o.output.empty()) {
    if (fs::path(o.output).has_parent_path()) fs::create_directories(fs::path(o.output).parent_path());
    save_dataset(o.output, merged);
  }

  if (g.json) {
    std::cout << json{{"dataset", raw.name},
                      {"locale", to_string(raw.locale)},
                      {"raw", stats_json(raw.stats)},
                      {"merged", stats_json(merged.stats)},
                      {"instances", instances.size()},
                      {"warnings", loaded.warnings.size()}}
                     .dump(2)
              << '\n';
    return kExitOk;
  }
  const auto& r = raw.stats;
  const auto& m = merged.stats;
  std::cout << "dataset " << raw.name << " (" << to_string(raw.locale) << ")\n";
  std::cout << std::left << std::setw(30) << "" << std::right << std::setw(12) << "raw" << std::setw(12) << "merged" << '\n';
  auto row = [](const std::string& label, auto a, auto b) {
    std::cout << std::left << std::setw(30) << label << std::right << std::fixed << std::setprecision(2) << std::setw(12) << a
              << std::setw(12) << b << '\n';
  };
  row("dialogues", r.dialogues, m.dialogues);
  row("utterances", r.utterances, m.utterances);
  row("  client", r.client_utterances, m.client_utterances);
  row("  counselor", r.counselor_utterances, m.counselor_utterances);
  row("utterances / dialogue", r.utterances_per_dialogue(), m.utterances_per_dialogue());
  row("  client", r.client_per_dialogue(), m.client_per_dialogue());
  row("  counselor", r.counselor_per_dialogue(), m.counselor_per_dialogue());
  row("mean length (chars)", r.mean_length, m.mean_length);
  row("  client", r.mean_client_length, m.mean_client_length);
  row("  counselor", r.mean_counselor_length, m.mean_counselor_length);
  std::cout << std::left << std::setw(30) << "instances" << std::right << std::setw(24) << instances.size() << '\n';
  if (!loaded.warnings.empty()) std::cout << loaded.warnings.size() << " empty utterance(s) dropped\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  std::string dataset;
  std::string instances;
  std::string out_dir = "results";
  std::string mode;
  std::vector<std::string> models;
  std::size_t parallelism = 4;
  bool resume = false;
  bool no_cache = false;
  std::optional<double> temperature;
  std::optional<std::size_t> window;
  std::optional<std::size_t> limit;
  bool prompts = false;
};

int cmd_run(const GlobalOptions& g, const RunOptions& o) {
  auto cfg = load_app_config(g);
  if (!o.mode.empty()) {
    const auto m = parse_mode(o.mode);
    if (!m) throw UsageError("unknown mode '" + o.mode + "'");
    cfg.mode = *m;
  }
  if (o.temperature) cfg.temperature = *o.temperature;
  if (o.window) cfg.window_size = *o.window;
  if (o.parallelism == 0) throw UsageError("--parallelism must be >= 1");

  auto instances = load_instance_source(o.dataset, o.instances);
  if (o.limit && instances.size() > *o.limit) instances.resize(*o.limit);
  if (instances.empty()) throw Error(ErrorCode::kInvalidRequest, "no instances to run");
  const auto locale = instances.front().locale;
  cfg.locale = locale;

  std::vector<ModelRef> models;
  if (o.models.empty()) {
    models.push_back(cfg.generation);
  } else {
    for (const auto& m : o.models) models.push_back(parse_model_ref(m, cfg.generation.backend));
  }

  ClientRegistry clients(cfg);
  const auto templates = TemplateStore::load(cfg.template_dir, locale);
  const auto phases = PhaseTable::load(cfg.template_dir, locale);
  std::optional<ResponseCache> cache;
  if (!o.no_cache) cache.emplace(cfg.cache_dir);

  json summary = json::array();
  bool any_failure = false;
  for (const auto& ref : models) {
    auto& client = clients.get(ref.backend);
    const auto calls_before = client.backend_calls();
    Pipeline pipeline(client, templates, phases, cfg.pipeline_config(ref.model), cache ? &*cache : nullptr);

    const auto stem = sanitize_tag(ref.model) + "." + std::string(to_string(cfg.mode));
    const auto results_path = fs::path(o.out_dir) / (stem + ".jsonl");
    const auto failures_path = fs::path(o.out_dir) / (stem + ".failures.jsonl");

    std::vector<PipelineRun> kept;
    std::set<std::string> done;
    if (o.resume && fs::exists(results_path)) {
      kept = load_results(results_path);
      for (const auto& r : kept) done.insert(r.instance_id);
    }
    std::vector<Instance> todo;
    for (const auto& inst : instances) {
      if (!done.contains(inst.id())) todo.push_back(inst);
    }

    const auto report = pipeline.run_batch(todo, o.parallelism, [&](const RunOutcome& outcome) {
      if (outcome.failure) spdlog::warn("{}: {}", outcome.instance_id, outcome.failure->message);
    });
    auto runs = report.runs();
    kept.insert(kept.end(), runs.begin(), runs.end());
    std::vector<RunFailure> failures;
    for (const auto& out : report.outcomes) {
      if (out.failure) failures.push_back(*out.failure);
    }

    fs::create_directories(o.out_dir);
    save_results(results_path, kept, ResultsFormat{true, o.prompts});
    if (!failures.empty()) {
      write_jsonl(failures_path, failures);
    } else if (fs::exists(failures_path)) {
      fs::remove(failures_path);
    }
    any_failure = any_failure || !failures.empty();

    std::size_t cached = 0, transcripts = 0;
    for (const auto& r : runs) {
      for (const auto& t : r.transcripts) {
        ++transcripts;
        cached += t.from_cache ? 1 : 0;
      }
    }
    summary.push_back({{"model", ref.model},
                       {"backend", ref.backend},
                       {"mode", to_string(cfg.mode)},
                       {"results", results_path.string()},
                       {"instances", instances.size()},
                       {"resumed", done.size()},
                       {"succeeded", report.successes()},
                       {"failed", report.failures()},
                       {"backend_calls", client.backend_calls() - calls_before},
                       {"cache_hits", cached},
                       {"stage_calls", transcripts}});
  }

  if (g.json) {
    std::cout << summary.dump(2) << '\n';
  } else {
    for (const auto& s : summary) {
      std::cout << s["model"].get<std::string>() << " [" << s["mode"].get<std::string>() << "] -> "
                << s["results"].get<std::string>() << ": " << s["succeeded"] << " ok, " << s["failed"] << " failed, "
                << s["resumed"] << " resumed, " << s["backend_calls"] << " backend calls, " << s["cache_hits"]
                << " cache hits\n";
    }
  }
  return any_failure ? kExitRuntime : kExitOk;
}

// ---------------------------------------------------------------------------
// judge

struct JudgeOptionsCli {
  std::string dataset;
  std::string instances;
  std::vector<std::string> results;
  std::string output = "cards.jsonl";
  std::optional<std::uint64_t> shuffle_seed;
  std::size_t parallelism = 4;
  bool no_cache = false;
};

int cmd_judge(const GlobalOptions& g, const JudgeOptionsCli& o) {
  auto cfg = load_app_config(g);
  if (cfg.judges.empty()) throw Error(ErrorCode::kConfigError, "no judges configured");
  if (o.results.size() < 2) throw UsageError("judge needs at least two --results TAG=PATH");
  if (o.parallelism == 0) throw UsageError("--parallelism must be >= 1");

  std::vector<std::pair<std::string, std::map<std::string, std::string>>> outputs;
  for (const auto& arg : o.results) {
    auto [tag, path] = split_tagged(arg);
    outputs.emplace_back(tag, responses_by_instance(path));
  }
  std::vector<Instance> instances;
  for (auto& inst : load_instance_source(o.dataset, o.instances)) {
    const bool everywhere = std::all_of(outputs.begin(), outputs.end(), [&](const auto& kv) { return kv.second.contains(inst.id()); });
    if (everywhere) instances.push_back(std::move(inst));
  }
  if (instances.empty()) throw Error(ErrorCode::kMissingOutput, "no instance has outputs in every results file");

  ClientRegistry clients(cfg);
  std::vector<JudgeSpec> judges;
  for (const auto& j : cfg.judges) judges.push_back({j.name, &clients.get(j.ref.backend), j.ref.model});
  const auto templates = TemplateStore::load(cfg.template_dir, instances.front().locale);
  std::optional<ResponseCache> cache;
  if (!o.no_cache) cache.emplace(cfg.cache_dir);

  std::vector<ScoreCard> cards(instances.size());
  parallel_for(instances.size(), o.parallelism, [&](std::size_t i) {
    std::vector<ResponseCandidate> responses;
    for (const auto& [tag, by_id] : outputs) responses.push_back({tag, by_id.at(instances[i].id())});
    JudgeOptions jo;
    jo.shuffle_seed = o.shuffle_seed ? std::optional<std::uint64_t>(*o.shuffle_seed + i) : std::nullopt;
    jo.max_tokens = cfg.max_tokens;
    jo.cache = cache ? &*cache : nullptr;
    cards[i] = judge_instance(judges, templates.get(TemplateId::kJudge), instances[i], responses, jo);
  });
  write_jsonl(o.output, cards);

  const auto partial = static_cast<std::size_t>(std::count_if(cards.begin(), cards.end(), [](const ScoreCard& c) { return !c.complete(); }));
  for (const auto& c : cards) {
    for (const auto& f : c.failures) spdlog::warn("{} / {}: {}", c.instance_id, f.judge_name, f.message);
  }
  if (g.json) {
    std::cout << json{{"cards", cards.size()}, {"partial", partial}, {"output", o.output}}.dump(2) << '\n';
  } else {
    std::cout << cards.size() << " score cards (" << partial << " partial) -> " << o.output << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// aggregate

struct AggregateOptions {
  std::vector<std::string> cards;
  std::string format = "csv";
  std::string output;
};

int cmd_aggregate(const GlobalOptions& g, const AggregateOptions& o) {
  std::vector<ScoreCard> cards;
  for (const auto& path : o.cards) {
    auto more = load_cards(path);
    cards.insert(cards.end(), more.begin(), more.end());
  }
  const auto table = aggregate(cards);
  const bool as_json = g.json || o.format == "json";
  const auto text = as_json ? to_json(table).dump(2) + "\n" : to_csv(table);
  if (o.output.empty()) {
    std::cout << text;
  } else {
    write_text(o.output, text);
  }
  if (table.excluded_partial > 0) spdlog::warn("{} partial score card(s) excluded", table.excluded_partial);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sample / pack / tally

struct SampleOptions {
  std::string dataset;
  std::size_t per_dialogue = 10;
  std::uint64_t seed = 0;
  std::string output = "sample.jsonl";
};

int cmd_sample(const GlobalOptions& g, const SampleOptions& o) {
  const auto merged = merge_dataset(load_dataset(o.dataset));
  const auto sample = sample_eval_instances(merged.dialogues, o.per_dialogue, o.seed);
  save_instances(o.output, sample);
  if (g.json) {
    std::cout << json{{"instances", sample.size()}, {"dialogues", merged.dialogues.size()}, {"output", o.output}}.dump(2) << '\n';
  } else {
    std::cout << sample.size() << " instances from " << merged.dialogues.size() << " dialogues -> " << o.output << '\n';
  }
  return kExitOk;
}

struct PackOptions {
  std::string instances;
  std::vector<std::string> results;
  std::uint64_t seed = 0;
  std::string pack = "pack.jsonl";
  std::string key = "key.jsonl";
};

int cmd_pack(const GlobalOptions& g, const PackOptions& o) {
  if (o.results.size() < 2) throw UsageError("pack needs at least two --results TAG=PATH");
  const auto instances = load_instances(o.instances);
  OutputsByModel outputs;
  std::vector<std::string> models;
  for (const auto& arg : o.results) {
    auto [tag, path] = split_tagged(arg);
    if (outputs.contains(tag)) throw UsageError("duplicate results tag '" + tag + "'");
    outputs[tag] = responses_by_instance(path);
    models.push_back(tag);
  }
  const auto pack = build_pairwise_pack(instances, outputs, models, o.seed);
  write_jsonl(o.pack, pack.items);
  write_jsonl(o.key, pack.key);
  if (g.json) {
    std::cout << json{{"items", pack.items.size()}, {"pack", o.pack}, {"key", o.key}}.dump(2) << '\n';
  } else {
    std::cout << pack.items.size() << " items -> " << o.pack << " (key: " << o.key << ")\n";
  }
  return kExitOk;
}

struct TallyOptions {
  std::string key;
  std::vector<std::string> judgments;
  bool pooled = false;
};

int cmd_tally(const GlobalOptions& g, const TallyOptions& o) {
  const auto key = load_pair_key(o.key);
  std::vector<Judgments> evaluators;
  for (const auto& path : o.judgments) evaluators.push_back(load_judgments(path));
  const auto tally = tally_evaluators(evaluators, key, o.pooled ? TallyMode::kPooled : TallyMode::kPerEvaluatorMean);
  if (g.json) {
    json rows = json::array();
    for (const auto& [_, t] : tally) rows.push_back(to_json(t));
    std::cout << json{{"evaluators", evaluators.size()}, {"mode", o.pooled ? "pooled" : "per-evaluator"}, {"pairs", rows}}.dump(2)
              << '\n';
    return kExitOk;
  }
  std::cout << "model_a,model_b,win,lose,tie,win_rate,lose_rate,tie_rate\n" << std::fixed << std::setprecision(4);
  for (const auto& [_, t] : tally) {
    std::cout << t.model_a << ',' << t.model_b << ',' << t.win << ',' << t.lose << ',' << t.tie << ',' << t.win_rate << ','
              << t.lose_rate << ',' << t.tie_rate << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// serve

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "sessions";
  std::string ui_dir = "webui/dist";
};

int cmd_serve(const GlobalOptions& g, const ServeOptions& o) {
  const auto cfg = load_app_config(g);
  ClientRegistry clients(cfg);
  SessionStore store(o.data_dir);
  ChatService service(store, clients.get(cfg.generation.backend), cfg.template_dir, cfg.pipeline_config(cfg.generation.model));
  ChatServer server(service, cfg.locale, cfg.mode, fs::path(o.ui_dir));
  spdlog::info("serving on http://{}:{} (sessions in {})", o.host, o.port, o.data_dir);
  std::cerr << "listening on http://" << o.host << ':' << o.port << '\n';
  if (!server.listen(o.host, o.port)) throw Error(ErrorCode::kIOError, "cannot listen on " + o.host + ":" + std::to_string(o.port));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// prompts render

struct RenderOptions {
  std::string template_id;
  std::string fixture;
  std::string mode;
  std::string locale;
  std::optional<std::size_t> window;
};

int cmd_prompts_render(const GlobalOptions& g, const RenderOptions& o) {
  auto cfg = load_app_config(g);
  const auto id = parse_template_id(o.template_id);
  if (!id) throw UsageError("unknown template '" + o.template_id + "'");
  json fx;
  try {
    fx = json::parse(read_text_file(o.fixture));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, o.fixture + ": " + e.what());
  }

  auto locale = cfg.locale;
  const auto locale_name = !o.locale.empty() ? o.locale : fx.value("locale", std::string(to_string(cfg.locale)));
  if (const auto l = parse_locale(locale_name)) {
    locale = *l;
  } else {
    throw UsageError("unknown locale '" + locale_name + "'");
  }
  auto mode = cfg.mode;
  if (!o.mode.empty()) {
    const auto m = parse_mode(o.mode);
    if (!m) throw UsageError("unknown mode '" + o.mode + "'");
    mode = *m;
  }

  Instance inst;
  inst.dialogue_id = "fixture";
  inst.locale = locale;
  for (const auto& u : fx.at("history")) {
    const auto spk = parse_speaker(u.at("speaker").get<std::string>());
    if (!spk) throw Error(ErrorCode::kSchemaError, "bad speaker in fixture history");
    inst.history.push_back({*spk, u.at("text").get<std::string>(), inst.history.size()});
  }
  const auto templates = TemplateStore::load(cfg.template_dir, locale);
  const auto psych = fx.value("psych_state", std::string("<psych state>"));
  const auto stage = fx.value("stage", std::string("<stage narrative>"));

  std::string prompt;
  switch (*id) {
    case TemplateId::kPerspective: prompt = render_perspective_prompt(templates, inst.history); break;
    case TemplateId::kPhase:
      prompt = render_phase_prompt(templates, inst.history, o.window.value_or(cfg.window_size),
                                   uses_perspective(mode) ? &psych : nullptr);
      break;
    case TemplateId::kResponse:
      prompt = render_response_prompt(templates, inst.history, uses_perspective(mode) ? &psych : nullptr,
                                      uses_phase(mode) ? &stage : nullptr);
      break;
    case TemplateId::kJudge: {
      std::vector<ResponseCandidate> responses;
      for (const auto& r : fx.value("responses", json::array())) {
        responses.push_back({r.at("model").get<std::string>(), r.at("text").get<std::string>()});
      }
      prompt = build_judge_request(templates.get(TemplateId::kJudge), inst.history, responses).prompt;
      break;
    }
  }
  if (g.json) {
    std::cout << json{{"template", to_string(*id)}, {"locale", to_string(locale)}, {"mode", to_string(mode)}, {"prompt", prompt}}.dump(2)
              << '\n';
  } else {
    std::cout << prompt;
    if (prompt.empty() || prompt.back() != '\n') std::cout << '\n';
  }
  return kExitOk;
}

void report_error(const GlobalOptions& g, std::string_view code, std::string_view message) {
  if (g.json) {
    std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
  } else {
    std::cerr << "error: " << message << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("counselflow"));

  CLI::App app{"counselflow: staged empathetic counseling response generation and evaluation"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "Experiment config (JSON); omitted = offline simulated backend");
  app.add_flag("--json", g.json, "Machine-readable output and errors");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  int status = kExitOk;
  std::function<int()> action;

  IngestOptions ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Merge and validate a dataset, print statistics");
  c_ingest->add_option("input", ingest.input, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("-o,--output", ingest.output, "Write the merged dataset here");
  c_ingest->add_option("--separator", ingest.separator, "Separator used when merging (default: locale)");
  c_ingest->callback([&] { action = [&] { return cmd_ingest(g, ingest); }; });

  RunOptions run;
  auto* c_run = app.add_subcommand("run", "Generate responses for every instance");
  c_run->add_option("--dataset", run.dataset, "Dataset JSONL (instances are extracted)")->check(CLI::ExistingFile);
  c_run->add_option("--instances", run.instances, "Instance list JSONL")->check(CLI::ExistingFile);
  c_run->add_option("--out-dir", run.out_dir, "Results directory")->capture_default_str();
  c_run->add_option("--mode", run.mode, "full|no-emo|no-stage|direct");
  c_run->add_option("--models", run.models, "MODEL or MODEL@BACKEND, comma separated")->delimiter(',');
  c_run->add_option("--parallelism", run.parallelism, "Worker count")->capture_default_str();
  c_run->add_flag("--resume", run.resume, "Keep existing results and run only missing instances");
  c_run->add_flag("--no-cache", run.no_cache, "Bypass the response cache");
  c_run->add_option("--temperature", run.temperature, "Generation temperature");
  c_run->add_option("--window", run.window, "Phase-recognition window in utterances");
  c_run->add_option("--limit", run.limit, "Run only the first N instances");
  c_run->add_flag("--with-prompts", run.prompts, "Store rendered prompts and raw outputs");
  c_run->callback([&] { action = [&] { return cmd_run(g, run); }; });

  JudgeOptionsCli judge;
  auto* c_judge = app.add_subcommand("judge", "Score result files with the configured judges");
  c_judge->add_option("--dataset", judge.dataset, "Dataset JSONL")->check(CLI::ExistingFile);
  c_judge->add_option("--instances", judge.instances, "Instance list JSONL")->check(CLI::ExistingFile);
  c_judge->add_option("--results", judge.results, "TAG=RESULTS.jsonl (repeat)")->required();
  c_judge->add_option("-o,--output", judge.output, "Score cards JSONL")->capture_default_str();
  c_judge->add_option("--shuffle-seed", judge.shuffle_seed, "Shuffle label assignment with this seed");
  c_judge->add_option("--parallelism", judge.parallelism, "Worker count")->capture_default_str();
  c_judge->add_flag("--no-cache", judge.no_cache, "Bypass the response cache");
  c_judge->callback([&] { action = [&] { return cmd_judge(g, judge); }; });

  AggregateOptions agg;
  auto* c_agg = app.add_subcommand("aggregate", "Average score cards into a per-model table");
  c_agg->add_option("cards", agg.cards, "Score card JSONL files")->required()->check(CLI::ExistingFile);
  c_agg->add_option("--format", agg.format, "csv|json")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  c_agg->add_option("-o,--output", agg.output, "Write the table here instead of stdout");
  c_agg->callback([&] { action = [&] { return cmd_aggregate(g, agg); }; });

  SampleOptions sample;
  auto* c_sample = app.add_subcommand("sample", "Sample instances per dialogue for human evaluation");
  c_sample->add_option("--dataset", sample.dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  c_sample->add_option("--per-dialogue", sample.per_dialogue, "Instances per dialogue")->capture_default_str();
  c_sample->add_option("--seed", sample.seed, "Random seed")->required();
  c_sample->add_option("-o,--output", sample.output, "Instance list JSONL")->capture_default_str();
  c_sample->callback([&] { action = [&] { return cmd_sample(g, sample); }; });

  PackOptions pack;
  auto* c_pack = app.add_subcommand("pack", "Build an anonymized pairwise comparison pack");
  c_pack->add_option("--instances", pack.instances, "Instance list JSONL")->required()->check(CLI::ExistingFile);
  c_pack->add_option("--results", pack.results, "TAG=RESULTS.jsonl (repeat)")->required();
  c_pack->add_option("--seed", pack.seed, "Random seed")->required();
  c_pack->add_option("--pack", pack.pack, "Pack JSONL for evaluators")->capture_default_str();
  c_pack->add_option("--key", pack.key, "Key JSONL (keep away from evaluators)")->capture_default_str();
  c_pack->callback([&] { action = [&] { return cmd_pack(g, pack); }; });

  TallyOptions tally;
  auto* c_tally = app.add_subcommand("tally", "Count Win/Lose/Tie from evaluator judgments");
  c_tally->add_option("--key", tally.key, "Key JSONL")->required()->check(CLI::ExistingFile);
  c_tally->add_option("judgments", tally.judgments, "Judgment JSONL, one file per evaluator")->required()->check(CLI::ExistingFile);
  c_tally->add_flag("--pooled", tally.pooled, "Pool counts instead of averaging per evaluator");
  c_tally->callback([&] { action = [&] { return cmd_tally(g, tally); }; });

  ServeOptions serve;
  auto* c_serve = app.add_subcommand("serve", "Run the chat service");
  c_serve->add_option("--host", serve.host, "Bind address")->capture_default_str();
  c_serve->add_option("--port", serve.port, "Port")->capture_default_str();
  c_serve->add_option("--data-dir", serve.data_dir, "Session store directory")->capture_default_str();
  c_serve->add_option("--ui-dir", serve.ui_dir, "Built UI bundle to serve at /")->capture_default_str();
  c_serve->callback([&] { action = [&] { return cmd_serve(g, serve); }; });

  RenderOptions render;
  auto* c_prompts = app.add_subcommand("prompts", "Prompt template tools");
  c_prompts->require_subcommand(1);
  auto* c_render = c_prompts->add_subcommand("render", "Render a template against a fixture");
  c_render->add_option("--template", render.template_id, "perspective|phase|response|judge")->required();
  c_render->add_option("--fixture", render.fixture, "Fixture JSON with history and optional sections")
      ->required()
      ->check(CLI::ExistingFile);
  c_render->add_option("--mode", render.mode, "Decides which optional sections appear");
  c_render->add_option("--locale", render.locale, "ja|zh|en (default: fixture, then config)");
  c_render->add_option("--window", render.window, "Phase-recognition window in utterances");
  c_render->callback([&] { action = [&] { return cmd_prompts_render(g, render); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (g.json) {
      report_error(g, "UsageError", e.what());
    } else {
      app.exit(e);
    }
    return kExitUsage;
  }

  spdlog::set_level(spdlog::level::from_str(g.log_level));
  try {
    status = action ? action() : kExitUsage;
  } catch (const UsageError& e) {
    report_error(g, "UsageError", e.what());
    status = kExitUsage;
  } catch (const Error& e) {
    report_error(g, to_string(e.code()), e.what());
    status = kExitRuntime;
  } catch (const std::exception& e) {
    report_error(g, "InternalError", e.what());
    status = kExitRuntime;
  }
  return status;
}
