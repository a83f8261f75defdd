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

#include <gtest/gtest.h>

#include <fstream>

#include "counselflow/config.hpp"
#include "test_support.hpp"

namespace counselflow {
namespace {

using testing::TempDir;

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIOError;
}

EnvLookup fake_env(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const std::string& name) -> std::optional<std::string> {
    auto it = vars.find(name);
    return it == vars.end() ? std::nullopt : std::optional<std::string>(it->second);
  };
}

TEST(Interpolate, Forms) {
  const auto env = fake_env({{"HOST", "example.org"}, {"EMPTY", ""}});
  EXPECT_EQ(interpolate_env("https://${HOST}/v1", env), "https://example.org/v1");
  EXPECT_EQ(interpolate_env("${MISSING:-fallback}", env), "fallback");
  EXPECT_EQ(interpolate_env("${EMPTY:-x}", env), "x");
  EXPECT_EQ(interpolate_env("${EMPTY}", env), "");
  EXPECT_EQ(interpolate_env("cost $$5 and $x", env), "cost $5 and $x");
  EXPECT_EQ(code_of([&] { interpolate_env("${MISSING}", env); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([&] { interpolate_env("${HOST", env); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([&] { interpolate_env("${}", env); }), ErrorCode::kConfigError);
}

TEST(ModelRefs, Parsing) {
  const auto a = parse_model_ref("qwen2.5-7b", "local");
  EXPECT_EQ(a.backend, "local");
  EXPECT_EQ(a.model, "qwen2.5-7b");
  const auto b = parse_model_ref("gpt-4o@openai", "local");
  EXPECT_EQ(b.backend, "openai");
  EXPECT_EQ(b.model, "gpt-4o");
}

const char* kConfig = R"({
  "backends": {
    "local": {"type": "openai", "base_url": "http://${VLLM_HOST:-localhost:8000}/v1/", "max_retries": 5},
    "openai": {"base_url": "https://api.openai.com/v1", "api_key_env": "OPENAI_API_KEY", "timeout_ms": 30000}
  },
  "generation": "qwen2.5-7b-instruct@local",
  "judges": ["gpt-4o@openai", {"name": "second", "backend": "local", "model": "qwen-judge"}],
  "template_dir": "tpl",
  "locale": "ja",
  "mode": "no_stage",
  "window_size": 8,
  "temperature": 0.7,
  "max_tokens": 512
})";

TEST(Config, FullDocument) {
  TempDir tmp;
  const auto c = config_from_json(json::parse(kConfig), tmp.path(), fake_env({}));
  ASSERT_EQ(c.backends.size(), 2u);
  EXPECT_EQ(c.backend("local").config.base_url, "http://localhost:8000/v1");
  EXPECT_EQ(c.backend("local").config.max_retries, 5);
  EXPECT_EQ(c.backend("openai").config.api_key_env, "OPENAI_API_KEY");
  EXPECT_EQ(c.backend("openai").config.timeout, Milliseconds(30000));
  EXPECT_EQ(c.generation.backend, "local");
  EXPECT_EQ(c.generation.model, "qwen2.5-7b-instruct");
  ASSERT_EQ(c.judges.size(), 2u);
  EXPECT_EQ(c.judges[0].name, "gpt-4o");
  EXPECT_EQ(c.judges[0].ref.backend, "openai");
  EXPECT_EQ(c.judges[1].name, "second");
  EXPECT_EQ(c.template_dir, tmp.path() / "tpl");
  EXPECT_EQ(c.locale, Locale::kJa);
  EXPECT_EQ(c.mode, Mode::kNoStage);
  const auto p = c.pipeline_config("m");
  EXPECT_EQ(p.window_size, 8u);
  EXPECT_EQ(p.temperature, 0.7);
  EXPECT_EQ(p.max_tokens, 512);
}

TEST(Config, EnvironmentOverridesDefault) {
  const auto c = config_from_json(json::parse(kConfig), {}, fake_env({{"VLLM_HOST", "gpu01:9000"}}));
  EXPECT_EQ(c.backend("local").config.base_url, "http://gpu01:9000/v1");
}

TEST(Config, Errors) {
  const auto env = fake_env({});
  auto with = [&](const char* key, json value) {
    auto j = json::parse(kConfig);
    j[key] = std::move(value);
    return j;
  };
  EXPECT_EQ(code_of([&] { config_from_json(with("backends", json::object()), {}, env); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([&] { config_from_json(with("generation", "m@nowhere"), {}, env); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([&] { config_from_json(with("mode", "turbo"), {}, env); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([&] { config_from_json(with("locale", "fr"), {}, env); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([&] { config_from_json(with("window_size", "six"), {}, env); }), ErrorCode::kConfigError);
  auto no_url = json::parse(kConfig);
  no_url["backends"]["openai"].erase("base_url");
  EXPECT_EQ(code_of([&] { config_from_json(no_url, {}, env); }), ErrorCode::kConfigError);
  auto bad_type = json::parse(kConfig);
  bad_type["backends"]["local"]["type"] = "grpc";
  EXPECT_EQ(code_of([&] { config_from_json(bad_type, {}, env); }), ErrorCode::kConfigError);
}

TEST(Config, LoadFromFile) {
  TempDir tmp;
  std::ofstream(tmp / "c.json") << kConfig;
  const auto c = load_config(tmp / "c.json", fake_env({}));
  EXPECT_EQ(c.template_dir, tmp / "tpl");
  std::ofstream(tmp / "bad.json") << "{";
  EXPECT_EQ(code_of([&] { load_config(tmp / "bad.json"); }), ErrorCode::kConfigError);
}

TEST(Config, OfflineRegistryServesAllModels) {
  const auto c = AppConfig::offline();
  ClientRegistry reg(c);
  auto& client = reg.get(c.generation.backend);
  ChatRequest req;
  req.model = c.generation.model;
  req.messages = {{Role::kUser, "hello"}};
  req.purpose = "response";
  EXPECT_FALSE(client.complete(req).text.empty());
  EXPECT_EQ(reg.backend_calls(), 1u);
  EXPECT_EQ(code_of([&] { reg.get("nope"); }), ErrorCode::kConfigError);
  for (const auto& judge : c.judges) EXPECT_NO_THROW(reg.get(judge.ref.backend));
}

}  // namespace
}  // namespace counselflow
