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

#include <algorithm>
#include <random>
#include <set>
#include <thread>

#include <httplib.h>

#include "counselflow/hash.hpp"
#include "counselflow/http_transport.hpp"
#include "counselflow/llm_client.hpp"
#include "counselflow/mock_backend.hpp"
#include "counselflow/parallel.hpp"
#include "test_support.hpp"

namespace counselflow {
namespace {

using testing::MockClient;
using testing::TempDir;

ChatRequest simple_request(std::string prompt, double temperature = 0.0) {
  ChatRequest r;
  r.model = "m";
  r.messages.push_back({Role::kUser, std::move(prompt)});
  r.temperature = temperature;
  return r;
}

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

TEST(Hash, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Canonical, StableAcrossEquivalentRequests) {
  auto a = simple_request("hi");
  auto b = simple_request("hi");
  b.temperature = -0.0;
  b.purpose = "other";
  EXPECT_EQ(request_hash("http://x/", a), request_hash("http://x", b));
  EXPECT_NE(request_hash("http://x", simple_request("hi", 0.0)), request_hash("http://x", simple_request("hi", 0.7)));
  auto c = a;
  c.max_tokens = 10;
  EXPECT_NE(request_hash("http://x", a), request_hash("http://x", c));
  EXPECT_NE(request_hash("http://x", a), request_hash("http://y", a));
}

TEST(Validate, RejectsBadRequests) {
  EXPECT_EQ(code_of([] { validate(ChatRequest{}); }), ErrorCode::kInvalidRequest);
  auto r = simple_request("x");
  r.temperature = -1;
  EXPECT_EQ(code_of([&] { validate(r); }), ErrorCode::kInvalidRequest);
  r = simple_request("");
  EXPECT_EQ(code_of([&] { validate(r); }), ErrorCode::kInvalidRequest);
}

TEST(Client, ScriptedReplyByPromptHash) {
  MockClient m(mock::scripted({{mock::prompt_hash("hello"), "OK"}}, "fallback"));
  const auto r = m.client->complete(simple_request("hello"));
  EXPECT_EQ(r.text, "OK");
  EXPECT_FALSE(r.from_cache);
  EXPECT_EQ(r.request_hash, request_hash("mock://local", simple_request("hello")));
  EXPECT_EQ(m.client->complete(simple_request("other")).text, "fallback");
  const auto t = m.client->transcripts();
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].response, "OK");
  EXPECT_EQ(t[0].request["model"], "m");
}

TEST(Client, WireFormat) {
  MockClient m(mock::fixed_reply("x"));
  auto req = simple_request("hello", 0.5);
  req.max_tokens = 64;
  m.client->complete(req);
  const auto call = m.transport->calls().at(0);
  EXPECT_EQ(call.request.url, "mock://local/v1/chat/completions");
  EXPECT_EQ(call.body["model"], "m");
  EXPECT_EQ(call.body["messages"][0]["role"], "user");
  EXPECT_EQ(call.body["messages"][0]["content"], "hello");
  EXPECT_DOUBLE_EQ(call.body["temperature"].get<double>(), 0.5);
  EXPECT_EQ(call.body["max_tokens"], 64);
}

TEST(Client, RetriesTransientFailuresThenSucceeds) {
  std::vector<Milliseconds> sleeps;
  MockClient m(mock::fail_first(2, mock::status_reply(503), mock::fixed_reply("done")), testing::mock_backend_config(3),
               testing::no_sleep_options(&sleeps));
  EXPECT_EQ(m.client->complete(simple_request("x")).text, "done");
  EXPECT_EQ(m.calls(), 3u);
  EXPECT_EQ(m.client->transcripts().at(0).attempts, 3);
  ASSERT_EQ(sleeps.size(), 2u);
  EXPECT_EQ(sleeps[0], Milliseconds(500));
  EXPECT_EQ(sleeps[1], Milliseconds(1000));
}

TEST(Client, RetryBudgetExhausted) {
  for (int retries = 0; retries <= 4; ++retries) {
    MockClient rate(
        [](const HttpRequest&, const json&, std::size_t) { return mock::status_reply(429); },
        testing::mock_backend_config(retries));
    EXPECT_EQ(code_of([&] { rate.client->complete(simple_request("x")); }), ErrorCode::kRateLimited);
    EXPECT_EQ(rate.calls(), static_cast<std::size_t>(retries + 1));
  }
  MockClient timeout([](const HttpRequest&, const json&, std::size_t) { return HttpResponse{0, "", true, "timeout"}; });
  EXPECT_EQ(code_of([&] { timeout.client->complete(simple_request("x")); }), ErrorCode::kTimeout);
  EXPECT_EQ(timeout.calls(), 4u);
  MockClient refused([](const HttpRequest&, const json&, std::size_t) { return HttpResponse{0, "", false, "refused"}; });
  EXPECT_EQ(code_of([&] { refused.client->complete(simple_request("x")); }), ErrorCode::kTransportError);
}

TEST(Client, AuthAndClientErrorsAreNotRetried) {
  for (int status : {401, 403}) {
    MockClient m([status](const HttpRequest&, const json&, std::size_t) { return mock::status_reply(status); });
    EXPECT_EQ(code_of([&] { m.client->complete(simple_request("x")); }), ErrorCode::kAuthError);
    EXPECT_EQ(m.calls(), 1u);
  }
  MockClient bad([](const HttpRequest&, const json&, std::size_t) { return mock::status_reply(400); });
  EXPECT_EQ(code_of([&] { bad.client->complete(simple_request("x")); }), ErrorCode::kInvalidRequest);
  EXPECT_EQ(bad.calls(), 1u);
}

TEST(Client, MalformedResponses) {
  for (const char* body : {R"({"choices":[{"text":"x"}]})", R"({"choices":[]})", "not json",
                           R"({"choices":[{"message":{"role":"assistant"}}]})"}) {
    MockClient m([body](const HttpRequest&, const json&, std::size_t) { return mock::status_reply(200, body); });
    EXPECT_EQ(code_of([&] { m.client->complete(simple_request("x")); }), ErrorCode::kMalformedResponse) << body;
  }
}

TEST(Client, ApiKeyFromEnvironment) {
  auto config = testing::mock_backend_config();
  config.api_key_env = "TEST_KEY";
  auto options = testing::no_sleep_options();
  MockClient missing(mock::fixed_reply("x"), config, options);
  EXPECT_EQ(code_of([&] { missing.client->complete(simple_request("x")); }), ErrorCode::kAuthError);
  EXPECT_EQ(missing.calls(), 0u);

  options.getenv = [](const std::string& n) -> std::optional<std::string> {
    return n == "TEST_KEY" ? std::optional<std::string>("secret") : std::nullopt;
  };
  MockClient present(mock::fixed_reply("x"), config, options);
  present.client->complete(simple_request("x"));
  const auto headers = present.transport->calls().at(0).request.headers;
  EXPECT_NE(std::find(headers.begin(), headers.end(), std::pair<std::string, std::string>{"Authorization", "Bearer secret"}),
            headers.end());
}

TEST(Client, InvalidConfig) {
  auto c = testing::mock_backend_config(-1);
  EXPECT_EQ(code_of([&] { ChatClient(c, std::make_shared<mock::ScriptedTransport>(mock::fixed_reply("x"))); }),
            ErrorCode::kConfigError);
  c = testing::mock_backend_config();
  c.timeout = Milliseconds(0);
  EXPECT_EQ(code_of([&] { ChatClient(c, std::make_shared<mock::ScriptedTransport>(mock::fixed_reply("x"))); }),
            ErrorCode::kConfigError);
}

TEST(Cache, SecondCallIsServedFromCache) {
  TempDir tmp;
  ResponseCache cache(tmp.path());
  MockClient m(mock::fixed_reply("cached text"));
  const auto a = m.client->complete_cached(cache, simple_request("q"));
  const auto b = m.client->complete_cached(cache, simple_request("q"));
  EXPECT_FALSE(a.from_cache);
  EXPECT_TRUE(b.from_cache);
  EXPECT_EQ(b.text, "cached text");
  EXPECT_EQ(a.request_hash, b.request_hash);
  EXPECT_EQ(m.calls(), 1u);
  EXPECT_TRUE(std::filesystem::exists(cache.path_for(a.request_hash)));
  EXPECT_EQ(cache.path_for(a.request_hash).parent_path().filename(), a.request_hash.substr(0, 2));

  m.client->complete_cached(cache, simple_request("q", 0.7));
  EXPECT_EQ(m.calls(), 2u);
}

TEST(Cache, BackendCallsEqualDistinctRequests) {
  TempDir tmp;
  ResponseCache cache(tmp.path());
  MockClient m([](const HttpRequest&, const json& body, std::size_t) {
    return mock::completion_reply("echo:" + mock::prompt_of(body));
  });
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> pick(0, 29);
  std::vector<ChatRequest> requests;
  std::set<std::string> distinct;
  for (int i = 0; i < 100; ++i) {
    auto r = simple_request("prompt-" + std::to_string(pick(rng)), pick(rng) % 2 ? 0.0 : 0.7);
    distinct.insert(request_hash("mock://local", r));
    requests.push_back(std::move(r));
  }
  std::shuffle(requests.begin(), requests.end(), rng);
  for (const auto& r : requests) {
    EXPECT_EQ(m.client->complete_cached(cache, r).text, "echo:" + r.messages[0].content);
  }
  EXPECT_EQ(m.calls(), distinct.size());
}

TEST(Cache, ConcurrentWritersOfOneKey) {
  TempDir tmp;
  ResponseCache cache(tmp.path());
  parallel_for(64, 8, [&](std::size_t) { cache.put("abcdef", "value", R"({"k":1})"); });
  EXPECT_EQ(cache.get("abcdef"), "value");
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(tmp.path())) files += e.is_regular_file() ? 1 : 0;
  EXPECT_EQ(files, 1u);  // no temp files left behind
}

TEST(Cache, CorruptEntry) {
  TempDir tmp;
  ResponseCache cache(tmp.path());
  std::filesystem::create_directories(cache.path_for("ffee").parent_path());
  std::ofstream(cache.path_for("ffee")) << "{oops";
  EXPECT_EQ(code_of([&] { cache.get("ffee"); }), ErrorCode::kCacheIOError);
}

TEST(Parallel, VisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
}

// Exercises the real HTTP transport against an in-process server.
TEST(HttpTransport, TalksOpenAICompatibleProtocol) {
  httplib::Server server;
  std::string seen_auth, seen_body;
  int hits = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    seen_auth = req.get_header_value("Authorization");
    seen_body = req.body;
    if (hits == 1) {
      res.status = 500;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"from server"}}]})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendConfig c;
  c.name = "local";
  c.base_url = "http://127.0.0.1:" + std::to_string(port) + "/";
  c.api_key_env = "K";
  c.timeout = Milliseconds(5000);
  auto options = testing::no_sleep_options();
  options.getenv = [](const std::string&) -> std::optional<std::string> { return "tok"; };
  ChatClient client(c, std::make_shared<HttplibTransport>(), options);
  const auto r = client.complete(simple_request("ping"));
  server.stop();
  t.join();

  EXPECT_EQ(r.text, "from server");
  EXPECT_EQ(hits, 2);
  EXPECT_EQ(seen_auth, "Bearer tok");
  EXPECT_EQ(json::parse(seen_body)["messages"][0]["content"], "ping");
}

TEST(HttpTransport, ConnectionFailureIsTransportError) {
  BackendConfig c;
  c.name = "dead";
  c.base_url = "http://127.0.0.1:1";
  c.max_retries = 1;
  c.timeout = Milliseconds(500);
  ChatClient client(c, std::make_shared<HttplibTransport>(), testing::no_sleep_options());
  const auto code = code_of([&] { client.complete(simple_request("x")); });
  EXPECT_TRUE(code == ErrorCode::kTransportError || code == ErrorCode::kTimeout) << to_string(code);
  EXPECT_EQ(client.backend_calls(), 2u);
}

}  // namespace
}  // namespace counselflow
