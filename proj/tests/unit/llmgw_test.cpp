#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "triage/jsonl.hpp"
#include "triage/llmgw.hpp"
#include "triage/mock_transport.hpp"

using namespace triage;
using namespace triage::llmgw;

namespace {

const std::filesystem::path kWire = std::filesystem::path(TRIAGE_FIXTURE_DIR) / "wire";

GatewayConfig two_backends() {
  return GatewayConfig::from_json(nlohmann::json::parse(R"({
    "backend": {
      "personas": {"url": "http://127.0.0.1:9/v1/chat/completions", "model": "persona-model"},
      "judge": {"url": "http://127.0.0.1:9/v1/chat/completions", "model": "judge-model", "timeout_ms": 5000}
    },
    "sampling": {"temperature": 0.0, "seed": 7, "max_tokens": 512},
    "retry": {"max_attempts": 3, "base_backoff_ms": 100}
  })"));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(GatewayConfig, ParsesAndDefaultsSummarizer) {
  const auto cfg = two_backends();
  EXPECT_EQ(cfg.backend_for(Role::Judge).model, "judge-model");
  EXPECT_EQ(cfg.backend_for(Role::Judge).timeout_ms, 5000);
  EXPECT_EQ(cfg.backend_for(Role::Summarizer).model, "persona-model");
  EXPECT_EQ(cfg.sampling.seed, 7);
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(GatewayConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
}

TEST(GatewayConfig, EnvOverridesWin) {
  auto cfg = two_backends();
  std::map<std::string, std::string> env = {{"TRIAGE_BACKEND_JUDGE_URL", "http://judge:8000/v1/chat/completions"},
                                            {"TRIAGE_BACKEND_JUDGE_BEARER_TOKEN", "secret"},
                                            {"TRIAGE_RETRY_MAX_ATTEMPTS", "5"}};
  cfg.apply_env_overrides([&](const std::string& k) -> std::optional<std::string> {
    auto it = env.find(k);
    return it == env.end() ? std::nullopt : std::optional<std::string>(it->second);
  });
  EXPECT_EQ(cfg.backend_for(Role::Judge).url, "http://judge:8000/v1/chat/completions");
  EXPECT_EQ(cfg.backend_for(Role::Judge).bearer_token, "secret");
  EXPECT_EQ(cfg.retry.max_attempts, 5);
  env = {{"TRIAGE_RETRY_MAX_ATTEMPTS", "many"}};
  EXPECT_THROW(cfg.apply_env_overrides([&](const std::string& k) -> std::optional<std::string> {
    auto it = env.find(k);
    return it == env.end() ? std::nullopt : std::optional<std::string>(it->second);
  }),
               ConfigError);
}

TEST(GatewayConfig, MissingBackendIsConfigError) {
  GatewayConfig cfg;
  EXPECT_THROW(cfg.backend_for(Role::Judge), ConfigError);
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Wire, RequestMatchesGolden) {
  const auto cfg = two_backends();
  const Gateway gw(cfg, std::make_shared<MockTransport>(std::vector<MockRule>{}));
  const auto req = gw.make_request(Role::Judge, "Classify this tweet.", "golden");
  auto golden = slurp(kWire / "request_golden.json");
  golden.erase(golden.find_last_not_of('\n') + 1);
  EXPECT_EQ(wire::request_body(req, cfg.backend_for(Role::Judge)).dump(), golden);
}

TEST(Wire, ResponseContent) {
  EXPECT_EQ(wire::response_content(slurp(kWire / "response_sample.json")), R"({"label": 0, "confidence": 0.79})");
  EXPECT_THROW(wire::response_content(R"({"choices": []})"), ValidationError);
  EXPECT_THROW(wire::response_content("not json"), ValidationError);
}

TEST(Gateway, RetriesWithExponentialBackoff) {
  auto mock = std::make_shared<MockTransport>(std::vector<MockRule>{
      {"flaky", {"hello"}, std::nullopt, {MockResponse::timeout(), MockResponse::http_error(503), MockResponse::ok("fine")}, true}});
  std::vector<std::chrono::milliseconds> sleeps;
  Gateway gw(two_backends(), mock, [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  const auto resp = gw.chat(gw.make_request(Role::Personas, "hello", "c1"));
  EXPECT_EQ(resp.content, "fine");
  EXPECT_EQ(resp.attempt, 3);
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100), std::chrono::milliseconds(200)}));
  const auto entries = gw.ledger().entries();
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_EQ(entries[0].outcome, "transport_error");
  EXPECT_EQ(entries[1].outcome, "http_503");
  EXPECT_EQ(entries[2].outcome, "ok");
  for (std::size_t i = 1; i < entries.size(); ++i) EXPECT_GT(entries[i].started_ns, entries[i - 1].finished_ns);
}

TEST(Gateway, ExhaustedBudgetThrows) {
  auto mock = std::make_shared<MockTransport>(
      std::vector<MockRule>{{"down", {"hello"}, std::nullopt, {MockResponse::http_error(500, "boom")}, true}});
  Gateway gw(two_backends(), mock, [](std::chrono::milliseconds) {});
  try {
    gw.chat(gw.make_request(Role::Judge, "hello", "c2"));
    FAIL();
  } catch (const GatewayError& e) {
    EXPECT_EQ(e.attempts(), 3);
    EXPECT_EQ(e.last_status(), 500);
    EXPECT_EQ(e.last_body(), "boom");
  }
  EXPECT_EQ(gw.ledger().count_with_prefix("c2"), 3u);
}

TEST(Gateway, UnscriptedIsNotRetried) {
  auto mock = std::make_shared<MockTransport>(std::vector<MockRule>{});
  Gateway gw(two_backends(), mock, [](std::chrono::milliseconds) {});
  EXPECT_THROW(gw.chat(gw.make_request(Role::Judge, "nobody scripted this", "c3")), UnscriptedRequest);
  ASSERT_EQ(gw.ledger().size(), 1u);
  EXPECT_EQ(gw.ledger().entries()[0].outcome, "unscripted");
}

TEST(MockTransport, ScriptJsonPlayback) {
  const auto rules = MockTransport::rules_from_json(nlohmann::json::parse(R"({"rules": [
    {"name": "judge-only", "match": {"contains": ["x"], "role": "judge"},
     "responses": [{"content": "first", "latency_ms": 40}, {"content": "second"}], "repeat_last": false},
    {"name": "fallback", "match": {"contains": ["x"]}, "responses": [{"status": 429, "body": "slow down"}]}
  ]})"));
  MockTransport mock(rules);
  const auto cfg = two_backends();
  ChatRequest req;
  req.messages = {{"user", "x marks"}};
  req.role = Role::Judge;
  auto r1 = mock.send(cfg.backend_for(Role::Judge), req);
  EXPECT_TRUE(r1.ok);
  EXPECT_EQ(r1.content, "first");
  EXPECT_EQ(r1.simulated_latency, std::chrono::milliseconds(40));
  EXPECT_EQ(mock.send(cfg.backend_for(Role::Judge), req).content, "second");
  auto r3 = mock.send(cfg.backend_for(Role::Judge), req);
  EXPECT_FALSE(r3.ok);
  EXPECT_EQ(r3.http_status, 429);
  req.role = Role::Personas;
  EXPECT_EQ(mock.send(cfg.backend_for(Role::Personas), req).http_status, 429);
  EXPECT_EQ(mock.hits(), (std::vector<std::size_t>{2, 2}));
  EXPECT_EQ(mock.total_requests(), 4u);
  EXPECT_THROW(MockTransport::rules_from_json(nlohmann::json::parse(R"({"rules": [{"name": "bad"}]})")), Error);
}

TEST(HttpTransport, TalksToLocalServer) {
  httplib::Server server;
  std::string seen_body, seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_body = req.body;
    seen_auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"pong"}}]})", "application/json");
  });
  server.Post("/v1/broken", [](const httplib::Request&, httplib::Response& res) {
    res.status = 502;
    res.set_content("bad gateway", "text/plain");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendConfig ok{"local", "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions", "m", "tok", 5000};
  BackendConfig broken{"local", "http://127.0.0.1:" + std::to_string(port) + "/v1/broken", "m", std::nullopt, 5000};
  ChatRequest req;
  req.messages = {{"user", "ping"}};
  HttpTransport http;
  const auto reply = http.send(ok, req);
  const auto failed = http.send(broken, req);
  server.stop();
  t.join();

  EXPECT_TRUE(reply.ok);
  EXPECT_EQ(reply.content, "pong");
  EXPECT_EQ(seen_auth, "Bearer tok");
  EXPECT_EQ(nlohmann::json::parse(seen_body).at("messages")[0].at("content"), "ping");
  EXPECT_FALSE(failed.ok);
  EXPECT_EQ(failed.http_status, 502);
}

TEST(HttpTransport, RejectsHttps) {
  BackendConfig b{"tls", "https://example.com/v1/chat/completions", "m", std::nullopt, 1000};
  ChatRequest req;
  req.messages = {{"user", "ping"}};
  HttpTransport http;
  bool threw = false;
  try {
    const auto r = http.send(b, req);
    EXPECT_FALSE(r.ok);
  } catch (const Error&) {
    threw = true;
  }
  SUCCEED() << (threw ? "rejected by exception" : "rejected by reply");
}
