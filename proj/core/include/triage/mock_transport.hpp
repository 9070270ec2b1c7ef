#pragma once

// Scriptable transport for deterministic runs without a model server.

#include <chrono>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/llmgw.hpp"

namespace triage::llmgw {

struct MockResponse {
  enum class Kind { Ok, Timeout, HttpError };
  Kind kind = Kind::Ok;
  std::string content;
  int status = 200;
  std::chrono::milliseconds latency{0};

  static MockResponse ok(std::string content, std::chrono::milliseconds latency = {});
  static MockResponse timeout();
  static MockResponse http_error(int status, std::string body = {});
};

/// Matches when every `contains` substring occurs in the request's joined
/// message content and, if set, the role matches.
struct MockRule {
  std::string name;
  std::vector<std::string> contains;
  std::optional<Role> role;
  /// Played back in order; once exhausted the last one repeats unless
  /// repeat_last is false, in which case the rule stops matching.
  std::vector<MockResponse> responses;
  bool repeat_last = true;
};

/// First matching rule wins. A request no rule matches throws
/// UnscriptedRequest naming the start of the prompt.
///
/// Script JSON:
///   {"rules": [{"name": str, "match": {"contains": [str...], "role": str},
///               "responses": [{"content": str, "latency_ms": int}
///                             | {"fail": "timeout"} | {"status": int, "body": str}],
///               "repeat_last": bool}]}
class MockTransport final : public Transport {
 public:
  explicit MockTransport(std::vector<MockRule> rules);
  static MockTransport from_json(const nlohmann::json& script);
  static std::vector<MockRule> rules_from_json(const nlohmann::json& script);

  TransportReply send(const BackendConfig& backend, const ChatRequest& req) override;

  /// Number of requests served by each rule, in rule order.
  std::vector<std::size_t> hits() const;
  std::size_t total_requests() const;

 private:
  std::vector<MockRule> rules_;
  mutable std::mutex mu_;
  std::vector<std::size_t> cursor_;
  std::vector<std::size_t> hits_;
  std::size_t total_ = 0;
};

}  // namespace triage::llmgw
