#pragma once

// Gateway to chat-completion backends. Every physical attempt, including
// retries, is recorded in the CallLedger.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/error.hpp"

namespace triage::llmgw {

/// Which configured backend serves a request.
enum class Role { Personas, Judge, Summarizer };

std::string_view to_string(Role role) noexcept;
Role parse_role(std::string_view text);

struct ChatMessage {
  std::string role;  ///< "system" or "user"
  std::string content;
};

struct Sampling {
  double temperature = 0.0;
  int max_tokens = 1024;
  std::optional<std::int64_t> seed;
};

struct ChatRequest {
  /// Empty means "use the backend's configured model".
  std::string model_name;
  std::vector<ChatMessage> messages;
  Sampling sampling;
  Role role = Role::Personas;
  /// Free-form grouping key recorded in the ledger, e.g. "inst-7/opinion/linguist".
  std::string correlation_id;

  void validate() const;
  /// All message contents joined by newlines.
  std::string joined_content() const;
};

struct ChatResponse {
  std::string content;
  std::chrono::nanoseconds latency{0};
  int attempt = 1;
  std::string backend_id;
};

/// Retry budget exhausted or a non-retryable transport failure.
class GatewayError : public Error {
 public:
  GatewayError(std::string message, int last_status, std::string last_body, int attempts)
      : Error(std::move(message)), last_status_(last_status), last_body_(std::move(last_body)), attempts_(attempts) {}
  const char* kind() const noexcept override { return "gateway"; }
  int last_status() const noexcept { return last_status_; }
  const std::string& last_body() const noexcept { return last_body_; }
  int attempts() const noexcept { return attempts_; }

 private:
  int last_status_;
  std::string last_body_;
  int attempts_;
};

/// A mock transport saw a request no rule matches. Not retried, and not
/// swallowed by degradation paths: an incomplete script is a test bug.
class UnscriptedRequest : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "unscripted_request"; }
};

// ---------------------------------------------------------------------------
// Configuration

struct BackendConfig {
  std::string id;
  std::string url;  ///< full endpoint, e.g. http://localhost:11434/v1/chat/completions
  std::string model;
  std::optional<std::string> bearer_token;
  int timeout_ms = 120000;
};

struct RetryPolicy {
  /// Total attempts per logical call (1 + retries).
  int max_attempts = 3;
  int base_backoff_ms = 1000;
};

/// Keys: backend.{personas,judge,summarizer}.{url,model,bearer_token,timeout_ms},
/// sampling.{temperature,seed,max_tokens}, retry.{max_attempts,base_backoff_ms},
/// max_in_flight. The summarizer backend defaults to the personas backend.
struct GatewayConfig {
  std::map<Role, BackendConfig> backends;
  Sampling sampling;
  RetryPolicy retry;
  int max_in_flight = 4;

  static GatewayConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  /// Environment prefix for overrides: TRIAGE_ + upper-cased dotted key with
  /// dots replaced by underscores, e.g. TRIAGE_BACKEND_JUDGE_URL.
  static constexpr const char* kEnvPrefix = "TRIAGE_";
  using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
  void apply_env_overrides(const EnvLookup& lookup);
  static EnvLookup process_env();

  const BackendConfig& backend_for(Role role) const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Wire format (OpenAI-style chat completions)

namespace wire {
/// {"max_tokens", "messages": [{"content","role"}], "model", "seed"?, "temperature"}
nlohmann::json request_body(const ChatRequest& req, const BackendConfig& backend);
/// choices[0].message.content; throws ValidationError when absent.
std::string response_content(std::string_view body);
}  // namespace wire

// ---------------------------------------------------------------------------
// Transport

struct TransportReply {
  bool ok = false;
  int http_status = 0;
  std::string content;  ///< message content on success, body or error text otherwise
  /// Mock transports report scripted latency here instead of sleeping.
  std::optional<std::chrono::nanoseconds> simulated_latency;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportReply send(const BackendConfig& backend, const ChatRequest& req) = 0;
};

/// POSTs the wire body over HTTP. https endpoints are not supported.
class HttpTransport final : public Transport {
 public:
  TransportReply send(const BackendConfig& backend, const ChatRequest& req) override;
};

// ---------------------------------------------------------------------------
// Ledger

struct LedgerEntry {
  std::uint64_t seq = 0;
  std::string correlation_id;
  Role role = Role::Personas;
  std::string backend_id;
  int attempt = 1;
  std::string request_fingerprint;
  std::string response_fingerprint;
  /// Nanoseconds on the ledger's clock; strictly increasing across the ledger.
  std::int64_t started_ns = 0;
  std::int64_t finished_ns = 0;
  std::string outcome;  ///< "ok", "transport_error", "http_<status>", "unscripted"
};

class CallLedger {
 public:
  CallLedger();

  /// Strictly increasing timestamp on the ledger clock.
  std::int64_t tick();
  void append(LedgerEntry entry);

  std::size_t size() const;
  std::vector<LedgerEntry> entries() const;
  /// Entries whose correlation id starts with prefix.
  std::vector<LedgerEntry> entries_with_prefix(std::string_view prefix) const;
  std::size_t count_with_prefix(std::string_view prefix) const;

 private:
  mutable std::mutex mu_;
  std::chrono::steady_clock::time_point epoch_;
  std::int64_t last_tick_ = 0;
  std::vector<LedgerEntry> entries_;
};

// ---------------------------------------------------------------------------

/// Semaphore-style bound on concurrent in-flight calls.
class InFlightLimit {
 public:
  explicit InFlightLimit(int limit);
  void acquire();
  void release();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int available_;
};

class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Gateway(GatewayConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper = {});

  /// Routes by req.role, retries failed attempts with exponential backoff
  /// (base, 2*base, ...). Throws GatewayError once the budget is spent.
  ChatResponse chat(const ChatRequest& req);

  /// A single-message user request carrying the configured sampling.
  ChatRequest make_request(Role role, std::string prompt, std::string correlation_id) const;

  const GatewayConfig& config() const noexcept { return config_; }
  const CallLedger& ledger() const noexcept { return ledger_; }

 private:
  GatewayConfig config_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  CallLedger ledger_;
  InFlightLimit in_flight_;
};

}  // namespace triage::llmgw
