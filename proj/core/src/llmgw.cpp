#include "triage/llmgw.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "triage/core.hpp"

namespace triage::llmgw {

using nlohmann::json;

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::Personas: return "personas";
    case Role::Judge: return "judge";
    case Role::Summarizer: return "summarizer";
  }
  return "personas";
}

Role parse_role(std::string_view text) {
  for (Role r : {Role::Personas, Role::Judge, Role::Summarizer}) {
    if (to_string(r) == text) return r;
  }
  throw ConfigError("unknown backend role '" + std::string(text) + "'");
}

void ChatRequest::validate() const {
  if (messages.empty()) throw ValidationError("chat request needs at least one message");
  for (const auto& m : messages) {
    if (m.role != "system" && m.role != "user") throw ValidationError("message role must be system or user");
    if (m.content.empty()) throw ValidationError("chat message content is empty");
  }
}

std::string ChatRequest::joined_content() const {
  std::string out;
  for (const auto& m : messages) {
    if (!out.empty()) out += '\n';
    out += m.content;
  }
  return out;
}

// ---------------------------------------------------------------------------

GatewayConfig GatewayConfig::from_json(const json& j) {
  GatewayConfig cfg;
  try {
    if (auto b = j.find("backend"); b != j.end()) {
      for (const auto& [name, spec] : b->items()) {
        BackendConfig bc;
        bc.id = spec.value("id", name);
        bc.url = spec.value("url", "");
        bc.model = spec.value("model", "");
        if (auto t = spec.find("bearer_token"); t != spec.end() && !t->is_null()) bc.bearer_token = t->get<std::string>();
        if (auto e = spec.find("bearer_token_env"); e != spec.end() && !e->is_null()) {
          if (const char* v = std::getenv(e->get<std::string>().c_str())) bc.bearer_token = v;
        }
        bc.timeout_ms = spec.value("timeout_ms", bc.timeout_ms);
        cfg.backends[parse_role(name)] = bc;
      }
    }
    if (auto s = j.find("sampling"); s != j.end()) {
      cfg.sampling.temperature = s->value("temperature", cfg.sampling.temperature);
      cfg.sampling.max_tokens = s->value("max_tokens", cfg.sampling.max_tokens);
      if (auto seed = s->find("seed"); seed != s->end() && !seed->is_null()) cfg.sampling.seed = seed->get<std::int64_t>();
    }
    if (auto r = j.find("retry"); r != j.end()) {
      cfg.retry.max_attempts = r->value("max_attempts", cfg.retry.max_attempts);
      cfg.retry.base_backoff_ms = r->value("base_backoff_ms", cfg.retry.base_backoff_ms);
    }
    cfg.max_in_flight = j.value("max_in_flight", cfg.max_in_flight);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed gateway config: ") + e.what());
  }
  return cfg;
}

json GatewayConfig::to_json() const {
  json backend = json::object();
  for (const auto& [role, b] : backends) {
    // Tokens are deliberately not echoed into snapshots.
    backend[std::string(llmgw::to_string(role))] = {
        {"id", b.id}, {"url", b.url}, {"model", b.model}, {"timeout_ms", b.timeout_ms}};
  }
  return json{{"backend", backend},
              {"sampling",
               {{"temperature", sampling.temperature},
                {"max_tokens", sampling.max_tokens},
                {"seed", sampling.seed ? json(*sampling.seed) : json(nullptr)}}},
              {"retry", {{"max_attempts", retry.max_attempts}, {"base_backoff_ms", retry.base_backoff_ms}}},
              {"max_in_flight", max_in_flight}};
}

GatewayConfig::EnvLookup GatewayConfig::process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

namespace {

std::string env_name(std::string_view dotted) {
  std::string out = GatewayConfig::kEnvPrefix;
  for (char c : dotted) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

template <typename T>
T parse_env_number(const std::string& name, const std::string& value) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_same_v<T, double>) {
      out = std::stod(value, &used);
    } else {
      out = static_cast<T>(std::stoll(value, &used));
    }
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("environment override " + name + "='" + value + "' is not a number");
  }
}

}  // namespace

void GatewayConfig::apply_env_overrides(const EnvLookup& lookup) {
  for (Role role : {Role::Personas, Role::Judge, Role::Summarizer}) {
    const std::string base = "backend." + std::string(llmgw::to_string(role)) + ".";
    for (const char* field : {"url", "model", "bearer_token", "timeout_ms"}) {
      const std::string name = env_name(base + field);
      auto value = lookup(name);
      if (!value) continue;
      auto& b = backends[role];
      if (b.id.empty()) b.id = std::string(llmgw::to_string(role));
      const std::string f = field;
      if (f == "url") b.url = *value;
      else if (f == "model") b.model = *value;
      else if (f == "bearer_token") b.bearer_token = *value;
      else b.timeout_ms = parse_env_number<int>(name, *value);
    }
  }
  if (auto v = lookup(env_name("sampling.temperature"))) sampling.temperature = parse_env_number<double>("sampling.temperature", *v);
  if (auto v = lookup(env_name("sampling.seed"))) sampling.seed = parse_env_number<std::int64_t>("sampling.seed", *v);
  if (auto v = lookup(env_name("sampling.max_tokens"))) sampling.max_tokens = parse_env_number<int>("sampling.max_tokens", *v);
  if (auto v = lookup(env_name("retry.max_attempts"))) retry.max_attempts = parse_env_number<int>("retry.max_attempts", *v);
  if (auto v = lookup(env_name("retry.base_backoff_ms"))) retry.base_backoff_ms = parse_env_number<int>("retry.base_backoff_ms", *v);
  if (auto v = lookup(env_name("max_in_flight"))) max_in_flight = parse_env_number<int>("max_in_flight", *v);
}

const BackendConfig& GatewayConfig::backend_for(Role role) const {
  if (auto it = backends.find(role); it != backends.end()) return it->second;
  if (role == Role::Summarizer) {
    if (auto it = backends.find(Role::Personas); it != backends.end()) return it->second;
  }
  throw ConfigError("no backend configured for role '" + std::string(llmgw::to_string(role)) + "'");
}

void GatewayConfig::validate() const {
  if (retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be >= 1");
  if (retry.base_backoff_ms < 0) throw ConfigError("retry.base_backoff_ms must be >= 0");
  if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  (void)backend_for(Role::Personas);
  (void)backend_for(Role::Judge);
}

// ---------------------------------------------------------------------------

namespace wire {

json request_body(const ChatRequest& req, const BackendConfig& backend) {
  json messages = json::array();
  for (const auto& m : req.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  json body;
  body["model"] = req.model_name.empty() ? backend.model : req.model_name;
  body["messages"] = std::move(messages);
  body["temperature"] = req.sampling.temperature;
  body["max_tokens"] = req.sampling.max_tokens;
  if (req.sampling.seed) body["seed"] = *req.sampling.seed;
  return body;
}

std::string response_content(std::string_view body) {
  try {
    const auto j = json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw ValidationError("choices[0].message.content is not a string");
    return content.get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed chat-completion response: ") + e.what());
  }
}

}  // namespace wire

TransportReply HttpTransport::send(const BackendConfig& backend, const ChatRequest& req) {
  const std::string& url = backend.url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.compare(0, scheme_end, "http") != 0)
    throw ConfigError("backend '" + backend.id + "' url must start with http:// (got '" + url + "')");
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string host = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(host);
  const auto timeout = std::chrono::milliseconds(backend.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (backend.bearer_token) headers.emplace("Authorization", "Bearer " + *backend.bearer_token);

  const auto body = wire::request_body(req, backend).dump();
  auto res = client.Post(path, headers, body, "application/json");
  TransportReply reply;
  if (!res) {
    reply.content = "transport error: " + httplib::to_string(res.error());
    return reply;
  }
  reply.http_status = res->status;
  if (res->status < 200 || res->status >= 300) {
    reply.content = res->body;
    return reply;
  }
  try {
    reply.content = wire::response_content(res->body);
    reply.ok = true;
  } catch (const ValidationError& e) {
    reply.content = e.what();
  }
  return reply;
}

// ---------------------------------------------------------------------------

CallLedger::CallLedger() : epoch_(std::chrono::steady_clock::now()) {}

std::int64_t CallLedger::tick() {
  std::lock_guard lock(mu_);
  const auto now = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - epoch_).count();
  last_tick_ = std::max<std::int64_t>(now, last_tick_ + 1);
  return last_tick_;
}

void CallLedger::append(LedgerEntry entry) {
  std::lock_guard lock(mu_);
  entry.seq = entries_.size();
  entries_.push_back(std::move(entry));
}

std::size_t CallLedger::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::vector<LedgerEntry> CallLedger::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::vector<LedgerEntry> CallLedger::entries_with_prefix(std::string_view prefix) const {
  std::lock_guard lock(mu_);
  std::vector<LedgerEntry> out;
  for (const auto& e : entries_) {
    if (std::string_view(e.correlation_id).starts_with(prefix)) out.push_back(e);
  }
  return out;
}

std::size_t CallLedger::count_with_prefix(std::string_view prefix) const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [&](const LedgerEntry& e) {
    return std::string_view(e.correlation_id).starts_with(prefix);
  }));
}

InFlightLimit::InFlightLimit(int limit) : available_(std::max(1, limit)) {}

void InFlightLimit::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return available_ > 0; });
  --available_;
}

void InFlightLimit::release() {
  {
    std::lock_guard lock(mu_);
    ++available_;
  }
  cv_.notify_one();
}

// ---------------------------------------------------------------------------

Gateway::Gateway(GatewayConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })),
      in_flight_(config_.max_in_flight) {
  config_.validate();
  if (!transport_) throw ConfigError("gateway needs a transport");
}

ChatRequest Gateway::make_request(Role role, std::string prompt, std::string correlation_id) const {
  ChatRequest req;
  req.messages.push_back({"user", std::move(prompt)});
  req.sampling = config_.sampling;
  req.role = role;
  req.correlation_id = std::move(correlation_id);
  return req;
}

ChatResponse Gateway::chat(const ChatRequest& req) {
  req.validate();
  const BackendConfig& backend = config_.backend_for(req.role);
  const std::string request_fp = hex64(fnv1a64(wire::request_body(req, backend).dump()));

  int last_status = 0;
  std::string last_body;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    if (attempt > 1) {
      const auto backoff = std::chrono::milliseconds(
          static_cast<std::int64_t>(config_.retry.base_backoff_ms) << std::min(attempt - 2, 20));
      sleeper_(backoff);
    }
    LedgerEntry entry;
    entry.correlation_id = req.correlation_id;
    entry.role = req.role;
    entry.backend_id = backend.id;
    entry.attempt = attempt;
    entry.request_fingerprint = request_fp;

    TransportReply reply;
    in_flight_.acquire();
    entry.started_ns = ledger_.tick();
    const auto wall_start = std::chrono::steady_clock::now();
    try {
      reply = transport_->send(backend, req);
    } catch (const UnscriptedRequest&) {
      in_flight_.release();
      entry.finished_ns = ledger_.tick();
      entry.outcome = "unscripted";
      ledger_.append(std::move(entry));
      throw;
    } catch (...) {
      in_flight_.release();
      throw;
    }
    const auto measured = std::chrono::steady_clock::now() - wall_start;
    in_flight_.release();
    entry.finished_ns = ledger_.tick();

    if (reply.ok) {
      entry.outcome = "ok";
      entry.response_fingerprint = hex64(fnv1a64(reply.content));
      ledger_.append(std::move(entry));
      ChatResponse resp;
      resp.content = std::move(reply.content);
      resp.latency = reply.simulated_latency ? *reply.simulated_latency
                                             : std::chrono::duration_cast<std::chrono::nanoseconds>(measured);
      resp.attempt = attempt;
      resp.backend_id = backend.id;
      return resp;
    }
    entry.outcome = reply.http_status ? "http_" + std::to_string(reply.http_status) : "transport_error";
    entry.response_fingerprint = hex64(fnv1a64(reply.content));
    ledger_.append(std::move(entry));
    last_status = reply.http_status;
    last_body = std::move(reply.content);
  }
  throw GatewayError("gateway: " + std::to_string(config_.retry.max_attempts) + " attempt(s) to backend '" +
                         backend.id + "' failed (last status " + std::to_string(last_status) + ": " +
                         last_body.substr(0, 200) + ")",
                     last_status, last_body, config_.retry.max_attempts);
}

}  // namespace triage::llmgw
