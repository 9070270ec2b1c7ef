#include "triage/mock_transport.hpp"

#include <algorithm>

namespace triage::llmgw {

using nlohmann::json;

MockResponse MockResponse::ok(std::string content, std::chrono::milliseconds latency) {
  MockResponse r;
  r.content = std::move(content);
  r.latency = latency;
  return r;
}

MockResponse MockResponse::timeout() {
  MockResponse r;
  r.kind = Kind::Timeout;
  r.status = 0;
  r.content = "timeout";
  return r;
}

MockResponse MockResponse::http_error(int status, std::string body) {
  MockResponse r;
  r.kind = Kind::HttpError;
  r.status = status;
  r.content = std::move(body);
  return r;
}

MockTransport::MockTransport(std::vector<MockRule> rules)
    : rules_(std::move(rules)), cursor_(rules_.size(), 0), hits_(rules_.size(), 0) {
  for (const auto& r : rules_) {
    if (r.responses.empty()) throw ConfigError("mock rule '" + r.name + "' has no responses");
  }
}

MockTransport MockTransport::from_json(const json& script) {
  return MockTransport(rules_from_json(script));
}

std::vector<MockRule> MockTransport::rules_from_json(const json& script) {
  std::vector<MockRule> rules;
  try {
    std::size_t index = 0;
    for (const auto& jr : script.at("rules")) {
      MockRule rule;
      rule.name = jr.value("name", "rule-" + std::to_string(index++));
      if (auto m = jr.find("match"); m != jr.end()) {
        if (auto c = m->find("contains"); c != m->end()) {
          if (c->is_string()) {
            rule.contains.push_back(c->get<std::string>());
          } else {
            rule.contains = c->get<std::vector<std::string>>();
          }
        }
        if (auto role = m->find("role"); role != m->end() && !role->is_null()) rule.role = parse_role(role->get<std::string>());
      }
      for (const auto& resp : jr.at("responses")) {
        if (resp.is_string()) {
          rule.responses.push_back(MockResponse::ok(resp.get<std::string>()));
        } else if (resp.contains("fail")) {
          if (resp.at("fail") != "timeout") throw ConfigError("mock rule '" + rule.name + "': unknown fail kind");
          rule.responses.push_back(MockResponse::timeout());
        } else if (resp.contains("status")) {
          rule.responses.push_back(MockResponse::http_error(resp.at("status").get<int>(), resp.value("body", "")));
        } else {
          rule.responses.push_back(MockResponse::ok(resp.at("content").get<std::string>(),
                                                    std::chrono::milliseconds(resp.value("latency_ms", 0))));
        }
      }
      rule.repeat_last = jr.value("repeat_last", true);
      rules.push_back(std::move(rule));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed mock script: ") + e.what());
  }
  return rules;
}

TransportReply MockTransport::send(const BackendConfig&, const ChatRequest& req) {
  const std::string text = req.joined_content();
  std::lock_guard lock(mu_);
  ++total_;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const auto& rule = rules_[i];
    if (rule.role && *rule.role != req.role) continue;
    const bool all = std::all_of(rule.contains.begin(), rule.contains.end(),
                                 [&](const std::string& s) { return text.find(s) != std::string::npos; });
    if (!all) continue;
    if (!rule.repeat_last && cursor_[i] >= rule.responses.size()) continue;

    const auto& resp = rule.responses[std::min(cursor_[i], rule.responses.size() - 1)];
    ++cursor_[i];
    ++hits_[i];
    TransportReply reply;
    reply.simulated_latency = std::chrono::duration_cast<std::chrono::nanoseconds>(resp.latency);
    switch (resp.kind) {
      case MockResponse::Kind::Ok:
        reply.ok = true;
        reply.http_status = 200;
        reply.content = resp.content;
        break;
      case MockResponse::Kind::Timeout:
        reply.content = "timeout";
        break;
      case MockResponse::Kind::HttpError:
        reply.http_status = resp.status;
        reply.content = resp.content;
        break;
    }
    return reply;
  }
  std::string head = text.substr(0, 120);
  std::replace(head.begin(), head.end(), '\n', ' ');
  throw UnscriptedRequest("no mock rule matches " + std::string(to_string(req.role)) + " request '" +
                          req.correlation_id + "': " + head);
}

std::vector<std::size_t> MockTransport::hits() const {
  std::lock_guard lock(mu_);
  return hits_;
}

std::size_t MockTransport::total_requests() const {
  std::lock_guard lock(mu_);
  return total_;
}

}  // namespace triage::llmgw
