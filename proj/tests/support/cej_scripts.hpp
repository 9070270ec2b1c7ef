#pragma once

// Mock scripts and payloads shared by the CEJ tests and the acceptance suite.

#include <algorithm>
#include <chrono>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/cej.hpp"
#include "triage/mock_transport.hpp"

namespace triage::testing {

// Stage markers that occur in exactly one prompt template each.
inline constexpr const char* kOpinionMarker = "tasked with classifying";
inline constexpr const char* kDebateMarker = "You are continuing the expert panel discussion";
inline constexpr const char* kSummaryMarker = "You are summarizing";
inline constexpr const char* kJudgeMarker = "You are an impartial judge";

/// The initial-opinion example object, verbatim.
inline std::string figure_opinion_payload() {
  return "{\n"
         "\"persona\": \"Normal Person\",\n"
         "\"label\": \"1\",\n"
         "\"justification\": \"The tweet stereotypes women's intelligence.\",\n"
         "\"confidence\": \"0.87\"\n"
         "}";
}

/// The judge example object, verbatim.
inline std::string figure_judge_payload() {
  return "{\n"
         "  \"label\": 0,\n"
         "  \"justification\": \"Although the tweet contains profanity and strong language, it is not clearly "
         "directed at women. Based on the personas' disagreement and the classification guidelines, the tweet is "
         "offensive but not sexist.\",\n"
         "  \"confidence\": 0.79\n"
         "}";
}

/// The debate example object, verbatim, including its unquoted annotation.
inline std::string figure_debate_turn() {
  return "{\n"
         "  \"persona\": \"Sexism Victim\",\n"
         "  \"intent\": \"The author's intent is to shame the woman by dismissing her distress.\",\n"
         "  \"reaction\": \"Agree with Linguist because their interpretation highlights the use of gendered "
         "stereotypes.\",\n"
         "  \"updated_reasoning\": \"While my initial view focused on tone, I now realize the tweet uses the "
         "'victim card' trope to discredit women's emotional responses.\",\n"
         "  \"final_stance\": 1 (changed from 0),\n"
         "  \"updated_confidence\": 0.72\n"
         "}";
}

/// One turn per roster persona, each naming the next persona in its reaction.
inline std::string debate_payload(const cej::Roster& roster, const std::string& stance, bool engage = true,
                                  const std::vector<std::string>& skip = {}) {
  nlohmann::json turns = nlohmann::json::array();
  for (std::size_t i = 0; i < roster.size(); ++i) {
    if (std::find(skip.begin(), skip.end(), roster[i].persona_id) != skip.end()) continue;
    const std::string peer = roster[(i + 1) % roster.size()].display_name;
    turns.push_back({{"persona", roster[i].display_name},
                     {"intent", "The author mocks women."},
                     {"reaction", engage ? "Agree with " + peer + " on the framing." : "I keep my view."},
                     {"updated_reasoning", "The stereotype is explicit."},
                     {"final_stance", stance + " (unchanged)"},
                     {"updated_confidence", 0.8}});
  }
  return turns.dump();
}

inline llmgw::MockRule rule(std::string name, std::vector<std::string> contains, std::vector<llmgw::MockResponse> responses,
                            bool repeat_last = true) {
  llmgw::MockRule r;
  r.name = std::move(name);
  r.contains = std::move(contains);
  r.responses = std::move(responses);
  r.repeat_last = repeat_last;
  return r;
}

inline llmgw::MockResponse ok(std::string content, int latency_ms = 3) {
  return llmgw::MockResponse::ok(std::move(content), std::chrono::milliseconds(latency_ms));
}

/// Clean binary script: figure opinion, a full debate, a summary and the figure judgment.
inline std::vector<llmgw::MockRule> clean_binary_rules(const cej::Roster& roster) {
  return {
      rule("opinion", {kOpinionMarker}, {ok(figure_opinion_payload())}),
      rule("debate", {kDebateMarker}, {ok(debate_payload(roster, "1"))}),
      rule("summary", {kSummaryMarker}, {ok("The panel leaned sexist but the judge should weigh the profanity.")}),
      rule("judge", {kJudgeMarker}, {ok(figure_judge_payload())}),
  };
}

inline llmgw::GatewayConfig mock_gateway_config(int max_attempts = 3) {
  llmgw::GatewayConfig cfg;
  cfg.backends[llmgw::Role::Personas] = {"personas", "http://127.0.0.1:9/v1/chat/completions", "persona-model", {}, 1000};
  cfg.backends[llmgw::Role::Judge] = {"judge", "http://127.0.0.1:9/v1/chat/completions", "judge-model", {}, 1000};
  cfg.retry.max_attempts = max_attempts;
  cfg.retry.base_backoff_ms = 1;
  cfg.sampling.seed = 7;
  return cfg;
}

inline llmgw::Gateway::Sleeper no_sleep() {
  return [](std::chrono::milliseconds) {};
}

}  // namespace triage::testing
