#pragma once

// Collaborative expert judgment: persona opinions, one debate call, a summary
// and a judge verdict per escalated instance.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/core.hpp"
#include "triage/llmgw.hpp"
#include "triage/prompts.hpp"
#include "triage/structured_output.hpp"

namespace triage::cej {

struct PersonaOpinion {
  std::string persona_id;
  bool abstained = false;
  std::string label;
  std::string justification;
  double confidence = 0.0;
  std::vector<std::string> coercions;
  std::string error;  ///< why the persona abstained
};

struct DebateTurn {
  std::string persona_id;
  std::string intent;
  std::string reaction;
  std::string updated_reasoning;
  std::string final_stance;
  bool stance_changed = false;
  std::optional<std::string> changed_from;
  double updated_confidence = 0.0;
  /// The reaction names no other persona.
  bool engagement_violation = false;
  std::vector<std::string> coercions;
};

struct Judgment {
  std::string label;
  std::string justification;
  double confidence = 0.0;
  std::vector<std::string> coercions;
};

struct RawPayload {
  std::string stage;  ///< "opinion", "debate", "summary", "judge"
  std::string persona_id;
  int call = 1;  ///< logical call number within the stage (parse retries increment it)
  std::string prompt;
  std::string response;
  std::string error;
};

struct StageWindow {
  std::int64_t start_ns = 0;
  std::int64_t end_ns = 0;
};

struct CejTranscript {
  std::string instance_id;
  std::string task_id;
  std::string stage;
  std::string text;
  std::string specialist_label;

  std::vector<PersonaOpinion> opinions;
  std::vector<DebateTurn> debate;
  bool debate_degraded = false;
  std::string summary;
  bool summary_degraded = false;
  bool summary_skipped = false;
  std::optional<Judgment> judgment;

  /// The judged label, or the specialist label when the judge failed.
  std::string final_label;
  bool fallback = false;
  /// Any abstention or stage degradation.
  bool degraded = false;

  /// Physical gateway attempts for this instance, read from the ledger.
  std::size_t llm_calls = 0;
  std::map<std::string, double> per_stage_latency_ms;
  std::map<std::string, StageWindow> stage_windows;
  std::vector<RawPayload> raw_payloads;

  std::vector<std::string> abstentions() const;
  /// opinions < debate < summary < judge on the ledger clock, skipping absent stages.
  bool stage_order_holds() const;
};

nlohmann::json to_json(const CejTranscript& t);
CejTranscript transcript_from_json(const nlohmann::json& j);

struct CejInstance {
  std::string instance_id;
  std::string text;
  /// Used only when the judge fails.
  std::string specialist_label;
};

struct CejOptions {
  /// Extra logical calls per stage when a reply does not parse.
  int parse_retries = 2;
  bool parallel_opinions = false;
};

class CejRunner {
 public:
  CejRunner(llmgw::Gateway& gateway, TaskSchema schema, Roster roster, PromptStageConfig stage_cfg,
            CejOptions options = {});

  /// Runs all four stages for one instance. Only UnscriptedRequest and
  /// programming errors escape; everything else degrades into flags.
  CejTranscript run(const CejInstance& instance) const;

  const TaskSchema& schema() const noexcept { return schema_; }
  const Roster& roster() const noexcept { return roster_; }
  const PromptStageConfig& stage_config() const noexcept { return stage_cfg_; }

  /// Gateway calls for a clean instance: one per persona plus debate, summary and judge.
  std::size_t calls_per_instance() const noexcept { return roster_.size() + 3; }

 private:
  llmgw::Gateway& gateway_;
  TaskSchema schema_;
  Roster roster_;
  PromptStageConfig stage_cfg_;
  CejOptions options_;
};

/// One JSON document per instance under <root>/<run_id>/<instance_id>.json.
class TranscriptStore {
 public:
  TranscriptStore(std::filesystem::path root, std::string run_id);

  std::filesystem::path directory() const { return root_ / run_id_; }
  std::filesystem::path path_for(std::string_view instance_id) const;
  bool contains(std::string_view instance_id) const;
  /// Atomic write; safe to call from concurrent workers for distinct ids.
  void save(const CejTranscript& t) const;
  CejTranscript load(std::string_view instance_id) const;

 private:
  std::filesystem::path root_;
  std::string run_id_;
};

/// Runs every instance, skipping ones already in the store. Results keep
/// input order. Up to `workers` instances run at once.
std::vector<CejTranscript> run_cej_batch(const CejRunner& runner, const std::vector<CejInstance>& instances,
                                         const TranscriptStore* store, int workers = 1);

/// One call with the fixed zero-shot instruction. An unmappable reply throws
/// ParseError.
std::string zero_shot_classify(std::string_view text, const TaskSchema& schema, llmgw::Gateway& gateway,
                               std::string correlation_id = "zero-shot");

}  // namespace triage::cej
