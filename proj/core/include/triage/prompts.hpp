#pragma once

// Persona roster, progressive prompt stages and the prompt templates for
// every judgment stage. Prompt text is data: rosters and stage configs load
// from JSON and the built-in defaults are only a starting point.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/core.hpp"

namespace triage::cej {

class TemplateError : public ConfigError {
 public:
  using ConfigError::ConfigError;
  const char* kind() const noexcept override { return "template"; }
};

struct Persona {
  std::string persona_id;
  std::string display_name;
  /// Short identity used by the P1 stage, e.g. "a psychologist".
  std::string identity;
  /// Full description used from P2 on; starts lower-case so it reads after "You are ".
  std::string role_description;
  std::string demographic_note;
  /// Extra names accepted when mapping debate turns back to personas.
  std::vector<std::string> aliases;

  /// True when `name` equals the id, display name or an alias, ignoring case.
  bool answers_to(std::string_view name) const;
};

using Roster = std::vector<Persona>;

/// The six built-in personas, in table order.
Roster default_roster();
Roster roster_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Persona& p);
/// Non-empty, unique ids, non-empty role descriptions.
void validate_roster(const Roster& roster);

enum class Stage { P1 = 1, P2, P3, P4, P5 };
std::string_view to_string(Stage stage) noexcept;
Stage parse_stage(std::string_view text);

struct Example {
  std::string text;
  /// A schema label, or "1"/"0" for binary schemas.
  std::string label;
  std::string language;
};

struct PromptStageConfig {
  Stage stage = Stage::P5;
  std::string definition_text;
  std::string objective_text;
  std::vector<Example> examples;

  /// P3+ need a definition; P4+ need examples in at least two languages.
  void validate() const;
};

/// Built-in config for a stage, with examples whose labels fit the schema.
PromptStageConfig default_stage_config(Stage stage, const TaskSchema& schema);
/// {"stage": "P5", "definition_text": ..., "objective_text": ..., "examples": [{text,label,language}]}.
/// Missing fields fall back to default_stage_config.
PromptStageConfig stage_config_from_json(const nlohmann::json& j, const TaskSchema& schema);
nlohmann::json to_json(const PromptStageConfig& cfg);

/// "1"/"0" for binary schemas, the label itself otherwise.
std::string label_code(const TaskSchema& schema, std::string_view label);

struct OpinionView {
  const Persona* persona = nullptr;
  bool abstained = false;
  std::string label;
  std::string justification;
  double confidence = 0.0;
};

struct TurnView {
  const Persona* persona = nullptr;
  std::string reaction;
  std::string updated_reasoning;
  std::string final_stance;
  bool stance_changed = false;
  double updated_confidence = 0.0;
};

std::string build_initial_prompt(const Persona& persona, std::string_view text, const PromptStageConfig& cfg,
                                 const TaskSchema& schema);
std::string build_debate_prompt(std::string_view text, const std::vector<OpinionView>& opinions,
                                const PromptStageConfig& cfg, const TaskSchema& schema);
std::string build_summary_prompt(std::string_view text, const std::vector<TurnView>& turns);

/// What the judge sees in place of a clean summary.
struct JudgeContext {
  enum class Kind { Summary, RawDebate, OpinionsOnly };
  Kind kind = Kind::Summary;
  std::string content;
};

std::string build_judge_prompt(std::string_view text, const std::vector<OpinionView>& opinions,
                               const JudgeContext& context, const PromptStageConfig& cfg, const TaskSchema& schema);

/// The fixed zero-shot instruction for a built-in task.
std::string zero_shot_instruction(const TaskSchema& schema);
std::string build_zero_shot_prompt(std::string_view text, const TaskSchema& schema);

}  // namespace triage::cej
