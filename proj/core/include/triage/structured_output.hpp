#pragma once

// Lenient parsing of model replies that were asked for a JSON object.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/core.hpp"

namespace triage::cej {

/// Unrecoverable reply; carries the raw text for the transcript.
class ParseError : public ValidationError {
 public:
  ParseError(std::string message, std::string raw) : ValidationError(std::move(message)), raw_(std::move(raw)) {}
  const char* kind() const noexcept override { return "parse"; }
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

enum class PayloadKind { Opinion, Debate, Judgment };

/// Maps free-form label text onto a schema label. Binary schemas accept
/// 1/0, yes/no, sexist/not sexist and the labels themselves; multi-class
/// schemas accept the label, its numeric code ("2", "3.2", "2)") or its name.
std::optional<std::string> match_label(std::string_view text, const TaskSchema& schema);

/// Recorded whenever a value had to be coerced rather than read as-is.
struct Coercions {
  std::vector<std::string> notes;
  bool empty() const noexcept { return notes.empty(); }
};

struct ParsedOpinion {
  std::string persona;  ///< as written by the model; may be empty
  std::string label;
  std::string justification;
  double confidence = 0.0;
  Coercions coercions;
};

struct ParsedTurn {
  std::string persona;
  std::string intent;
  std::string reaction;
  std::string updated_reasoning;
  std::string final_stance;
  bool stance_changed = false;
  std::optional<std::string> changed_from;
  double updated_confidence = 0.0;
  Coercions coercions;
};

struct ParsedJudgment {
  std::string label;
  std::string justification;
  double confidence = 0.0;
  Coercions coercions;
};

using ParsedPayload = std::variant<ParsedOpinion, std::vector<ParsedTurn>, ParsedJudgment>;

/// Stage 1 of the pipeline below, exposed for testing: the whole body parsed
/// strictly, else the first balanced {...} block, else that block after the
/// "value (changed from x)" repair. Throws ParseError.
nlohmann::json extract_json_object(std::string_view raw);

/// (1) strict parse, (2) first balanced block, (3) field coercions.
ParsedOpinion parse_opinion(std::string_view raw, const TaskSchema& schema);
/// Accepts an array of turns, an object holding one, or a run of objects.
std::vector<ParsedTurn> parse_debate(std::string_view raw, const TaskSchema& schema);
ParsedJudgment parse_judgment(std::string_view raw, const TaskSchema& schema);
ParsedPayload parse_structured_output(std::string_view raw, PayloadKind kind, const TaskSchema& schema);

/// Canonical JSON; parsing it back yields the same record.
nlohmann::json to_json(const ParsedOpinion& o);
nlohmann::json to_json(const ParsedTurn& t);
nlohmann::json to_json(const ParsedJudgment& j);

}  // namespace triage::cej
