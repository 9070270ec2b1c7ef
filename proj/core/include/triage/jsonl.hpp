#pragma once

// JSON-Lines logit files: the contract between the specialist adapter and the
// pipeline. One object per line:
//   {"instance_id": str, "text": str, "gold_label": str|null, "logits": [num, ...]}

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/core.hpp"

namespace triage {

LogitRecord logit_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LogitRecord& record);

/// Blank lines are skipped. Malformed lines raise ValidationError with the line number.
std::vector<LogitRecord> read_logit_jsonl(std::istream& in);
std::vector<LogitRecord> read_logit_jsonl(const std::filesystem::path& path);
void write_logit_jsonl(std::ostream& out, const std::vector<LogitRecord>& records);

/// Reads and validates in one step.
Dataset load_dataset(const std::filesystem::path& path, const TaskSchema& schema);

/// Helpers shared by every artifact writer.
nlohmann::json read_json_file(const std::filesystem::path& path);
std::vector<nlohmann::json> read_jsonl_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace triage
