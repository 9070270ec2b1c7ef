#include "triage/jsonl.hpp"

#include <fstream>
#include <sstream>

namespace triage {

using nlohmann::json;

LogitRecord logit_record_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("logit record must be a JSON object");
  LogitRecord r;
  try {
    r.instance_id = j.at("instance_id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    if (auto it = j.find("gold_label"); it != j.end() && !it->is_null()) {
      r.gold_label = it->get<std::string>();
    }
    const auto& logits = j.at("logits");
    if (!logits.is_array()) throw ValidationError("logits must be an array");
    r.logits.reserve(logits.size());
    for (const auto& z : logits) {
      if (!z.is_number()) throw ValidationError("logits must be numbers");
      r.logits.push_back(z.get<double>());
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed logit record: ") + e.what());
  }
  return r;
}

json to_json(const LogitRecord& r) {
  json j;
  j["instance_id"] = r.instance_id;
  j["text"] = r.text;
  j["gold_label"] = r.gold_label ? json(*r.gold_label) : json(nullptr);
  j["logits"] = r.logits;
  return j;
}

std::vector<LogitRecord> read_logit_jsonl(std::istream& in) {
  std::vector<LogitRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(logit_record_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<LogitRecord> read_logit_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open logit file " + path.string());
  return read_logit_jsonl(in);
}

void write_logit_jsonl(std::ostream& out, const std::vector<LogitRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

Dataset load_dataset(const std::filesystem::path& path, const TaskSchema& schema) {
  return validate_dataset(read_logit_jsonl(path), schema);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<json> read_jsonl_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_text_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_atomic(path, j.dump(2) + "\n");
}

}  // namespace triage
