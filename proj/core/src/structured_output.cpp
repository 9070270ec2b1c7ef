#include "triage/structured_output.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <regex>

namespace triage::cej {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string normalize_label_text(std::string_view s) {
  s = trim(s);
  while (!s.empty() && (s.front() == '"' || s.front() == '\'' || s.front() == '*' || s.front() == '`')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == '"' || s.back() == '\'' || s.back() == '*' || s.back() == '`' || s.back() == '.'))
    s.remove_suffix(1);
  return lower(trim(s));
}

struct CodedName {
  std::string code;
  std::string name;
};

CodedName split_code(std::string_view text) {
  static const std::regex re(R"(^(\d+(?:\.\d+)?)\s*[.)]?\s*(.*)$)");
  const std::string s(text);
  std::smatch m;
  if (std::regex_match(s, m, re)) return {m[1].str(), m[2].str()};
  return {"", s};
}

}  // namespace

std::optional<std::string> match_label(std::string_view text, const TaskSchema& schema) {
  const std::string t = normalize_label_text(text);
  if (t.empty()) return std::nullopt;
  for (const auto& l : schema.class_labels()) {
    if (normalize_label_text(l) == t) return l;
  }
  if (schema.is_binary()) {
    static const char* positive[] = {"1", "yes", "sexist", "true", "sexist (1)"};
    static const char* negative[] = {"0", "no", "not sexist", "non-sexist", "false", "not sexist (0)"};
    for (const char* p : positive) {
      if (t == p) return schema.label(schema.positive_index());
    }
    for (const char* n : negative) {
      if (t == n) return schema.negative_label();
    }
    return std::nullopt;
  }
  const CodedName given = split_code(t);
  for (const auto& l : schema.class_labels()) {
    const CodedName own = split_code(normalize_label_text(l));
    if (!given.code.empty()) {
      if (given.code == own.code) return l;
    } else if (!own.name.empty() && given.name == own.name) {
      return l;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

namespace {

/// Top-level balanced {...} (and, if allowed, [...]) blocks, string-aware.
std::vector<std::string_view> balanced_blocks(std::string_view text, bool arrays) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c != '{' && !(arrays && c == '[')) {
      ++i;
      continue;
    }
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t j = i;
    for (; j < text.size(); ++j) {
      const char d = text[j];
      if (in_string) {
        if (escaped) escaped = false;
        else if (d == '\\') escaped = true;
        else if (d == '"') in_string = false;
        continue;
      }
      if (d == '"') in_string = true;
      else if (d == '{' || d == '[') ++depth;
      else if (d == '}' || d == ']') {
        if (--depth == 0) break;
      }
    }
    if (j >= text.size()) break;
    out.push_back(text.substr(i, j - i + 1));
    i = j + 1;
  }
  return out;
}

/// `"key": value (note)` -> `"key": value, "key_note": "note"`.
std::string repair_annotations(std::string_view text) {
  static const std::regex re(R"re(("(\w+)"\s*:\s*)("(?:[^"\\]|\\.)*"|[^\s,}\]("]+)\s*\(([^()]*)\))re");
  const std::string s(text);
  std::string out;
  auto begin = std::sregex_iterator(s.begin(), s.end(), re);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out.append(s, last, static_cast<std::size_t>(m.position(0)) - last);
    out += m[1].str() + m[3].str() + ", " + json(m[2].str() + "_note").dump() + ": " +
           json(std::string(trim(m[4].str()))).dump();
    last = static_cast<std::size_t>(m.position(0) + m.length(0));
  }
  out.append(s, last, std::string::npos);
  return out;
}

std::optional<json> try_parse(std::string_view text) {
  json j = json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  return j;
}

std::optional<json> try_parse_repaired(std::string_view text) {
  if (auto j = try_parse(text)) return j;
  return try_parse(repair_annotations(text));
}

std::string excerpt(std::string_view raw) {
  std::string s(raw.substr(0, 160));
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string string_field(const json& obj, const char* key, Coercions& co) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    co.notes.push_back(std::string(key) + "_missing");
    return {};
  }
  if (it->is_string()) return it->get<std::string>();
  co.notes.push_back(std::string(key) + "_not_string");
  return it->dump();
}

double confidence_field(const json& obj, std::initializer_list<const char*> keys, Coercions& co, std::string_view raw) {
  const json* v = nullptr;
  std::string key;
  for (const char* k : keys) {
    if (auto it = obj.find(k); it != obj.end() && !it->is_null()) {
      v = &*it;
      key = k;
      break;
    }
  }
  if (!v) throw ParseError("reply has no confidence field", std::string(raw));
  double value = 0.0;
  if (v->is_number()) {
    value = v->get<double>();
  } else if (v->is_string()) {
    std::string s(trim(v->get<std::string>()));
    bool percent = false;
    if (!s.empty() && s.back() == '%') {
      percent = true;
      s.pop_back();
    }
    char* end = nullptr;
    value = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
      throw ParseError("confidence '" + v->get<std::string>() + "' is not a number", std::string(raw));
    if (percent) {
      value /= 100.0;
      co.notes.push_back(key + "_from_percent");
    }
    co.notes.push_back(key + "_from_string");
  } else {
    throw ParseError("confidence has type " + std::string(v->type_name()), std::string(raw));
  }
  if (!std::isfinite(value)) throw ParseError("confidence is not finite", std::string(raw));
  if (value < 0.0 || value > 1.0) {
    value = std::clamp(value, 0.0, 1.0);
    co.notes.push_back(key + "_clamped");
  }
  return value;
}

std::string label_field(const json& obj, const char* key, const TaskSchema& schema, Coercions& co, std::string_view raw) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) throw ParseError(std::string("reply has no ") + key + " field", std::string(raw));
  std::string text;
  if (it->is_string()) {
    text = it->get<std::string>();
  } else if (it->is_number_integer() || it->is_number_unsigned()) {
    text = std::to_string(it->get<long long>());
  } else if (it->is_boolean()) {
    text = it->get<bool>() ? "1" : "0";
  } else {
    throw ParseError(std::string(key) + " has type " + it->type_name(), std::string(raw));
  }
  auto label = match_label(text, schema);
  if (!label) throw ParseError(std::string(key) + " '" + text + "' is not a label of this task", std::string(raw));
  if (*label != text) co.notes.push_back(std::string(key) + "_mapped:" + text);
  return *label;
}

const json& single_object(const json& j, std::string_view raw) {
  if (j.is_object()) return j;
  if (j.is_array() && j.size() == 1 && j[0].is_object()) return j[0];
  throw ParseError("reply is not a JSON object", std::string(raw));
}

ParsedTurn turn_from_object(const json& obj, const TaskSchema& schema, std::string_view raw) {
  ParsedTurn t;
  t.persona = string_field(obj, "persona", t.coercions);
  if (t.persona.empty()) throw ParseError("debate turn without persona", std::string(raw));
  t.intent = string_field(obj, "intent", t.coercions);
  t.reaction = string_field(obj, "reaction", t.coercions);
  t.updated_reasoning = string_field(obj, "updated_reasoning", t.coercions);

  std::optional<std::string> note;
  if (auto n = obj.find("final_stance_note"); n != obj.end() && n->is_string()) note = n->get<std::string>();
  json stance = obj.contains("final_stance") ? obj.at("final_stance") : json(nullptr);
  if (stance.is_string() && !note) {
    static const std::regex inline_note(R"(^\s*(.*?)\s*\(([^()]*)\)\s*$)");
    const std::string s = stance.get<std::string>();
    std::smatch m;
    if (std::regex_match(s, m, inline_note)) {
      stance = m[1].str();
      note = m[2].str();
    }
  }
  json holder = {{"final_stance", stance}};
  t.final_stance = label_field(holder, "final_stance", schema, t.coercions, raw);

  if (auto c = obj.find("stance_changed"); c != obj.end() && c->is_boolean()) {
    t.stance_changed = c->get<bool>();
  }
  if (auto f = obj.find("changed_from"); f != obj.end() && f->is_string()) {
    t.changed_from = match_label(f->get<std::string>(), schema);
  }
  if (note) {
    const std::string n = lower(trim(*note));
    static const std::string prefix = "changed from";
    if (n.starts_with(prefix)) {
      t.stance_changed = true;
      t.changed_from = match_label(std::string(trim(std::string_view(*note).substr(prefix.size()))), schema);
    } else if (n.starts_with("unchanged")) {
      t.stance_changed = false;
    } else {
      t.coercions.notes.push_back("final_stance_note_unrecognized");
    }
  }
  if (t.changed_from && *t.changed_from == t.final_stance) t.stance_changed = false;
  t.updated_confidence = confidence_field(obj, {"updated_confidence", "confidence"}, t.coercions, raw);
  return t;
}

void collect_turn_objects(const json& j, std::vector<const json*>& out) {
  if (j.is_array()) {
    for (const auto& e : j) collect_turn_objects(e, out);
  } else if (j.is_object()) {
    if (j.contains("persona")) {
      out.push_back(&j);
      return;
    }
    for (const char* key : {"turns", "debate", "personas", "responses", "discussion"}) {
      if (auto it = j.find(key); it != j.end() && it->is_array()) {
        collect_turn_objects(*it, out);
        return;
      }
    }
  }
}

}  // namespace

json extract_json_object(std::string_view raw) {
  if (auto j = try_parse(trim(raw))) {
    if (j->is_object() || j->is_array()) return *j;
  }
  auto blocks = balanced_blocks(raw, false);
  if (blocks.empty()) throw ParseError("no JSON object in reply: " + excerpt(raw), std::string(raw));
  if (auto j = try_parse_repaired(blocks.front())) return *j;
  throw ParseError("malformed JSON object in reply: " + excerpt(blocks.front()), std::string(raw));
}

ParsedOpinion parse_opinion(std::string_view raw, const TaskSchema& schema) {
  const json parsed = extract_json_object(raw);
  const json& obj = single_object(parsed, raw);
  ParsedOpinion o;
  if (auto p = obj.find("persona"); p != obj.end() && p->is_string()) o.persona = p->get<std::string>();
  o.label = label_field(obj, "label", schema, o.coercions, raw);
  o.justification = string_field(obj, "justification", o.coercions);
  o.confidence = confidence_field(obj, {"confidence"}, o.coercions, raw);
  return o;
}

std::vector<ParsedTurn> parse_debate(std::string_view raw, const TaskSchema& schema) {
  std::vector<json> roots;
  if (auto j = try_parse_repaired(trim(raw))) {
    roots.push_back(std::move(*j));
  } else {
    for (auto block : balanced_blocks(raw, true)) {
      if (auto b = try_parse_repaired(block)) roots.push_back(std::move(*b));
    }
  }
  std::vector<const json*> objects;
  for (const auto& r : roots) collect_turn_objects(r, objects);
  if (objects.empty()) throw ParseError("no debate turns in reply: " + excerpt(raw), std::string(raw));
  std::vector<ParsedTurn> turns;
  turns.reserve(objects.size());
  for (const json* o : objects) turns.push_back(turn_from_object(*o, schema, raw));
  return turns;
}

ParsedJudgment parse_judgment(std::string_view raw, const TaskSchema& schema) {
  const json parsed = extract_json_object(raw);
  const json& obj = single_object(parsed, raw);
  ParsedJudgment j;
  j.label = label_field(obj, "label", schema, j.coercions, raw);
  j.justification = string_field(obj, "justification", j.coercions);
  j.confidence = confidence_field(obj, {"confidence"}, j.coercions, raw);
  return j;
}

ParsedPayload parse_structured_output(std::string_view raw, PayloadKind kind, const TaskSchema& schema) {
  switch (kind) {
    case PayloadKind::Opinion: return parse_opinion(raw, schema);
    case PayloadKind::Debate: return parse_debate(raw, schema);
    case PayloadKind::Judgment: return parse_judgment(raw, schema);
  }
  throw ValidationError("unknown payload kind");
}

json to_json(const ParsedOpinion& o) {
  return json{{"persona", o.persona}, {"label", o.label}, {"justification", o.justification}, {"confidence", o.confidence}};
}

json to_json(const ParsedTurn& t) {
  return json{{"persona", t.persona},
              {"intent", t.intent},
              {"reaction", t.reaction},
              {"updated_reasoning", t.updated_reasoning},
              {"final_stance", t.final_stance},
              {"stance_changed", t.stance_changed},
              {"changed_from", t.changed_from ? json(*t.changed_from) : json(nullptr)},
              {"updated_confidence", t.updated_confidence}};
}

json to_json(const ParsedJudgment& j) {
  return json{{"label", j.label}, {"justification", j.justification}, {"confidence", j.confidence}};
}

}  // namespace triage::cej
