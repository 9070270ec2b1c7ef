#include "triage/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>

#include "triage/structured_output.hpp"

namespace triage::cej {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

constexpr const char* kDefinition =
    "Sexism is gender-based prejudice, stereotyping, or discrimination, typically against women. "
    "Label as sexist (1) if the tweet: (a) is sexist itself, (b) describes a sexist situation, or "
    "(c) criticizes sexist behavior.";

constexpr const char* kGuidelines =
    "(1) Consider the author's intent (insult, joke, venting, shaming). "
    "(2) Profanity alone does not indicate sexism — consider the context carefully.";

constexpr const char* kBinaryObjective = "Classify the tweet as sexist (1) or not sexist (0).";
constexpr const char* kMulticlassObjective =
    "The tweet has already been judged sexist. Assign it to exactly one of the categories listed above.";

}  // namespace

bool Persona::answers_to(std::string_view name) const {
  const std::string n = lower(name);
  if (n == lower(persona_id) || n == lower(display_name)) return true;
  return std::any_of(aliases.begin(), aliases.end(), [&](const std::string& a) { return lower(a) == n; });
}

Roster default_roster() {
  return {
      {"layperson", "Normal Person", "an average person",
       "an average person (18–22 y/o male, Portugal, B.A.) with no specialized expertise in law, psychology, "
       "or linguistics",
       "18–22 y/o male, Portugal, B.A.", {"Layperson"}},
      {"linguist", "Linguist", "a linguist",
       "a linguist (23–45 y/o male, Poland, B.A. Linguistics) specializing in semantics, pragmatics, and "
       "discourse analysis, with a focus on gendered language",
       "23–45 y/o male, Poland, B.A. Linguistics", {}},
      {"psychologist", "Psychologist", "a psychologist",
       "a psychologist specializing in language, cognitive biases, and the psychological effects of sexism",
       "45 y/o female, Argentina, Ph.D. Psychology", {}},
      {"legal_expert", "Legal Studies Expert", "a legal expert",
       "a legal expert (46+ y/o male, Portugal, M.A. Law) specializing in anti-discrimination laws, workplace "
       "regulations, and gender equality",
       "46+ y/o male, Portugal, M.A. Law", {"Legal Expert"}},
      {"gender_expert", "Gender Studies Expert", "a gender studies expert",
       "a gender studies expert (46+ y/o female, UK, B.A. Gender Studies) with deep knowledge of gender theories, "
       "power dynamics, and social structures",
       "46+ y/o female, UK, B.A. Gender Studies", {"Gender Expert"}},
      {"sexism_victim", "Sexism Victim", "a person who has experienced sexism",
       "a person (18–22 y/o female, South Africa, H.S. diploma) who has personally experienced sexism and "
       "understands its emotional and social impact",
       "18–22 y/o female, South Africa, H.S. diploma", {}},
  };
}

Roster roster_from_json(const json& j) {
  Roster roster;
  try {
    const json& list = j.is_array() ? j : j.at("roster");
    for (const auto& p : list) {
      Persona persona;
      persona.persona_id = p.at("persona_id").get<std::string>();
      persona.display_name = p.value("display_name", persona.persona_id);
      persona.role_description = p.at("role_description").get<std::string>();
      persona.identity = p.value("identity", persona.role_description);
      persona.demographic_note = p.value("demographic_note", "");
      persona.aliases = p.value("aliases", std::vector<std::string>{});
      roster.push_back(std::move(persona));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed persona roster: ") + e.what());
  }
  validate_roster(roster);
  return roster;
}

json to_json(const Persona& p) {
  return json{{"persona_id", p.persona_id},
              {"display_name", p.display_name},
              {"identity", p.identity},
              {"role_description", p.role_description},
              {"demographic_note", p.demographic_note},
              {"aliases", p.aliases}};
}

void validate_roster(const Roster& roster) {
  if (roster.empty()) throw ConfigError("persona roster is empty");
  std::set<std::string> seen;
  for (const auto& p : roster) {
    if (p.persona_id.empty()) throw ConfigError("persona with empty persona_id");
    if (p.role_description.empty()) throw ConfigError("persona '" + p.persona_id + "' has no role description");
    if (!seen.insert(p.persona_id).second) throw ConfigError("duplicate persona_id '" + p.persona_id + "'");
  }
}

std::string_view to_string(Stage stage) noexcept {
  switch (stage) {
    case Stage::P1: return "P1";
    case Stage::P2: return "P2";
    case Stage::P3: return "P3";
    case Stage::P4: return "P4";
    case Stage::P5: return "P5";
  }
  return "P5";
}

Stage parse_stage(std::string_view text) {
  for (Stage s : {Stage::P1, Stage::P2, Stage::P3, Stage::P4, Stage::P5}) {
    if (lower(to_string(s)) == lower(text)) return s;
  }
  throw ConfigError("unknown prompt stage '" + std::string(text) + "' (expected P1..P5)");
}

void PromptStageConfig::validate() const {
  if (stage >= Stage::P3 && definition_text.empty())
    throw TemplateError(std::string(to_string(stage)) + " requires a sexism definition");
  if (stage >= Stage::P2 && objective_text.empty())
    throw TemplateError(std::string(to_string(stage)) + " requires an objective");
  if (examples.empty()) throw TemplateError(std::string(to_string(stage)) + " requires few-shot examples");
  if (stage >= Stage::P4) {
    std::set<std::string> languages;
    for (const auto& e : examples) {
      if (!e.language.empty()) languages.insert(lower(e.language));
    }
    if (languages.size() < 2)
      throw TemplateError(std::string(to_string(stage)) + " requires examples in at least two languages");
  }
}

PromptStageConfig default_stage_config(Stage stage, const TaskSchema& schema) {
  PromptStageConfig cfg;
  cfg.stage = stage;
  if (stage >= Stage::P3) cfg.definition_text = kDefinition;
  if (stage >= Stage::P2) cfg.objective_text = schema.is_binary() ? kBinaryObjective : kMulticlassObjective;
  if (stage == Stage::P5) cfg.objective_text += std::string("\n") + kGuidelines;

  const std::string promoted = "She got promoted because they needed 'more women in leadership.'";
  const std::string rinden = "No tengo nada contra las mujeres, pero en cargos altos siempre rinden menos.";
  if (schema.is_binary()) {
    cfg.examples = {{promoted, "1", "en"}, {"Finally finished my thesis draft, time to sleep for a week.", "0", "en"}};
    if (stage >= Stage::P4) {
      cfg.examples.push_back({rinden, "1", "es"});
      cfg.examples.push_back({"Mañana empieza el torneo de ajedrez del barrio, ¿alguien se apunta?", "0", "es"});
    }
  } else {
    const bool fine = schema.task_id() == TaskId::EdosC;
    auto pick = [&](std::string_view code) {
      for (const auto& l : schema.class_labels()) {
        if (std::string_view(l).starts_with(code)) return l;
      }
      return schema.label(0);
    };
    cfg.examples = {{promoted, pick(fine ? "4.2" : "4."), "en"},
                    {"Women are too emotional to be trusted with anything important.", pick(fine ? "3.2" : "3."), "en"}};
    if (stage >= Stage::P4) cfg.examples.push_back({rinden, pick(fine ? "3.2" : "3."), "es"});
  }
  return cfg;
}

PromptStageConfig stage_config_from_json(const json& j, const TaskSchema& schema) {
  try {
    const Stage stage = parse_stage(j.value("stage", "P5"));
    PromptStageConfig cfg = default_stage_config(stage, schema);
    if (j.contains("definition_text")) cfg.definition_text = j.at("definition_text").get<std::string>();
    if (j.contains("objective_text")) cfg.objective_text = j.at("objective_text").get<std::string>();
    if (j.contains("examples")) {
      cfg.examples.clear();
      for (const auto& e : j.at("examples")) {
        cfg.examples.push_back({e.at("text").get<std::string>(), e.at("label").get<std::string>(), e.value("language", "")});
      }
    }
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed prompt stage config: ") + e.what());
  }
}

json to_json(const PromptStageConfig& cfg) {
  json examples = json::array();
  for (const auto& e : cfg.examples) examples.push_back({{"text", e.text}, {"label", e.label}, {"language", e.language}});
  return json{{"stage", std::string(to_string(cfg.stage))},
              {"definition_text", cfg.definition_text},
              {"objective_text", cfg.objective_text},
              {"examples", examples}};
}

std::string label_code(const TaskSchema& schema, std::string_view label) {
  const std::size_t idx = schema.require_index(label);
  if (!schema.is_binary()) return schema.label(idx);
  return idx == schema.positive_index() ? "1" : "0";
}

// ---------------------------------------------------------------------------

namespace {

std::string render_examples(const PromptStageConfig& cfg, const TaskSchema& schema) {
  std::string out;
  for (const auto& e : cfg.examples) {
    const auto label = match_label(e.label, schema);
    if (!label) throw TemplateError("example label '" + e.label + "' is not a label of " + std::string(to_string(schema.task_id())));
    std::string rendered;
    if (schema.is_binary()) {
      rendered = label_code(schema, *label) == "1" ? "Sexist (1)" : "Not sexist (0)";
    } else {
      rendered = *label;
    }
    out += "\"" + e.text + "\" → " + rendered + ".\n";
  }
  return out;
}

std::string render_categories(const TaskSchema& schema) {
  if (schema.is_binary()) return {};
  std::string out = "Categories:\n";
  for (const auto& l : schema.class_labels()) out += "- " + l + "\n";
  return out + "\n";
}

std::string decide_step(const TaskSchema& schema) {
  return schema.is_binary() ? "Decide the final label: 1 (sexist) or 0 (not sexist)."
                            : "Decide the final label: exactly one of the categories listed below.";
}

std::string guidance_sections(const PromptStageConfig& cfg, const TaskSchema& schema, bool colon_after_definition) {
  std::string out;
  if (cfg.stage >= Stage::P3) {
    out += colon_after_definition ? "Sexism Definition:\n" : "Sexism Definition\n";
    out += cfg.definition_text + "\n";
  }
  if (cfg.stage >= Stage::P2) out += "Objective:\n" + cfg.objective_text + "\n";
  out += "Here are some examples:\n" + render_examples(cfg, schema);
  return out;
}

std::string render_opinions(const std::vector<OpinionView>& opinions, const TaskSchema& schema) {
  std::string out;
  for (const auto& o : opinions) {
    out += "- " + o.persona->display_name + ": ";
    if (o.abstained) {
      out += "no opinion provided.\n";
    } else {
      out += "label " + label_code(schema, o.label) + ", confidence " + fmt_real(o.confidence) + ". " +
             o.justification + "\n";
    }
  }
  return out;
}

std::string json_label_literal(const TaskSchema& schema, bool quoted_binary, bool positive) {
  if (schema.is_binary()) {
    const std::string code = positive ? "1" : "0";
    return quoted_binary ? "\"" + code + "\"" : code;
  }
  return json(schema.label(0)).dump();
}

}  // namespace

std::string build_initial_prompt(const Persona& persona, std::string_view text, const PromptStageConfig& cfg,
                                 const TaskSchema& schema) {
  cfg.validate();
  std::string p;
  if (cfg.stage == Stage::P1) {
    p += "You are " + persona.identity + ". ";
    p += schema.is_binary() ? "Classify the following tweet as sexist or not sexist.\n"
                            : "Classify the following sexist tweet into exactly one of the categories below.\n";
    p += "Tweet: " + std::string(text) + "\n\n";
    p += render_categories(schema);
    p += "Here are some examples:\n" + render_examples(cfg, schema);
  } else {
    p += "You are " + persona.role_description + " tasked with classifying the following tweet for sexism.\n";
    p += "Tweet: " + std::string(text) + "\n\n";
    p += "Your task:\n";
    p += "1. Read the guidelines below carefully\n";
    p += "2. Analyze the tweet carefully for sexism.\n";
    p += "3. Think before responding.\n";
    p += "4. " + decide_step(schema) + "\n";
    p += "5. Provide a short justification for their label based on their role.\n";
    p += "6. Output a confidence score between 0.0 and 1.0 reflecting your certainty.\n\n";
    p += render_categories(schema);
    p += guidance_sections(cfg, schema, false);
  }
  p += "Output Example: Provide only a valid JSON object like the following example:\n";
  p += "{\n";
  p += "\"persona\": " + json(persona.display_name).dump() + ",\n";
  p += "\"label\": " + json_label_literal(schema, true, true) + ",\n";
  p += "\"justification\": \"The tweet stereotypes women's intelligence.\",\n";
  p += "\"confidence\": \"0.87\"\n";
  p += "}\n";
  return p;
}

std::string build_debate_prompt(std::string_view text, const std::vector<OpinionView>& opinions,
                                const PromptStageConfig& cfg, const TaskSchema& schema) {
  cfg.validate();
  std::string p;
  p += "You are continuing the expert panel discussion on the following tweet:\n";
  p += "Tweet: " + std::string(text) + "\n";
  p += "Initial Opinions:\n" + render_opinions(opinions, schema) + "\n";
  p += "Now, each persona must:\n";
  p += "1. Read all other personas' initial opinions.\n";
  p += "2. Reflect on whether their own reasoning is still the strongest.\n";
  p += "3. Engage with at least one other persona by agreeing or disagreeing with their argument.\n";
  p += "4. Update their stance if persuaded, or affirm their original decision.\n";
  p += "5. Reassess and adjust their confidence accordingly.\n\n";
  p += render_categories(schema);
  p += guidance_sections(cfg, schema, false);
  p += "Important Notes:\n";
  p += "- Confidence can be increased if supported by solid reasoning, or reduced if uncertainty arises.\n";
  p += "- Final answers must state if the stance is changed or unchanged.\n\n";
  p += "Output Example (per persona):\n";
  p += "{\n";
  p += "  \"persona\": \"Sexism Victim\",\n";
  p += "  \"intent\": \"The author's intent is to shame the woman by dismissing her distress.\",\n";
  p += "  \"reaction\": \"Agree with Linguist because their interpretation highlights the use of gendered stereotypes.\",\n";
  p += "  \"updated_reasoning\": \"While my initial view focused on tone, I now realize the tweet uses the 'victim card' "
       "trope to discredit women's emotional responses.\",\n";
  if (schema.is_binary()) {
    p += "  \"final_stance\": 1 (changed from 0),\n";
  } else {
    p += "  \"final_stance\": " + json(schema.label(0)).dump() + " (changed from " +
         json(schema.label(1)).dump() + "),\n";
  }
  p += "  \"updated_confidence\": 0.72\n";
  p += "}\n";
  p += "Return a JSON array holding one such object for every persona that gave an opinion.\n";
  return p;
}

std::string build_summary_prompt(std::string_view text, const std::vector<TurnView>& turns) {
  std::string p;
  p += "You are summarizing an expert panel discussion about whether the following tweet is sexist.\n";
  p += "Tweet: " + std::string(text) + "\n";
  p += "Discussion:\n";
  for (const auto& t : turns) {
    p += "- " + t.persona->display_name + " (final stance " + t.final_stance +
         (t.stance_changed ? ", changed" : ", unchanged") + "; confidence " + fmt_real(t.updated_confidence) +
         "): " + t.reaction + " " + t.updated_reasoning + "\n";
  }
  p += "\nWrite a concise synthesis of this discussion. Cover the main arguments and the points of consensus, "
       "and name any disagreements that remain unresolved. Reply with plain text only.\n";
  return p;
}

std::string build_judge_prompt(std::string_view text, const std::vector<OpinionView>& opinions,
                               const JudgeContext& context, const PromptStageConfig& cfg, const TaskSchema& schema) {
  cfg.validate();
  std::string p;
  p += "You are an impartial judge of the detection of sexist language. Review the following expert panel summary "
       "and the original tweet being discussed then classify it for sexism.\n\n";
  p += "You have the following information:\n";
  p += "Tweet: " + std::string(text) + "\n";
  p += "Initial Opinions:\n" + render_opinions(opinions, schema);
  switch (context.kind) {
    case JudgeContext::Kind::Summary:
      p += "Discussion summary:\n" + context.content + "\n\n";
      break;
    case JudgeContext::Kind::RawDebate:
      p += "Discussion transcript (no summary available):\n" + context.content + "\n\n";
      break;
    case JudgeContext::Kind::OpinionsOnly:
      p += "Discussion summary:\nNo discussion is available. Rely on the initial opinions.\n\n";
      break;
  }
  p += "Your task:\n";
  p += "1. Read the guidelines below carefully\n";
  p += "2. Review expert panel summary.\n";
  p += "3. Analyze the tweet for sexism.\n";
  p += "4. Think before responding.\n";
  p += "5. " + decide_step(schema) + "\n";
  p += "6. Provide a brief justification for your decision.\n";
  p += "7. State your confidence score (0.0–1.0).\n\n";
  p += render_categories(schema);
  p += guidance_sections(cfg, schema, true);
  p += "Output Example: Provide only a valid JSON object like the following:\n";
  p += "{\n";
  p += "  \"label\": " + json_label_literal(schema, false, false) + ",\n";
  p += "  \"justification\": \"Although the tweet contains profanity and strong language, it is not clearly directed "
       "at women. Based on the personas' disagreement and the classification guidelines, the tweet is offensive but "
       "not sexist.\",\n";
  p += "  \"confidence\": 0.79\n";
  p += "}\n";
  return p;
}

std::string zero_shot_instruction(const TaskSchema& schema) {
  switch (schema.task_id()) {
    case TaskId::Exist11:
    case TaskId::EdosA:
      return "Classify the following text as sexist or not sexist.";
    case TaskId::EdosB:
      return "Classify the following text into one of the sexism categories:\n"
             "1) Threats, plans to harm and incitement;\n"
             "2) Derogation;\n"
             "3) Animosity;\n"
             "4) Prejudiced discussions.";
    case TaskId::EdosC:
      return "Classify the following text into one of the sexism subcategories:\n"
             "1.1) Threats of harm;\n"
             "1.2) Incitement and encouragement of harm;\n"
             "2.1) Descriptive attacks;\n"
             "2.2) Aggressive and emotive attacks;\n"
             "2.3) Dehumanising attacks & overt sexual objectification;\n"
             "3.1) Casual use of gendered slurs, profanities, and insults;\n"
             "3.2) Immutable gender differences and gender stereotypes;\n"
             "3.3) Backhanded gendered compliments;\n"
             "3.4) Condescending explanations or unwelcome advice;\n"
             "4.1) Supporting mistreatment of individual women;\n"
             "4.2) Supporting systemic discrimination against women as a group.";
    case TaskId::Custom:
      break;
  }
  throw ConfigError("zero-shot prompts exist only for the built-in tasks");
}

std::string build_zero_shot_prompt(std::string_view text, const TaskSchema& schema) {
  return zero_shot_instruction(schema) + "\n\nText: " + std::string(text) + "\n";
}

}  // namespace triage::cej
