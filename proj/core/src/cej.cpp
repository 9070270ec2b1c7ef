#include "triage/cej.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "triage/jsonl.hpp"

namespace triage::cej {

using nlohmann::json;

namespace {

constexpr const char* kOpinion = "opinion";
constexpr const char* kDebate = "debate";
constexpr const char* kSummary = "summary";
constexpr const char* kJudge = "judge";

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

/// Whole-word, case-insensitive occurrence of `name` in `text`.
bool mentions(const std::string& text_lower, std::string_view name) {
  const std::string n = lower(name);
  if (n.empty()) return false;
  for (std::size_t pos = text_lower.find(n); pos != std::string::npos; pos = text_lower.find(n, pos + 1)) {
    const bool left = pos == 0 || !is_word_char(text_lower[pos - 1]);
    const std::size_t end = pos + n.size();
    const bool right = end >= text_lower.size() || !is_word_char(text_lower[end]);
    if (left && right) return true;
  }
  return false;
}

bool engages_peer(const std::string& reaction, const Persona& self, const Roster& roster) {
  const std::string r = lower(reaction);
  for (const auto& other : roster) {
    if (other.persona_id == self.persona_id) continue;
    if (mentions(r, other.persona_id) || mentions(r, other.display_name)) return true;
    for (const auto& a : other.aliases) {
      if (mentions(r, a)) return true;
    }
  }
  return false;
}

double to_ms(std::chrono::nanoseconds d) {
  return static_cast<double>(d.count()) / 1e6;
}

struct CallResult {
  std::optional<llmgw::ChatResponse> response;
  std::string error;
};

CallResult call(llmgw::Gateway& gw, llmgw::Role role, const std::string& prompt, const std::string& correlation) {
  CallResult r;
  try {
    r.response = gw.chat(gw.make_request(role, prompt, correlation));
  } catch (const llmgw::GatewayError& e) {
    r.error = e.what();
  }
  return r;
}

}  // namespace

std::vector<std::string> CejTranscript::abstentions() const {
  std::vector<std::string> out;
  for (const auto& o : opinions) {
    if (o.abstained) out.push_back(o.persona_id);
  }
  return out;
}

bool CejTranscript::stage_order_holds() const {
  std::optional<std::int64_t> previous_end;
  for (const char* stage : {kOpinion, kDebate, kSummary, kJudge}) {
    auto it = stage_windows.find(stage);
    if (it == stage_windows.end()) continue;
    if (it->second.start_ns > it->second.end_ns) return false;
    if (previous_end && !(*previous_end < it->second.start_ns)) return false;
    previous_end = it->second.end_ns;
  }
  return true;
}

// ---------------------------------------------------------------------------

CejRunner::CejRunner(llmgw::Gateway& gateway, TaskSchema schema, Roster roster, PromptStageConfig stage_cfg,
                     CejOptions options)
    : gateway_(gateway),
      schema_(std::move(schema)),
      roster_(std::move(roster)),
      stage_cfg_(std::move(stage_cfg)),
      options_(options) {
  validate_roster(roster_);
  stage_cfg_.validate();
  if (options_.parse_retries < 0) throw ConfigError("parse_retries must be >= 0");
  // Surfaces template errors (e.g. example labels outside the schema) at construction.
  (void)build_initial_prompt(roster_.front(), "", stage_cfg_, schema_);
}

CejTranscript CejRunner::run(const CejInstance& instance) const {
  if (!schema_.contains(instance.specialist_label))
    throw ValidationError("instance '" + instance.instance_id + "': specialist label '" + instance.specialist_label +
                          "' is not in the schema");
  CejTranscript t;
  t.instance_id = instance.instance_id;
  t.task_id = std::string(to_string(schema_.task_id()));
  t.stage = std::string(to_string(stage_cfg_.stage));
  t.text = instance.text;
  t.specialist_label = instance.specialist_label;
  const std::string prefix = instance.instance_id + "/";
  const int max_calls = 1 + options_.parse_retries;

  // Stage 1: independent persona opinions.
  const std::size_t k = roster_.size();
  t.opinions.resize(k);
  std::vector<std::vector<RawPayload>> opinion_raw(k);
  std::vector<double> opinion_latency(k, 0.0);
  auto opinion_for = [&](std::size_t i) {
    const Persona& persona = roster_[i];
    PersonaOpinion& op = t.opinions[i];
    op.persona_id = persona.persona_id;
    const std::string prompt = build_initial_prompt(persona, instance.text, stage_cfg_, schema_);
    for (int c = 1; c <= max_calls; ++c) {
      RawPayload raw{kOpinion, persona.persona_id, c, prompt, {}, {}};
      CallResult r = call(gateway_, llmgw::Role::Personas, prompt, prefix + kOpinion + "/" + persona.persona_id);
      if (!r.response) {
        raw.error = r.error;
        opinion_raw[i].push_back(std::move(raw));
        op.abstained = true;
        op.error = r.error;
        return;
      }
      opinion_latency[i] += to_ms(r.response->latency);
      raw.response = r.response->content;
      try {
        ParsedOpinion parsed = parse_opinion(r.response->content, schema_);
        op.label = parsed.label;
        op.justification = parsed.justification;
        op.confidence = parsed.confidence;
        op.coercions = parsed.coercions.notes;
        opinion_raw[i].push_back(std::move(raw));
        return;
      } catch (const ParseError& e) {
        raw.error = e.what();
        opinion_raw[i].push_back(std::move(raw));
        if (c == max_calls) {
          op.abstained = true;
          op.error = e.what();
        }
      }
    }
  };
  if (options_.parallel_opinions && k > 1) {
    std::vector<std::exception_ptr> errors(k);
    std::vector<std::thread> threads;
    threads.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      threads.emplace_back([&, i] {
        try {
          opinion_for(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t i = 0; i < k; ++i) opinion_for(i);
  }
  for (auto& raws : opinion_raw) {
    for (auto& r : raws) t.raw_payloads.push_back(std::move(r));
  }
  double opinions_ms = 0.0;
  for (double v : opinion_latency) opinions_ms += v;
  t.per_stage_latency_ms[kOpinion] = opinions_ms;

  std::vector<OpinionView> views;
  bool any_opinion = false;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& op = t.opinions[i];
    views.push_back({&roster_[i], op.abstained, op.label, op.justification, op.confidence});
    any_opinion = any_opinion || !op.abstained;
  }

  // Stage 2: one debate call returning every turn.
  std::string last_debate_text;
  if (any_opinion) {
    const std::string prompt = build_debate_prompt(instance.text, views, stage_cfg_, schema_);
    double latency = 0.0;
    for (int c = 1; c <= max_calls; ++c) {
      RawPayload raw{kDebate, {}, c, prompt, {}, {}};
      CallResult r = call(gateway_, llmgw::Role::Personas, prompt, prefix + kDebate);
      if (!r.response) {
        raw.error = r.error;
        t.raw_payloads.push_back(std::move(raw));
        t.debate_degraded = true;
        break;
      }
      latency += to_ms(r.response->latency);
      raw.response = r.response->content;
      last_debate_text = r.response->content;
      try {
        std::vector<ParsedTurn> parsed = parse_debate(r.response->content, schema_);
        std::vector<DebateTurn> turns;
        std::vector<std::string> missing;
        for (std::size_t i = 0; i < k; ++i) {
          const Persona& persona = roster_[i];
          auto it = std::find_if(parsed.begin(), parsed.end(),
                                 [&](const ParsedTurn& p) { return persona.answers_to(p.persona); });
          if (it == parsed.end()) {
            if (!t.opinions[i].abstained) missing.push_back(persona.persona_id);
            continue;
          }
          DebateTurn turn;
          turn.persona_id = persona.persona_id;
          turn.intent = it->intent;
          turn.reaction = it->reaction;
          turn.updated_reasoning = it->updated_reasoning;
          turn.final_stance = it->final_stance;
          turn.stance_changed = it->stance_changed;
          turn.changed_from = it->changed_from;
          turn.updated_confidence = it->updated_confidence;
          turn.engagement_violation = !engages_peer(it->reaction, persona, roster_);
          turn.coercions = it->coercions.notes;
          turns.push_back(std::move(turn));
        }
        if (!missing.empty()) {
          std::string names;
          for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
          throw ParseError("debate reply has no turn for " + names, r.response->content);
        }
        t.debate = std::move(turns);
        t.raw_payloads.push_back(std::move(raw));
        break;
      } catch (const ParseError& e) {
        raw.error = e.what();
        t.raw_payloads.push_back(std::move(raw));
        if (c == max_calls) t.debate_degraded = true;
      }
    }
    t.per_stage_latency_ms[kDebate] = latency;
  } else {
    t.debate_degraded = true;
  }

  // Stage 3: summary. Skipped when there is no usable debate.
  JudgeContext context;
  if (t.debate_degraded) {
    t.summary_skipped = true;
    context.kind = JudgeContext::Kind::OpinionsOnly;
  } else {
    std::vector<TurnView> turn_views;
    for (const auto& turn : t.debate) {
      const auto it = std::find_if(roster_.begin(), roster_.end(),
                                   [&](const Persona& p) { return p.persona_id == turn.persona_id; });
      turn_views.push_back({&*it, turn.reaction, turn.updated_reasoning, label_code(schema_, turn.final_stance),
                            turn.stance_changed, turn.updated_confidence});
    }
    const std::string prompt = build_summary_prompt(instance.text, turn_views);
    double latency = 0.0;
    for (int c = 1; c <= max_calls; ++c) {
      RawPayload raw{kSummary, {}, c, prompt, {}, {}};
      CallResult r = call(gateway_, llmgw::Role::Summarizer, prompt, prefix + kSummary);
      if (!r.response) {
        raw.error = r.error;
        t.raw_payloads.push_back(std::move(raw));
        t.summary_degraded = true;
        break;
      }
      latency += to_ms(r.response->latency);
      raw.response = r.response->content;
      const bool blank = std::all_of(r.response->content.begin(), r.response->content.end(),
                                     [](unsigned char ch) { return std::isspace(ch); });
      if (!blank) {
        t.summary = r.response->content;
        t.raw_payloads.push_back(std::move(raw));
        break;
      }
      raw.error = "empty summary";
      t.raw_payloads.push_back(std::move(raw));
      if (c == max_calls) t.summary_degraded = true;
    }
    t.per_stage_latency_ms[kSummary] = latency;
    if (t.summary_degraded) {
      context.kind = JudgeContext::Kind::RawDebate;
      context.content = last_debate_text;
    } else {
      context.kind = JudgeContext::Kind::Summary;
      context.content = t.summary;
    }
  }

  // Stage 4: judge.
  {
    const std::string prompt = build_judge_prompt(instance.text, views, context, stage_cfg_, schema_);
    double latency = 0.0;
    for (int c = 1; c <= max_calls; ++c) {
      RawPayload raw{kJudge, {}, c, prompt, {}, {}};
      CallResult r = call(gateway_, llmgw::Role::Judge, prompt, prefix + kJudge);
      if (!r.response) {
        raw.error = r.error;
        t.raw_payloads.push_back(std::move(raw));
        break;
      }
      latency += to_ms(r.response->latency);
      raw.response = r.response->content;
      try {
        ParsedJudgment parsed = parse_judgment(r.response->content, schema_);
        t.judgment = Judgment{parsed.label, parsed.justification, parsed.confidence, parsed.coercions.notes};
        t.raw_payloads.push_back(std::move(raw));
        break;
      } catch (const ParseError& e) {
        raw.error = e.what();
        t.raw_payloads.push_back(std::move(raw));
      }
    }
    t.per_stage_latency_ms[kJudge] = latency;
  }

  if (t.judgment) {
    t.final_label = t.judgment->label;
  } else {
    t.final_label = instance.specialist_label;
    t.fallback = true;
  }
  t.degraded = t.debate_degraded || t.summary_degraded || !t.abstentions().empty();

  for (const auto& e : gateway_.ledger().entries_with_prefix(prefix)) {
    ++t.llm_calls;
    std::string_view rest = std::string_view(e.correlation_id).substr(prefix.size());
    const std::string stage(rest.substr(0, rest.find('/')));
    auto [it, inserted] = t.stage_windows.try_emplace(stage, StageWindow{e.started_ns, e.finished_ns});
    if (!inserted) {
      it->second.start_ns = std::min(it->second.start_ns, e.started_ns);
      it->second.end_ns = std::max(it->second.end_ns, e.finished_ns);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

json to_json(const CejTranscript& t) {
  json opinions = json::array();
  for (const auto& o : t.opinions) {
    json j{{"persona_id", o.persona_id}, {"abstained", o.abstained}};
    if (o.abstained) {
      j["label"] = nullptr;
      j["justification"] = nullptr;
      j["confidence"] = nullptr;
      j["error"] = o.error;
    } else {
      j["label"] = o.label;
      j["justification"] = o.justification;
      j["confidence"] = o.confidence;
    }
    j["coercions"] = o.coercions;
    opinions.push_back(std::move(j));
  }
  json debate = json::array();
  for (const auto& d : t.debate) {
    debate.push_back({{"persona_id", d.persona_id},
                      {"intent", d.intent},
                      {"reaction", d.reaction},
                      {"updated_reasoning", d.updated_reasoning},
                      {"final_stance", d.final_stance},
                      {"stance_changed", d.stance_changed},
                      {"changed_from", d.changed_from ? json(*d.changed_from) : json(nullptr)},
                      {"updated_confidence", d.updated_confidence},
                      {"engagement_violation", d.engagement_violation},
                      {"coercions", d.coercions}});
  }
  json judgment = nullptr;
  if (t.judgment) {
    judgment = {{"label", t.judgment->label},
                {"justification", t.judgment->justification},
                {"confidence", t.judgment->confidence},
                {"coercions", t.judgment->coercions}};
  }
  json windows = json::object();
  for (const auto& [stage, w] : t.stage_windows) windows[stage] = {{"start_ns", w.start_ns}, {"end_ns", w.end_ns}};
  json raws = json::array();
  for (const auto& r : t.raw_payloads) {
    raws.push_back({{"stage", r.stage},
                    {"persona_id", r.persona_id},
                    {"call", r.call},
                    {"prompt", r.prompt},
                    {"response", r.response},
                    {"error", r.error}});
  }
  return json{{"instance_id", t.instance_id},
              {"task_id", t.task_id},
              {"stage", t.stage},
              {"text", t.text},
              {"specialist_label", t.specialist_label},
              {"opinions", opinions},
              {"debate", debate},
              {"debate_degraded", t.debate_degraded},
              {"summary", t.summary},
              {"summary_degraded", t.summary_degraded},
              {"summary_skipped", t.summary_skipped},
              {"judgment", judgment},
              {"final_label", t.final_label},
              {"fallback", t.fallback},
              {"degraded", t.degraded},
              {"abstentions", t.abstentions()},
              {"llm_calls", t.llm_calls},
              {"per_stage_latency_ms", t.per_stage_latency_ms},
              {"stage_windows", windows},
              {"raw_payloads", raws}};
}

CejTranscript transcript_from_json(const json& j) {
  try {
    CejTranscript t;
    t.instance_id = j.at("instance_id").get<std::string>();
    t.task_id = j.at("task_id").get<std::string>();
    t.stage = j.at("stage").get<std::string>();
    t.text = j.at("text").get<std::string>();
    t.specialist_label = j.at("specialist_label").get<std::string>();
    for (const auto& o : j.at("opinions")) {
      PersonaOpinion op;
      op.persona_id = o.at("persona_id").get<std::string>();
      op.abstained = o.at("abstained").get<bool>();
      if (op.abstained) {
        op.error = o.value("error", "");
      } else {
        op.label = o.at("label").get<std::string>();
        op.justification = o.at("justification").get<std::string>();
        op.confidence = o.at("confidence").get<double>();
      }
      op.coercions = o.value("coercions", std::vector<std::string>{});
      t.opinions.push_back(std::move(op));
    }
    for (const auto& d : j.at("debate")) {
      DebateTurn turn;
      turn.persona_id = d.at("persona_id").get<std::string>();
      turn.intent = d.at("intent").get<std::string>();
      turn.reaction = d.at("reaction").get<std::string>();
      turn.updated_reasoning = d.at("updated_reasoning").get<std::string>();
      turn.final_stance = d.at("final_stance").get<std::string>();
      turn.stance_changed = d.at("stance_changed").get<bool>();
      if (!d.at("changed_from").is_null()) turn.changed_from = d.at("changed_from").get<std::string>();
      turn.updated_confidence = d.at("updated_confidence").get<double>();
      turn.engagement_violation = d.at("engagement_violation").get<bool>();
      turn.coercions = d.value("coercions", std::vector<std::string>{});
      t.debate.push_back(std::move(turn));
    }
    t.debate_degraded = j.at("debate_degraded").get<bool>();
    t.summary = j.at("summary").get<std::string>();
    t.summary_degraded = j.at("summary_degraded").get<bool>();
    t.summary_skipped = j.at("summary_skipped").get<bool>();
    if (const auto& jj = j.at("judgment"); !jj.is_null()) {
      t.judgment = Judgment{jj.at("label").get<std::string>(), jj.at("justification").get<std::string>(),
                            jj.at("confidence").get<double>(), jj.value("coercions", std::vector<std::string>{})};
    }
    t.final_label = j.at("final_label").get<std::string>();
    t.fallback = j.at("fallback").get<bool>();
    t.degraded = j.at("degraded").get<bool>();
    t.llm_calls = j.at("llm_calls").get<std::size_t>();
    t.per_stage_latency_ms = j.at("per_stage_latency_ms").get<std::map<std::string, double>>();
    for (const auto& [stage, w] : j.at("stage_windows").items()) {
      t.stage_windows[stage] = {w.at("start_ns").get<std::int64_t>(), w.at("end_ns").get<std::int64_t>()};
    }
    for (const auto& r : j.at("raw_payloads")) {
      t.raw_payloads.push_back({r.at("stage").get<std::string>(), r.at("persona_id").get<std::string>(),
                                r.at("call").get<int>(), r.at("prompt").get<std::string>(),
                                r.at("response").get<std::string>(), r.at("error").get<std::string>()});
    }
    return t;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed transcript: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

TranscriptStore::TranscriptStore(std::filesystem::path root, std::string run_id)
    : root_(std::move(root)), run_id_(std::move(run_id)) {
  if (run_id_.empty()) throw ConfigError("transcript store needs a run id");
}

std::filesystem::path TranscriptStore::path_for(std::string_view instance_id) const {
  static const char* hex = "0123456789ABCDEF";
  std::string name;
  for (std::size_t i = 0; i < instance_id.size(); ++i) {
    const auto c = static_cast<unsigned char>(instance_id[i]);
    const bool safe = std::isalnum(c) || c == '-' || c == '_' || (c == '.' && i > 0);
    if (safe) {
      name += static_cast<char>(c);
    } else {
      name += '%';
      name += hex[c >> 4];
      name += hex[c & 0xF];
    }
  }
  return directory() / (name + ".json");
}

bool TranscriptStore::contains(std::string_view instance_id) const {
  return std::filesystem::exists(path_for(instance_id));
}

void TranscriptStore::save(const CejTranscript& t) const {
  write_json_file(path_for(t.instance_id), to_json(t));
}

CejTranscript TranscriptStore::load(std::string_view instance_id) const {
  return transcript_from_json(read_json_file(path_for(instance_id)));
}

std::vector<CejTranscript> run_cej_batch(const CejRunner& runner, const std::vector<CejInstance>& instances,
                                         const TranscriptStore* store, int workers) {
  std::vector<CejTranscript> out(instances.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < instances.size(); i = next++) {
      try {
        const auto& inst = instances[i];
        if (store && store->contains(inst.instance_id)) {
          out[i] = store->load(inst.instance_id);
          continue;
        }
        out[i] = runner.run(inst);
        if (store) store->save(out[i]);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = instances.size();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(instances.size())));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < n; ++i) threads.emplace_back(work);
    for (auto& th : threads) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::string zero_shot_classify(std::string_view text, const TaskSchema& schema, llmgw::Gateway& gateway,
                               std::string correlation_id) {
  const std::string prompt = build_zero_shot_prompt(text, schema);
  const auto resp = gateway.chat(gateway.make_request(llmgw::Role::Personas, prompt, std::move(correlation_id)));
  if (auto label = match_label(resp.content, schema)) return *label;
  try {
    const json obj = extract_json_object(resp.content);
    if (obj.is_object() && obj.contains("label")) {
      const json& l = obj.at("label");
      const std::string s = l.is_string() ? l.get<std::string>() : l.dump();
      if (auto label = match_label(s, schema)) return *label;
    }
  } catch (const ParseError&) {
  }
  throw ParseError("zero-shot reply does not name a label of " + std::string(to_string(schema.task_id())),
                   resp.content);
}

}  // namespace triage::cej
