#include "triage/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "triage/imbalance.hpp"
#include "triage/jsonl.hpp"
#include "triage/mock_transport.hpp"
#include "triage/pipeline.hpp"
#include "triage/prompts.hpp"

namespace triage::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::Phase;

namespace {

struct Globals {
  std::string config;
  std::optional<std::string> run_id;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
  bool json_out = false;
};

struct EvaluateArgs {
  std::string gold;
  std::vector<std::string> preds;
  std::string baseline;
  std::string decisions;
  std::string task;
  std::string csv;
};

struct ZeroShotArgs {
  std::string task;
  std::optional<std::string> text;
  std::string input;
};

struct WeightsArgs {
  std::string task;
  std::string counts;
  imbalance::WeightConfig cfg;
  std::string out;
};

pipeline::PipelineConfig load_config(const Globals& g, const Hooks& hooks, const std::string& command) {
  if (g.config.empty()) throw ConfigError("'" + command + "' needs --config");
  json doc = read_json_file(g.config);
  if (!doc.is_object()) throw ConfigError("config file must hold a JSON object: " + g.config);
  if (g.run_id) doc["run_id"] = *g.run_id;
  if (g.seed) doc["seed"] = *g.seed;
  return pipeline::PipelineConfig::from_json(doc, fs::absolute(g.config).parent_path(), hooks.env);
}

json phase_names(const std::vector<Phase>& phases) {
  json out = json::array();
  for (Phase p : phases) out.push_back(std::string(pipeline::to_string(p)));
  return out;
}

std::string join_phases(const std::vector<Phase>& phases) {
  if (phases.empty()) return "none";
  std::string s;
  for (Phase p : phases) s += (s.empty() ? "" : ", ") + std::string(pipeline::to_string(p));
  return s;
}

void emit_run(const pipeline::RunResult& r, const Globals& g, std::ostream& out) {
  if (g.json_out) {
    out << json{{"run_dir", r.run_dir.string()},
                {"executed", phase_names(r.executed)},
                {"skipped", phase_names(r.skipped)},
                {"manifest", r.manifest}}
               .dump(2)
        << "\n";
    return;
  }
  out << "run dir: " << r.run_dir.string() << "\n";
  out << "executed: " << join_phases(r.executed) << "\n";
  out << "skipped: " << join_phases(r.skipped) << "\n";
  const json& counts = r.manifest.at("counts");
  for (const char* key : {"total", "accepted", "escalated", "degraded", "fallback", "llm_calls"}) {
    if (!counts.at(key).is_null()) out << key << ": " << counts.at(key).dump() << "\n";
  }
  if (r.report) out << "\n" << evalrep::render_table(*r.report);
}

int run_phases(const Globals& g, const Hooks& hooks, const std::string& command, const std::vector<Phase>& phases,
               std::ostream& out) {
  auto cfg = load_config(g, hooks, command);
  pipeline::Pipeline p(std::move(cfg), hooks.transport, hooks.sleeper);
  const bool needs_gateway = std::find(phases.begin(), phases.end(), Phase::Cej) != phases.end() ||
                             std::find(phases.begin(), phases.end(), Phase::ZeroShot) != phases.end();
  if (g.dry_run) {
    json plan{{"dry_run", true}, {"phases", phase_names(phases)}};
    std::string message;
    if (std::find(phases.begin(), phases.end(), Phase::ZeroShot) != phases.end()) {
      p.config().validate();
      const auto test = load_dataset(p.config().test_path, p.config().schema());
      plan["planned_calls"] = test.size();
      message = "would make " + std::to_string(test.size()) + " calls";
    } else if (needs_gateway) {
      const auto dr = p.plan();
      plan["total"] = dr.total;
      plan["escalated"] = dr.escalated;
      plan["calls_per_instance"] = dr.calls_per_instance;
      plan["planned_calls"] = dr.planned_calls;
      plan["from_cached_routing"] = dr.from_cached_routing;
      message = dr.message();
    } else {
      p.config().validate();
      plan["planned_calls"] = 0;
      message = "would make 0 calls";
    }
    plan["message"] = message;
    if (g.json_out) {
      out << plan.dump(2) << "\n";
    } else {
      out << message << "\n";
    }
    return kExitOk;
  }
  emit_run(p.run(phases), g, out);
  return kExitOk;
}

std::shared_ptr<llmgw::Transport> transport_for(const pipeline::PipelineConfig& cfg, const Hooks& hooks) {
  if (hooks.transport) return hooks.transport;
  if (cfg.mock_script)
    return std::make_shared<llmgw::MockTransport>(llmgw::MockTransport::rules_from_json(read_json_file(*cfg.mock_script)));
  return std::make_shared<llmgw::HttpTransport>();
}

std::vector<evalrep::Prediction> read_gold(const std::string& path) {
  std::vector<evalrep::Prediction> gold;
  std::size_t line_no = 0;
  for (const auto& j : read_jsonl_file(path)) {
    ++line_no;
    const char* key = j.contains("gold_label") ? "gold_label" : "label";
    if (!j.contains("instance_id") || !j.contains(key) || !j.at(key).is_string())
      throw ValidationError(path + " record " + std::to_string(line_no) + ": needs instance_id and a gold label");
    gold.push_back({j.at("instance_id").get<std::string>(), j.at(key).get<std::string>()});
  }
  return gold;
}

int cmd_evaluate(const EvaluateArgs& a, const Globals& g, const Hooks& hooks, std::ostream& out) {
  TaskId task;
  if (!a.task.empty()) {
    task = parse_task_id(a.task);
  } else if (!g.config.empty()) {
    task = load_config(g, hooks, "evaluate").task;
  } else {
    throw ConfigError("'evaluate' needs --task or --config");
  }
  const TaskSchema schema = TaskSchema::builtin(task);
  std::vector<evalrep::PredictionSet> sets;
  for (const auto& spec : a.preds) {
    const auto eq = spec.find('=');
    std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    sets.push_back({std::move(name), pipeline::read_predictions(path)});
  }
  std::size_t base = 0;
  if (!a.baseline.empty()) {
    const auto it = std::find_if(sets.begin(), sets.end(), [&](const auto& s) { return s.name == a.baseline; });
    if (it == sets.end()) throw ConfigError("--baseline '" + a.baseline + "' names no --pred");
    base = static_cast<std::size_t>(it - sets.begin());
  }
  const evalrep::PredictionSet baseline = sets[base];
  sets.erase(sets.begin() + static_cast<std::ptrdiff_t>(base));
  std::vector<router::RoutingDecision> decisions;
  if (!a.decisions.empty()) {
    for (const auto& line : read_jsonl_file(a.decisions)) decisions.push_back(router::routing_decision_from_json(line));
  }
  const auto report = evalrep::build_report(schema, read_gold(a.gold), baseline, sets, decisions);
  if (!a.csv.empty()) write_text_atomic(a.csv, evalrep::render_csv(report));
  if (g.json_out) {
    out << evalrep::to_json(report).dump(2) << "\n";
  } else {
    out << evalrep::render_table(report);
  }
  return kExitOk;
}

int cmd_zero_shot(const ZeroShotArgs& a, const Globals& g, const Hooks& hooks, std::ostream& out) {
  std::optional<pipeline::PipelineConfig> cfg;
  if (!g.config.empty()) cfg = load_config(g, hooks, "zero-shot");
  TaskId task;
  if (!a.task.empty()) {
    task = parse_task_id(a.task);
  } else if (cfg) {
    task = cfg->task;
  } else {
    throw ConfigError("'zero-shot' needs --task or --config");
  }
  const TaskSchema schema = TaskSchema::builtin(task);

  std::vector<std::pair<std::string, std::string>> items;
  if (a.text) items.emplace_back("text", *a.text);
  if (!a.input.empty()) {
    std::size_t line_no = 0;
    for (const auto& j : read_jsonl_file(a.input)) {
      ++line_no;
      if (!j.contains("instance_id") || !j.contains("text"))
        throw ValidationError(a.input + " record " + std::to_string(line_no) + ": needs instance_id and text");
      items.emplace_back(j.at("instance_id").get<std::string>(), j.at("text").get<std::string>());
    }
  }

  if (g.dry_run) {
    if (items.empty()) {
      const std::string instruction = cej::zero_shot_instruction(schema);
      if (g.json_out) {
        out << json{{"dry_run", true}, {"task_id", std::string(to_string(task))}, {"instruction", instruction}}.dump(2)
            << "\n";
      } else {
        out << instruction << "\n";
      }
      return kExitOk;
    }
    json prompts = json::array();
    for (const auto& [id, text] : items) prompts.push_back({{"instance_id", id}, {"prompt", cej::build_zero_shot_prompt(text, schema)}});
    if (g.json_out) {
      out << json{{"dry_run", true}, {"task_id", std::string(to_string(task))}, {"prompts", prompts}}.dump(2) << "\n";
    } else {
      for (const auto& p : prompts) out << p.at("prompt").get<std::string>() << "\n";
    }
    return kExitOk;
  }

  if (items.empty()) throw ConfigError("'zero-shot' needs --text or --input");
  if (!cfg) throw ConfigError("'zero-shot' needs --config for gateway settings unless --dry-run is given");
  llmgw::Gateway gateway(cfg->gateway, transport_for(*cfg, hooks), hooks.sleeper);
  json predictions = json::array();
  for (const auto& [id, text] : items) {
    predictions.push_back({{"instance_id", id}, {"label", cej::zero_shot_classify(text, schema, gateway, id + "/zero-shot")}});
  }
  if (g.json_out) {
    out << json{{"task_id", std::string(to_string(task))}, {"predictions", predictions}}.dump(2) << "\n";
  } else {
    for (const auto& p : predictions)
      out << p.at("instance_id").get<std::string>() << "\t" << p.at("label").get<std::string>() << "\n";
  }
  return kExitOk;
}

json parse_counts(const std::string& spec) {
  if (fs::is_regular_file(spec)) return read_json_file(spec);
  const auto first = spec.find_first_not_of(" \t");
  if (first != std::string::npos && spec[first] == '{') {
    try {
      return json::parse(spec);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("--counts is not valid JSON: ") + e.what());
    }
  }
  json counts = json::object();
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.rfind('=');
    if (eq == std::string::npos) throw ValidationError("--counts entry '" + item + "' is not label=count");
    try {
      std::size_t used = 0;
      const long long n = std::stoll(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument(item);
      counts[item.substr(0, eq)] = n;
    } catch (const std::logic_error&) {
      throw ValidationError("--counts entry '" + item + "' has a non-integer count");
    }
  }
  return counts;
}

int cmd_weights(const WeightsArgs& a, const Globals& g, std::ostream& out) {
  const TaskSchema schema = TaskSchema::builtin(parse_task_id(a.task));
  a.cfg.validate();
  const auto counts = imbalance::counts_from_json(parse_counts(a.counts), schema);
  const auto weights = imbalance::class_weights(counts, a.cfg);
  const json doc = imbalance::weights_to_json(weights, schema, a.cfg);
  if (!a.out.empty()) write_json_file(a.out, doc);
  if (g.json_out) {
    out << doc.dump(2) << "\n";
  } else {
    for (std::size_t c = 0; c < schema.num_classes(); ++c) {
      std::ostringstream line;
      line.precision(17);
      line << schema.label(c) << "\t" << counts[c] << "\t" << weights[c];
      out << line.str() << "\n";
    }
  }
  return kExitOk;
}

json error_line(const char* kind, const std::string& message) {
  return json{{"error", kind}, {"message", message}};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Hooks& hooks) {
  CLI::App app{"Specialist-first sexism triage: calibrate, route, and escalate to collaborative judgment", "triage"};
  app.set_version_flag("--version", pipeline::kVersion);
  app.require_subcommand(1);

  Globals g;
  auto add_globals = [&](CLI::App* a) {
    a->add_option("--config", g.config, "Pipeline config file (JSON)");
    a->add_option("--run-id", g.run_id, "Override the config's run id");
    a->add_option("--seed", g.seed, "Override the config's seed");
    a->add_flag("--dry-run", g.dry_run, "Print planned gateway call counts without calling");
    a->add_flag("--json", g.json_out, "Machine-readable output");
  };
  add_globals(&app);

  auto* calibrate = app.add_subcommand("calibrate", "Fit temperature (and binary threshold) on the dev set");
  auto* tune = app.add_subcommand("tune-routing", "Grid-search routing thresholds on the dev set");
  auto* route = app.add_subcommand("route", "Route every test instance");
  auto* cej_cmd = app.add_subcommand("cej", "Run collaborative judgment on escalated instances and merge");
  auto* pipe = app.add_subcommand("pipeline", "Run the config's mode end to end");
  auto* evaluate = app.add_subcommand("evaluate", "Score prediction files against gold labels");
  auto* zero = app.add_subcommand("zero-shot", "Classify with the fixed zero-shot instruction");
  auto* weights = app.add_subcommand("weights", "Compute class-balanced loss weights from class counts");
  for (auto* sub : {calibrate, tune, route, cej_cmd, pipe, evaluate, zero, weights}) sub->fallthrough();

  EvaluateArgs ev;
  evaluate->add_option("--gold", ev.gold, "JSONL with instance_id and gold_label (or label)")->required();
  evaluate->add_option("--pred", ev.preds, "name=path of a prediction JSONL; repeatable")->required();
  evaluate->add_option("--baseline", ev.baseline, "Name of the --pred used as baseline (default: the first)");
  evaluate->add_option("--decisions", ev.decisions, "routing.jsonl for escalation accounting");
  evaluate->add_option("--task", ev.task, "Task id (default: from --config)");
  evaluate->add_option("--csv", ev.csv, "Also write the table as CSV to this path");

  ZeroShotArgs zs;
  zero->add_option("--task", zs.task, "Task id (default: from --config)");
  zero->add_option("--text", zs.text, "A single text to classify");
  zero->add_option("--input", zs.input, "JSONL with instance_id and text");

  WeightsArgs wa;
  weights->add_option("--task", wa.task, "Task id")->required();
  weights->add_option("--counts", wa.counts, "label=count,... or a JSON object / file of label -> count")->required();
  weights->add_option("--beta", wa.cfg.beta, "Effective-number beta")->capture_default_str();
  weights->add_option("--w-min", wa.cfg.w_min, "Lower clamp")->capture_default_str();
  weights->add_option("--w-max", wa.cfg.w_max, "Upper clamp")->capture_default_str();
  weights->add_option("--out", wa.out, "Write the weights JSON here");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("triage");

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", e.what()).dump() << "\n";
    err << "run 'triage --help' for usage\n";
    return kExitUsage;
  }
  auto usage = [&](const std::string& message) {
    err << error_line("usage", message).dump() << "\n";
    err << "run 'triage --help' for usage\n";
    return kExitUsage;
  };
  for (auto* sub : {calibrate, tune, route, cej_cmd, pipe}) {
    if (sub->parsed() && g.config.empty()) return usage("'" + sub->get_name() + "' needs --config");
  }

  try {
    if (calibrate->parsed()) return run_phases(g, hooks, "calibrate", {Phase::Calibrate}, out);
    if (tune->parsed()) return run_phases(g, hooks, "tune-routing", {Phase::Calibrate, Phase::Tune}, out);
    if (route->parsed()) return run_phases(g, hooks, "route", {Phase::Calibrate, Phase::Tune, Phase::Route}, out);
    if (cej_cmd->parsed()) return run_phases(g, hooks, "cej", {Phase::Cej, Phase::Merge}, out);
    if (pipe->parsed()) {
      const auto cfg = load_config(g, hooks, "pipeline");
      return run_phases(g, hooks, "pipeline", pipeline::phases_for(cfg.mode), out);
    }
    if (evaluate->parsed()) return cmd_evaluate(ev, g, hooks, out);
    if (zero->parsed()) return cmd_zero_shot(zs, g, hooks, out);
    if (weights->parsed()) return cmd_weights(wa, g, out);
  } catch (const Error& e) {
    err << error_line(e.kind(), e.what()).dump() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << error_line("internal", e.what()).dump() << "\n";
    return kExitFailure;
  }
  return usage("a subcommand is required");
}

}  // namespace triage::cli
