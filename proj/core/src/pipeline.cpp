#include "triage/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <set>

#include "triage/jsonl.hpp"
#include "triage/mock_transport.hpp"

namespace triage::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Mode mode) noexcept {
  switch (mode) {
    case Mode::Full: return "full";
    case Mode::CalibrateOnly: return "calibrate-only";
    case Mode::RouteOnly: return "route-only";
    case Mode::CejOnly: return "cej-only";
    case Mode::ZeroShotBaseline: return "zero-shot-baseline";
  }
  return "full";
}

Mode parse_mode(std::string_view text) {
  for (Mode m : {Mode::Full, Mode::CalibrateOnly, Mode::RouteOnly, Mode::CejOnly, Mode::ZeroShotBaseline}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown mode '" + std::string(text) +
                    "' (expected full, calibrate-only, route-only, cej-only or zero-shot-baseline)");
}

std::string_view to_string(Phase phase) noexcept {
  switch (phase) {
    case Phase::Calibrate: return "calibrate";
    case Phase::Tune: return "tune";
    case Phase::Route: return "route";
    case Phase::Cej: return "cej";
    case Phase::Merge: return "merge";
    case Phase::ZeroShot: return "zero-shot";
    case Phase::Report: return "report";
  }
  return "calibrate";
}

std::vector<Phase> phases_for(Mode mode) {
  switch (mode) {
    case Mode::Full: return {Phase::Calibrate, Phase::Tune, Phase::Route, Phase::Cej, Phase::Merge, Phase::Report};
    case Mode::CalibrateOnly: return {Phase::Calibrate};
    case Mode::RouteOnly: return {Phase::Calibrate, Phase::Tune, Phase::Route};
    case Mode::CejOnly: return {Phase::Cej, Phase::Merge, Phase::Report};
    case Mode::ZeroShotBaseline: return {Phase::ZeroShot, Phase::Report};
  }
  return {};
}

namespace {

constexpr Phase kAllPhases[] = {Phase::Calibrate, Phase::Tune, Phase::Route, Phase::Cej,
                                Phase::Merge,     Phase::ZeroShot, Phase::Report};

Phase parse_phase(std::string_view text) {
  for (Phase p : kAllPhases) {
    if (to_string(p) == text) return p;
  }
  throw ValidationError("unknown phase '" + std::string(text) + "' in run state");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::vector<double> number_list(const json& j, const char* key) {
  if (j.is_number()) return {j.get<double>()};
  if (!j.is_array()) throw ConfigError(std::string("routing.") + key + " must be a number or an array");
  return j.get<std::vector<double>>();
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir,
                                         const llmgw::GatewayConfig::EnvLookup& env) {
  PipelineConfig cfg;
  cfg.snapshot = j;
  try {
    cfg.task = parse_task_id(j.at("task_id").get<std::string>());
    cfg.workspace = resolve(base_dir, j.value("workspace", "."));
    cfg.run_id = j.value("run_id", "run");
    cfg.mode = parse_mode(j.value("mode", "full"));
    cfg.seed = j.value("seed", std::uint64_t{0});

    const json paths = j.value("paths", json::object());
    if (paths.contains("dev")) cfg.dev_path = resolve(cfg.workspace, paths.at("dev").get<std::string>());
    if (paths.contains("test")) cfg.test_path = resolve(cfg.workspace, paths.at("test").get<std::string>());
    cfg.output_dir = resolve(cfg.workspace, paths.value("output_dir", "out"));

    const json cal = j.value("calibration", json::object());
    cfg.temperature_search.t_lo = cal.value("t_lo", cfg.temperature_search.t_lo);
    cfg.temperature_search.t_hi = cal.value("t_hi", cfg.temperature_search.t_hi);
    cfg.temperature_search.tolerance = cal.value("tolerance", cfg.temperature_search.tolerance);
    cfg.threshold_step = cal.value("threshold_grid_step", cfg.threshold_step);

    const json routing = j.value("routing", json::object());
    if (routing.contains("tau_conf")) cfg.grid.tau_conf = number_list(routing.at("tau_conf"), "tau_conf");
    if (routing.contains("tau_margin")) cfg.grid.tau_margin = number_list(routing.at("tau_margin"), "tau_margin");
    const std::string objective = routing.value("objective", "lexicographic");
    if (objective == "lexicographic") {
      cfg.objective.kind = router::TuneObjective::Kind::Lexicographic;
    } else if (objective == "penalized") {
      cfg.objective.kind = router::TuneObjective::Kind::Penalized;
      cfg.objective.lambda = routing.value("lambda", 0.0);
    } else {
      throw ConfigError("routing.objective must be lexicographic or penalized");
    }
    const json provider = routing.value("provider", json::object());
    const std::string kind = provider.value("kind", "proxy");
    if (kind == "proxy") {
      cfg.provider.kind = ProviderSpec::Kind::Proxy;
      cfg.provider.q = provider.value("q", cfg.provider.q);
    } else if (kind == "cached") {
      cfg.provider.kind = ProviderSpec::Kind::Cached;
      cfg.provider.cached_labels = resolve(cfg.workspace, provider.at("labels").get<std::string>());
    } else {
      throw ConfigError("routing.provider.kind must be proxy or cached");
    }

    const json c = j.value("cej", json::object());
    cfg.stage = cej::parse_stage(c.value("stage", "P5"));
    if (c.contains("roster")) cfg.roster_file = resolve(cfg.workspace, c.at("roster").get<std::string>());
    if (c.contains("stages")) cfg.stages_file = resolve(cfg.workspace, c.at("stages").get<std::string>());
    cfg.cej_options.parse_retries = c.value("parse_retries", cfg.cej_options.parse_retries);
    cfg.cej_options.parallel_opinions = c.value("parallel_opinions", cfg.cej_options.parallel_opinions);
    cfg.cej_workers = c.value("workers", cfg.cej_workers);

    const json gw = j.value("gateway", json::object());
    cfg.gateway = llmgw::GatewayConfig::from_json(gw);
    if (env) cfg.gateway.apply_env_overrides(env);
    if (gw.contains("mock_script")) cfg.mock_script = resolve(cfg.workspace, gw.at("mock_script").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed pipeline config: ") + e.what());
  }
  return cfg;
}

PipelineConfig PipelineConfig::load(const fs::path& file, const llmgw::GatewayConfig::EnvLookup& env) {
  return from_json(read_json_file(file), fs::absolute(file).parent_path(), env);
}

void PipelineConfig::validate() const {
  if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos || run_id == "." || run_id == ".." ||
      run_id == "transcripts")
    throw ConfigError("run_id '" + run_id + "' is not a usable directory name");
  auto require_file = [](const fs::path& p, const char* what) {
    if (p.empty()) throw ConfigError(std::string(what) + " path is not set");
    if (!fs::is_regular_file(p)) throw ConfigError(std::string(what) + " file not found: " + p.string());
  };
  if (mode != Mode::ZeroShotBaseline) require_file(dev_path, "paths.dev");
  require_file(test_path, "paths.test");
  temperature_search.validate();
  (void)calibrate::threshold_grid(threshold_step);
  if (grid.tau_conf.empty()) throw ConfigError("routing.tau_conf grid is empty");
  if (!TaskSchema::builtin(task).is_binary() && grid.tau_margin.empty())
    throw ConfigError("routing.tau_margin grid is empty");
  if (provider.kind == ProviderSpec::Kind::Proxy && !(provider.q >= 0.0 && provider.q <= 1.0))
    throw ConfigError("routing.provider.q must lie in [0, 1]");
  if (provider.kind == ProviderSpec::Kind::Cached) require_file(provider.cached_labels, "routing.provider.labels");
  if (roster_file) require_file(*roster_file, "cej.roster");
  if (stages_file) require_file(*stages_file, "cej.stages");
  if (mock_script) require_file(*mock_script, "gateway.mock_script");
  if (cej_workers < 1) throw ConfigError("cej.workers must be >= 1");
  if (cej_options.parse_retries < 0) throw ConfigError("cej.parse_retries must be >= 0");
}

std::string DryRunPlan::message() const {
  return "would make " + std::to_string(calls_per_instance) + "·" + std::to_string(escalated) + " = " +
         std::to_string(planned_calls) + " calls";
}

// ---------------------------------------------------------------------------

struct PredictionRow {
  std::string instance_id;
  std::string specialist_label;
  std::string final_label;
  bool escalated = false;
  std::string source;  ///< "specialist", "cej" or "fallback"
};

struct Pipeline::State {
  const PipelineConfig& cfg;
  TaskSchema schema;
  std::optional<Dataset> dev;
  std::optional<Dataset> test;
  std::optional<calibrate::CalibrationModel> calibration;
  std::optional<json> policy_doc;
  std::optional<std::vector<router::RoutingDecision>> decisions;
  std::optional<std::vector<cej::CejTranscript>> transcripts;
  std::optional<std::vector<PredictionRow>> predictions;
  std::optional<evalrep::RunReport> report;

  explicit State(const PipelineConfig& c) : cfg(c), schema(c.schema()) {}

  fs::path dir() const { return cfg.run_dir(); }
  fs::path artifact(const char* name) const { return dir() / name; }

  const Dataset& dev_set() {
    if (!dev) {
      dev = load_dataset(cfg.dev_path, schema);
      if (!dev->all_gold()) throw ValidationError("dev set needs a gold label on every record");
    }
    return *dev;
  }
  const Dataset& test_set() {
    if (!test) test = load_dataset(cfg.test_path, schema);
    return *test;
  }
  const calibrate::CalibrationModel& calibration_model() {
    if (!calibration) {
      calibration = calibrate::calibration_model_from_json(read_json_file(artifact("calibration.json")));
      calibration->ensure_applicable(schema);
    }
    return *calibration;
  }
  const json& policy() {
    if (!policy_doc) policy_doc = read_json_file(artifact("routing_policy.json"));
    return *policy_doc;
  }
  router::RoutingPolicy routing_policy() {
    const json& p = policy();
    router::RoutingPolicy rp;
    rp.mode = p.at("mode").get<std::string>() == "binary" ? router::Mode::Binary : router::Mode::Multiclass;
    rp.tau_conf = p.at("tau_conf").get<double>();
    if (!p.at("tau_margin").is_null()) rp.tau_margin = p.at("tau_margin").get<double>();
    rp.validate();
    return rp;
  }
  const std::vector<router::RoutingDecision>& routing() {
    if (!decisions) {
      decisions.emplace();
      for (const auto& line : read_jsonl_file(artifact("routing.jsonl")))
        decisions->push_back(router::routing_decision_from_json(line));
    }
    return *decisions;
  }
  const std::vector<PredictionRow>& merged() {
    if (!predictions) {
      predictions.emplace();
      for (const auto& line : read_jsonl_file(artifact("predictions.jsonl"))) {
        predictions->push_back({line.at("instance_id").get<std::string>(), line.at("specialist_label").get<std::string>(),
                                line.at("final_label").get<std::string>(), line.at("escalated").get<bool>(),
                                line.at("source").get<std::string>()});
      }
    }
    return *predictions;
  }
  std::optional<double> threshold() {
    const auto& m = calibration_model();
    if (m.threshold) return m.threshold->threshold;
    return std::nullopt;
  }
};

namespace {

std::vector<std::string> specialist_labels(const std::vector<ProbVector>& probs, const TaskSchema& schema,
                                           std::optional<double> threshold) {
  std::vector<std::string> out;
  out.reserve(probs.size());
  for (const auto& p : probs) {
    if (schema.is_binary() && threshold) {
      out.push_back(calibrate::apply_threshold(p[schema.positive_index()], *threshold, schema));
    } else {
      out.push_back(schema.label(p.argmax()));
    }
  }
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<json>& lines) {
  std::string text;
  for (const auto& l : lines) text += l.dump() + "\n";
  write_text_atomic(path, text);
}

std::unique_ptr<router::EscalationOutcomeProvider> make_provider(const PipelineConfig& cfg, const TaskSchema& schema) {
  if (cfg.provider.kind == ProviderSpec::Kind::Cached) {
    const json labels = read_json_file(cfg.provider.cached_labels);
    return std::make_unique<router::CachedOutcomes>(labels.get<std::map<std::string, std::string>>());
  }
  return std::make_unique<router::ProxyOutcomes>(schema, cfg.provider.q, cfg.seed);
}

std::vector<evalrep::Prediction> gold_of(const Dataset& data) {
  std::vector<evalrep::Prediction> gold;
  for (const auto& r : data.records()) gold.push_back({r.instance_id, *r.gold_label});
  return gold;
}

struct RoutingPass {
  calibrate::CalibrationModel calibration;
  router::RoutingTuneResult tuned;
  std::vector<router::RoutingDecision> decisions;
};

calibrate::CalibrationModel fit_calibration(const PipelineConfig& cfg, const TaskSchema& schema, const Dataset& dev) {
  calibrate::CalibrationModel model;
  model.task_id = schema.task_id();
  model.fitted_on = dev.fingerprint();
  model.temperature = calibrate::fit_temperature(dev, cfg.temperature_search);
  if (schema.is_binary()) {
    const auto probs = calibrate::calibrate_all(dev, model.temperature.temperature);
    std::vector<double> p_pos;
    std::vector<std::string> gold;
    for (std::size_t i = 0; i < dev.size(); ++i) {
      p_pos.push_back(probs[i][schema.positive_index()]);
      gold.push_back(*dev[i].gold_label);
    }
    model.threshold = calibrate::tune_threshold(p_pos, gold, schema, cfg.threshold_step);
  }
  return model;
}

router::RoutingTuneResult tune_policy(const PipelineConfig& cfg, const TaskSchema& schema, const Dataset& dev,
                                      const calibrate::CalibrationModel& model) {
  const auto probs = calibrate::calibrate_all(dev, model.temperature.temperature);
  const auto labels =
      specialist_labels(probs, schema, model.threshold ? std::optional(model.threshold->threshold) : std::nullopt);
  std::vector<router::DevItem> items;
  for (std::size_t i = 0; i < dev.size(); ++i) items.push_back({dev[i].instance_id, probs[i], labels[i], *dev[i].gold_label});
  const auto provider = make_provider(cfg, schema);
  return router::tune_routing(items, schema, router::mode_for(schema), cfg.grid, *provider, cfg.objective);
}

std::vector<router::RoutingDecision> route_all(const TaskSchema& schema, const Dataset& test,
                                               const calibrate::CalibrationModel& model,
                                               const router::RoutingPolicy& policy) {
  const auto probs = calibrate::calibrate_all(test, model.temperature.temperature);
  const std::optional<double> threshold = model.threshold ? std::optional(model.threshold->threshold) : std::nullopt;
  std::vector<router::RoutingDecision> out;
  for (std::size_t i = 0; i < test.size(); ++i)
    out.push_back(router::decide(test[i].instance_id, probs[i], schema, policy, threshold));
  return out;
}

cej::Roster load_roster(const PipelineConfig& cfg) {
  return cfg.roster_file ? cej::roster_from_json(read_json_file(*cfg.roster_file)) : cej::default_roster();
}

cej::PromptStageConfig load_stage(const PipelineConfig& cfg, const TaskSchema& schema) {
  if (!cfg.stages_file) return cej::default_stage_config(cfg.stage, schema);
  const json doc = read_json_file(*cfg.stages_file);
  const json& stages = doc.contains("stages") ? doc.at("stages") : doc;
  const std::string name(cej::to_string(cfg.stage));
  if (!stages.contains(name)) return cej::default_stage_config(cfg.stage, schema);
  json entry = stages.at(name);
  entry["stage"] = name;
  return cej::stage_config_from_json(entry, schema);
}

}  // namespace

// ---------------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig cfg, std::shared_ptr<llmgw::Transport> transport, llmgw::Gateway::Sleeper sleeper)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {}

llmgw::Gateway& Pipeline::ensure_gateway() {
  if (!gateway_) {
    std::shared_ptr<llmgw::Transport> transport = transport_;
    if (!transport) {
      if (cfg_.mock_script) {
        transport = std::make_shared<llmgw::MockTransport>(
            llmgw::MockTransport::rules_from_json(read_json_file(*cfg_.mock_script)));
      } else {
        transport = std::make_shared<llmgw::HttpTransport>();
      }
    }
    gateway_ = std::make_unique<llmgw::Gateway>(cfg_.gateway, std::move(transport), sleeper_);
  }
  return *gateway_;
}

RunResult Pipeline::run() {
  return run(phases_for(cfg_.mode));
}

RunResult Pipeline::run(const std::vector<Phase>& phases) {
  cfg_.validate();
  State st(cfg_);
  const fs::path dir = cfg_.run_dir();
  fs::create_directories(dir);
  const fs::path state_path = dir / "state.json";

  std::set<Phase> completed;
  if (fs::exists(state_path)) {
    const json doc = read_json_file(state_path);
    if (doc.value("task_id", "") != to_string(cfg_.task))
      throw ConfigError("run '" + cfg_.run_id + "' in " + cfg_.output_dir.string() + " belongs to task " +
                        doc.value("task_id", "?"));
    for (const auto& p : doc.at("completed")) completed.insert(parse_phase(p.get<std::string>()));
  }
  if (!phases.empty() && std::all_of(phases.begin(), phases.end(), [&](Phase p) { return completed.count(p) > 0; }))
    throw ConfigError("run '" + cfg_.run_id + "' already completed these phases; choose a new run id");

  json timings = fs::exists(dir / "timings.json") ? read_json_file(dir / "timings.json") : json::object();
  RunResult result;
  result.run_dir = dir;

  auto write_state = [&](const std::string& status, const std::string& failed_phase, const std::string& error) {
    json done = json::array();
    for (Phase p : kAllPhases) {
      if (completed.count(p)) done.push_back(std::string(to_string(p)));
    }
    json doc{{"run_id", cfg_.run_id}, {"task_id", std::string(to_string(cfg_.task))}, {"completed", done}, {"status", status}};
    if (!failed_phase.empty()) {
      doc["failed_phase"] = failed_phase;
      doc["error"] = error;
    }
    write_json_file(state_path, doc);
  };

  auto build_manifest = [&](const std::string& status, const std::string& failed_phase, const std::string& error) {
    json m;
    m["format"] = "triage-run-manifest/1";
    m["version"] = kVersion;
    m["run_id"] = cfg_.run_id;
    m["mode"] = std::string(to_string(cfg_.mode));
    m["task_id"] = std::string(to_string(cfg_.task));
    m["status"] = status;
    json done = json::array();
    for (Phase p : kAllPhases) {
      if (completed.count(p)) done.push_back(std::string(to_string(p)));
    }
    m["completed_phases"] = done;
    m["failed_phase"] = failed_phase.empty() ? json(nullptr) : json(failed_phase);
    m["error"] = error.empty() ? json(nullptr) : json(error);
    m["config"] = cfg_.snapshot;

    json fingerprints{{"dev", nullptr}, {"test", nullptr}};
    json counts{{"total", nullptr}, {"accepted", nullptr}, {"escalated", nullptr},
                {"degraded", nullptr}, {"fallback", nullptr}, {"llm_calls", nullptr}};
    json calibration = nullptr;
    json policy = nullptr;
    try {
      if (cfg_.mode != Mode::ZeroShotBaseline) fingerprints["dev"] = st.dev_set().fingerprint();
      fingerprints["test"] = st.test_set().fingerprint();
      counts["total"] = st.test_set().size();
    } catch (const Error&) {
    }
    if (completed.count(Phase::Calibrate)) {
      auto model = st.calibration_model();
      if (completed.count(Phase::Tune)) {
        const auto rp = st.routing_policy();
        model.tau_conf = rp.tau_conf;
        model.tau_margin = rp.tau_margin;
        const json& p = st.policy();
        policy = {{"mode", p.at("mode")},
                  {"tau_conf", p.at("tau_conf")},
                  {"tau_margin", p.at("tau_margin")},
                  {"dev_macro_f1", p.at("macro_f1")},
                  {"dev_escalation_rate", p.at("escalation_rate")},
                  {"provider", p.at("provider")}};
      }
      calibration = calibrate::to_json(model);
    }
    if (completed.count(Phase::Route)) {
      std::size_t escalated = 0;
      for (const auto& d : st.routing()) escalated += d.escalated() ? 1 : 0;
      counts["accepted"] = st.routing().size() - escalated;
      counts["escalated"] = escalated;
    }
    if (completed.count(Phase::Cej) && st.transcripts) {
      std::size_t degraded = 0, fallback = 0, calls = 0;
      for (const auto& t : *st.transcripts) {
        degraded += t.degraded ? 1 : 0;
        fallback += t.fallback ? 1 : 0;
        calls += t.llm_calls;
      }
      counts["degraded"] = degraded;
      counts["fallback"] = fallback;
      counts["llm_calls"] = calls;
    }
    m["fingerprints"] = fingerprints;
    m["calibration"] = calibration;
    m["routing_policy"] = policy;
    m["counts"] = counts;
    m["report"] = completed.count(Phase::Report) ? (fs::exists(dir / "report.json") ? json("report.json")
                                                                                       : json("unavailable: test set has no gold labels"))
                                                  : json(nullptr);
    m["timings_file"] = "timings.json";
    return m;
  };

  auto prerequisite_met = [&](Phase p) {
    switch (p) {
      case Phase::Calibrate:
      case Phase::ZeroShot: return true;
      case Phase::Tune: return completed.count(Phase::Calibrate) > 0;
      case Phase::Route: return completed.count(Phase::Tune) > 0;
      case Phase::Cej: return completed.count(Phase::Route) > 0;
      case Phase::Merge: return completed.count(Phase::Cej) > 0;
      case Phase::Report: return completed.count(Phase::Merge) > 0 || completed.count(Phase::ZeroShot) > 0;
    }
    return false;
  };

  auto execute = [&](Phase phase) {
    const TaskSchema& schema = st.schema;
    switch (phase) {
      case Phase::Calibrate: {
        st.calibration = fit_calibration(cfg_, schema, st.dev_set());
        write_json_file(dir / "calibration.json", calibrate::to_json(*st.calibration));
        break;
      }
      case Phase::Tune: {
        const auto tuned = tune_policy(cfg_, schema, st.dev_set(), st.calibration_model());
        json doc = router::to_json(tuned);
        doc["provider"] = make_provider(cfg_, schema)->describe();
        st.policy_doc = doc;
        write_json_file(dir / "routing_policy.json", doc);
        break;
      }
      case Phase::Route: {
        st.decisions = route_all(schema, st.test_set(), st.calibration_model(), st.routing_policy());
        std::vector<json> lines;
        for (const auto& d : *st.decisions) lines.push_back(router::to_json(d));
        write_jsonl(dir / "routing.jsonl", lines);
        std::map<std::string, std::string> gold;
        for (const auto& r : st.test_set().records()) {
          if (r.gold_label) gold[r.instance_id] = *r.gold_label;
        }
        write_json_file(dir / "routing_summary.json", router::routing_summary(*st.decisions, schema, gold));
        break;
      }
      case Phase::Cej: {
        const auto& test = st.test_set();
        std::vector<cej::CejInstance> instances;
        for (const auto& d : st.routing()) {
          if (!d.escalated()) continue;
          const LogitRecord* rec = test.find(d.instance_id);
          if (!rec) throw ValidationError("routing decision for unknown test instance '" + d.instance_id + "'");
          instances.push_back({d.instance_id, rec->text, d.specialist_label});
        }
        cej::TranscriptStore store(cfg_.transcript_root(), cfg_.run_id);
        fs::create_directories(store.directory());
        if (instances.empty()) {
          st.transcripts.emplace();
          break;
        }
        cej::CejRunner runner(ensure_gateway(), schema, load_roster(cfg_), load_stage(cfg_, schema), cfg_.cej_options);
        st.transcripts = cej::run_cej_batch(runner, instances, &store, cfg_.cej_workers);
        break;
      }
      case Phase::Merge: {
        cej::TranscriptStore store(cfg_.transcript_root(), cfg_.run_id);
        std::vector<PredictionRow> rows;
        std::vector<cej::CejTranscript> transcripts;
        std::set<std::string> seen;
        for (const auto& d : st.routing()) {
          if (!seen.insert(d.instance_id).second) throw ValidationError("instance '" + d.instance_id + "' routed twice");
          PredictionRow row{d.instance_id, d.specialist_label, d.specialist_label, d.escalated(), "specialist"};
          if (d.escalated()) {
            if (!store.contains(d.instance_id))
              throw ValidationError("escalated instance '" + d.instance_id + "' has no transcript");
            auto t = store.load(d.instance_id);
            row.final_label = t.final_label;
            row.source = t.fallback ? "fallback" : "cej";
            transcripts.push_back(std::move(t));
          }
          rows.push_back(std::move(row));
        }
        if (rows.size() != st.test_set().size())
          throw ValidationError("merged predictions cover " + std::to_string(rows.size()) + " of " +
                                std::to_string(st.test_set().size()) + " test instances");
        std::vector<json> lines;
        for (const auto& r : rows) {
          lines.push_back({{"instance_id", r.instance_id},
                           {"specialist_label", r.specialist_label},
                           {"final_label", r.final_label},
                           {"escalated", r.escalated},
                           {"source", r.source}});
        }
        write_jsonl(dir / "predictions.jsonl", lines);
        st.predictions = std::move(rows);
        st.transcripts = std::move(transcripts);
        break;
      }
      case Phase::ZeroShot: {
        auto& gw = ensure_gateway();
        std::vector<json> lines;
        for (const auto& r : st.test_set().records()) {
          const auto label = cej::zero_shot_classify(r.text, schema, gw, r.instance_id + "/zero-shot");
          lines.push_back({{"instance_id", r.instance_id}, {"label", label}});
        }
        write_jsonl(dir / "zero_shot.jsonl", lines);
        break;
      }
      case Phase::Report: {
        const auto& test = st.test_set();
        if (!test.all_gold()) break;
        const auto gold = gold_of(test);
        evalrep::RunReport report;
        if (completed.count(Phase::Merge)) {
          evalrep::PredictionSet baseline{"specialist", {}};
          evalrep::PredictionSet routed{"routed", {}};
          for (const auto& row : st.merged()) {
            baseline.predictions.push_back({row.instance_id, row.specialist_label});
            routed.predictions.push_back({row.instance_id, row.final_label});
          }
          report = evalrep::build_report(schema, gold, baseline, {routed}, st.routing());
        } else {
          report = evalrep::build_report(schema, gold, {"zero-shot", read_predictions(dir / "zero_shot.jsonl", "label")}, {});
        }
        write_json_file(dir / "report.json", evalrep::to_json(report));
        write_text_atomic(dir / "report.txt", evalrep::render_table(report));
        write_text_atomic(dir / "report.csv", evalrep::render_csv(report));
        st.report = std::move(report);
        break;
      }
    }
  };

  for (Phase phase : phases) {
    if (completed.count(phase)) {
      result.skipped.push_back(phase);
      continue;
    }
    const std::string name(to_string(phase));
    if (!prerequisite_met(phase)) {
      const std::string msg = "phase '" + name + "' needs earlier phases of run '" + cfg_.run_id + "' to complete first";
      write_state("failed", name, msg);
      throw ConfigError(msg);
    }
    const auto start = std::chrono::steady_clock::now();
    try {
      execute(phase);
    } catch (const std::exception& e) {
      write_state("failed", name, e.what());
      json manifest = build_manifest("failed", name, e.what());
      write_json_file(dir / "manifest.json", manifest);
      throw;
    }
    completed.insert(phase);
    result.executed.push_back(phase);
    timings[name] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    write_state("running", "", "");
    write_json_file(dir / "timings.json", timings);
  }

  // Resumed runs still report transcript counts.
  if (completed.count(Phase::Cej) && !st.transcripts && completed.count(Phase::Route)) {
    cej::TranscriptStore store(cfg_.transcript_root(), cfg_.run_id);
    st.transcripts.emplace();
    for (const auto& d : st.routing()) {
      if (d.escalated() && store.contains(d.instance_id)) st.transcripts->push_back(store.load(d.instance_id));
    }
  }
  if (!st.report && completed.count(Phase::Report) && fs::exists(dir / "report.json") && completed.count(Phase::Merge)) {
    const auto gold = gold_of(st.test_set());
    evalrep::PredictionSet baseline{"specialist", {}};
    evalrep::PredictionSet routed{"routed", {}};
    for (const auto& row : st.merged()) {
      baseline.predictions.push_back({row.instance_id, row.specialist_label});
      routed.predictions.push_back({row.instance_id, row.final_label});
    }
    st.report = evalrep::build_report(st.schema, gold, baseline, {routed}, st.routing());
  }

  write_state("complete", "", "");
  result.manifest = build_manifest("complete", "", "");
  write_json_file(dir / "manifest.json", result.manifest);
  result.report = std::move(st.report);
  return result;
}

DryRunPlan Pipeline::plan() {
  cfg_.validate();
  State st(cfg_);
  DryRunPlan plan;
  plan.calls_per_instance = load_roster(cfg_).size() + 3;
  const fs::path cached = cfg_.run_dir() / "routing.jsonl";
  std::vector<router::RoutingDecision> decisions;
  if (fs::exists(cached)) {
    decisions = st.routing();
    plan.from_cached_routing = true;
  } else {
    const auto model = fit_calibration(cfg_, st.schema, st.dev_set());
    const auto tuned = tune_policy(cfg_, st.schema, st.dev_set(), model);
    decisions = route_all(st.schema, st.test_set(), model, tuned.policy);
  }
  plan.total = decisions.size();
  for (const auto& d : decisions) plan.escalated += d.escalated() ? 1 : 0;
  plan.planned_calls = plan.escalated * plan.calls_per_instance;
  return plan;
}

std::vector<evalrep::Prediction> read_predictions(const fs::path& path, const std::string& field) {
  std::vector<evalrep::Prediction> out;
  std::size_t line_no = 0;
  for (const auto& j : read_jsonl_file(path)) {
    ++line_no;
    const std::string where = path.string() + " record " + std::to_string(line_no);
    if (!j.is_object() || !j.contains("instance_id")) throw ValidationError(where + ": missing instance_id");
    std::string key = field;
    if (key.empty()) {
      for (const char* k : {"final_label", "label", "gold_label"}) {
        if (j.contains(k) && j.at(k).is_string()) {
          key = k;
          break;
        }
      }
    }
    if (key.empty() || !j.contains(key) || !j.at(key).is_string())
      throw ValidationError(where + ": no " + (field.empty() ? std::string("label") : field) + " field");
    out.push_back({j.at("instance_id").get<std::string>(), j.at(key).get<std::string>()});
  }
  return out;
}

}  // namespace triage::pipeline
