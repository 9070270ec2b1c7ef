#pragma once

// End-to-end runner: calibrate -> tune -> route -> cej -> merge -> report.
// Each phase writes its artifact under <output_dir>/<run_id>/ before the next
// starts, and a rerun with the same run id resumes after the last completed
// phase.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/calibrate.hpp"
#include "triage/cej.hpp"
#include "triage/llmgw.hpp"
#include "triage/report.hpp"
#include "triage/router.hpp"

namespace triage::pipeline {

inline constexpr const char* kVersion = "0.1.0";

enum class Mode { Full, CalibrateOnly, RouteOnly, CejOnly, ZeroShotBaseline };
std::string_view to_string(Mode mode) noexcept;
Mode parse_mode(std::string_view text);

enum class Phase { Calibrate, Tune, Route, Cej, Merge, ZeroShot, Report };
std::string_view to_string(Phase phase) noexcept;
std::vector<Phase> phases_for(Mode mode);

struct ProviderSpec {
  enum class Kind { Proxy, Cached };
  Kind kind = Kind::Proxy;
  double q = 0.8;
  std::filesystem::path cached_labels;  ///< JSON object id -> label
};

struct PipelineConfig {
  /// The document as loaded, recorded verbatim in the manifest.
  nlohmann::json snapshot;
  std::filesystem::path workspace;

  TaskId task = TaskId::EdosA;
  std::string run_id;
  Mode mode = Mode::Full;
  std::uint64_t seed = 0;

  std::filesystem::path dev_path;
  std::filesystem::path test_path;
  std::filesystem::path output_dir;

  calibrate::TemperatureSearch temperature_search;
  double threshold_step = 0.001;

  router::RoutingGrid grid = router::RoutingGrid::deciles();
  router::TuneObjective objective;
  ProviderSpec provider;

  cej::Stage stage = cej::Stage::P5;
  std::optional<std::filesystem::path> roster_file;
  std::optional<std::filesystem::path> stages_file;
  cej::CejOptions cej_options;
  int cej_workers = 1;

  llmgw::GatewayConfig gateway;
  std::optional<std::filesystem::path> mock_script;

  /// Relative paths resolve against `workspace`, which itself resolves
  /// against base_dir. Gateway keys honour environment overrides.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                  const llmgw::GatewayConfig::EnvLookup& env = {});
  static PipelineConfig load(const std::filesystem::path& file, const llmgw::GatewayConfig::EnvLookup& env = {});

  TaskSchema schema() const { return TaskSchema::builtin(task); }
  std::filesystem::path run_dir() const { return output_dir / run_id; }
  std::filesystem::path transcript_root() const { return output_dir / "transcripts"; }
  /// Referenced input files exist and settings are in range.
  void validate() const;
};

struct DryRunPlan {
  std::size_t total = 0;
  std::size_t escalated = 0;
  std::size_t calls_per_instance = 0;
  std::size_t planned_calls = 0;
  /// Escalations came from an existing routing artifact rather than a fresh in-memory pass.
  bool from_cached_routing = false;
  /// e.g. "would make 9·12 = 108 calls"
  std::string message() const;
};

struct RunResult {
  std::filesystem::path run_dir;
  nlohmann::json manifest;
  std::optional<evalrep::RunReport> report;
  std::vector<Phase> executed;
  std::vector<Phase> skipped;
};

class Pipeline {
 public:
  /// `transport` replaces the configured one (HTTP, or the mock script).
  explicit Pipeline(PipelineConfig cfg, std::shared_ptr<llmgw::Transport> transport = nullptr,
                    llmgw::Gateway::Sleeper sleeper = {});

  /// Runs the config's mode.
  RunResult run();
  /// Runs the given phases in order, skipping ones already completed for
  /// this run id. Throws ConfigError if every requested phase is already done.
  RunResult run(const std::vector<Phase>& phases);

  DryRunPlan plan();

  const PipelineConfig& config() const noexcept { return cfg_; }
  /// Null until a phase needed the gateway.
  const llmgw::Gateway* gateway() const noexcept { return gateway_.get(); }

 private:
  struct State;
  llmgw::Gateway& ensure_gateway();

  PipelineConfig cfg_;
  std::shared_ptr<llmgw::Transport> transport_;
  llmgw::Gateway::Sleeper sleeper_;
  std::unique_ptr<llmgw::Gateway> gateway_;
};

/// Reads a prediction file: JSONL lines with instance_id and one of
/// final_label / label / gold_label.
std::vector<evalrep::Prediction> read_predictions(const std::filesystem::path& path, const std::string& field = {});

}  // namespace triage::pipeline
