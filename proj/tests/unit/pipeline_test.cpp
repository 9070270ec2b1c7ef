#include <fstream>

#include <gtest/gtest.h>

#include "cej_scripts.hpp"
#include "triage/jsonl.hpp"
#include "triage/pipeline.hpp"
#include "workspace.hpp"

using namespace triage;
using namespace triage::pipeline;
using triage::testing::TempWorkspace;

namespace {

nlohmann::json config_of(const TempWorkspace& ws) { return read_json_file(ws / "config.json"); }

PipelineConfig with(const TempWorkspace& ws, const std::function<void(nlohmann::json&)>& edit) {
  auto j = config_of(ws);
  edit(j);
  return PipelineConfig::from_json(j, ws.path(), [](const std::string&) { return std::nullopt; });
}

}  // namespace

TEST(PipelineConfig, ResolvesPathsAgainstWorkspace) {
  TempWorkspace ws("synthetic");
  const auto cfg = PipelineConfig::load(ws / "config.json");
  EXPECT_EQ(cfg.task, TaskId::EdosB);
  EXPECT_EQ(cfg.dev_path, ws / "dev.jsonl");
  EXPECT_EQ(cfg.run_dir(), ws.path() / "out" / "synthetic");
  EXPECT_EQ(cfg.grid.tau_conf, std::vector<double>{0.6});
  EXPECT_EQ(cfg.cej_options.parse_retries, 0);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(PipelineConfig, RejectsBadSettings) {
  TempWorkspace ws("synthetic");
  EXPECT_THROW(with(ws, [](auto& j) { j["mode"] = "sideways"; }), Error);
  EXPECT_THROW(with(ws, [](auto& j) { j["task_id"] = "edos-z"; }), Error);
  EXPECT_THROW(with(ws, [](auto& j) { j["paths"]["dev"] = "missing.jsonl"; }).validate(), ConfigError);
  EXPECT_THROW(with(ws, [](auto& j) { j["routing"]["provider"]["q"] = 1.5; }).validate(), ConfigError);
  EXPECT_THROW(with(ws, [](auto& j) { j["calibration"] = "hot"; }), ConfigError);
}

TEST(PipelineConfig, EnvOverridesGateway) {
  TempWorkspace ws("synthetic");
  const auto cfg = PipelineConfig::load(ws / "config.json", [](const std::string& k) -> std::optional<std::string> {
    if (k == "TRIAGE_BACKEND_JUDGE_MODEL") return "override";
    return std::nullopt;
  });
  EXPECT_EQ(cfg.gateway.backend_for(llmgw::Role::Judge).model, "override");
}

TEST(Pipeline, FullRunProducesArtifacts) {
  TempWorkspace ws("synthetic");
  Pipeline p(PipelineConfig::load(ws / "config.json"));
  const auto r = p.run();
  for (const char* f : {"calibration.json", "routing_policy.json", "routing.jsonl", "routing_summary.json",
                        "predictions.jsonl", "report.json", "report.txt", "report.csv", "manifest.json", "state.json",
                        "timings.json"})
    EXPECT_TRUE(std::filesystem::exists(r.run_dir / f)) << f;
  const auto expected = read_json_file(ws / "expected.json");
  EXPECT_EQ(r.manifest.at("status"), "complete");
  EXPECT_EQ(r.manifest.at("counts").at("escalated"), expected.at("escalated"));
  EXPECT_EQ(r.manifest.at("counts").at("llm_calls"), expected.at("llm_calls"));
  ASSERT_TRUE(r.report);
  EXPECT_NEAR(r.report->baseline.macro_f1, expected.at("baseline_macro_f1").get<double>(), 1e-12);
  EXPECT_NEAR(r.report->variants.at(0).macro_f1, expected.at("routed_macro_f1").get<double>(), 1e-12);
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(ws / "out/transcripts/synthetic"),
                          std::filesystem::directory_iterator{}),
            20);
  std::size_t fallback = 0;
  for (const auto& line : read_jsonl_file(r.run_dir / "predictions.jsonl"))
    fallback += line.at("source") == "fallback" ? 1 : 0;
  EXPECT_EQ(fallback, 1u);
}

TEST(Pipeline, CalibrateOnlyNeverTouchesGateway) {
  TempWorkspace ws("synthetic");
  Pipeline p(with(ws, [](auto& j) {
    j["mode"] = "calibrate-only";
    j["gateway"]["backend"]["judge"]["url"] = "http://192.0.2.1:1/unreachable";
  }));
  const auto r = p.run();
  EXPECT_EQ(p.gateway(), nullptr);
  EXPECT_TRUE(std::filesystem::exists(r.run_dir / "calibration.json"));
  EXPECT_FALSE(std::filesystem::exists(r.run_dir / "routing.jsonl"));
  const auto cal = read_json_file(r.run_dir / "calibration.json");
  EXPECT_GE(cal.at("temperature").get<double>(), 0.5);
}

TEST(Pipeline, ResumeSkipsCompletedPhases) {
  TempWorkspace ws("synthetic");
  {
    Pipeline p(PipelineConfig::load(ws / "config.json"));
    p.run({Phase::Calibrate, Phase::Tune, Phase::Route});
  }
  Pipeline p(PipelineConfig::load(ws / "config.json"));
  const auto r = p.run();
  EXPECT_EQ(r.skipped, (std::vector<Phase>{Phase::Calibrate, Phase::Tune, Phase::Route}));
  EXPECT_EQ(r.executed, (std::vector<Phase>{Phase::Cej, Phase::Merge, Phase::Report}));
  EXPECT_EQ(r.manifest.at("counts").at("llm_calls"), 180);
  Pipeline again(PipelineConfig::load(ws / "config.json"));
  EXPECT_THROW(again.run(), ConfigError);
}

TEST(Pipeline, MissingPrerequisiteIsConfigError) {
  TempWorkspace ws("synthetic");
  Pipeline p(PipelineConfig::load(ws / "config.json"));
  EXPECT_THROW(p.run({Phase::Cej}), ConfigError);
}

TEST(Pipeline, TaskMismatchOnResumeIsConfigError) {
  TempWorkspace ws("synthetic");
  {
    Pipeline p(with(ws, [](auto& j) { j["mode"] = "calibrate-only"; }));
    p.run();
  }
  auto j = config_of(ws);
  j["task_id"] = "edos-a";
  EXPECT_THROW(Pipeline(PipelineConfig::from_json(j, ws.path())).run({Phase::Tune}), ConfigError);
}

TEST(Pipeline, FailureWritesFailedManifest) {
  TempWorkspace ws("synthetic");
  auto empty = std::make_shared<llmgw::MockTransport>(std::vector<llmgw::MockRule>{});
  Pipeline p(PipelineConfig::load(ws / "config.json"), empty, triage::testing::no_sleep());
  EXPECT_THROW(p.run(), llmgw::UnscriptedRequest);
  const auto m = read_json_file(ws / "out/synthetic/manifest.json");
  EXPECT_EQ(m.at("status"), "failed");
  EXPECT_EQ(m.at("failed_phase"), "cej");
  EXPECT_EQ(m.at("completed_phases"), nlohmann::json::array({"calibrate", "tune", "route"}));
  const auto state = read_json_file(ws / "out/synthetic/state.json");
  EXPECT_EQ(state.at("status"), "failed");
}

TEST(Pipeline, DryRunPlan) {
  TempWorkspace ws("synthetic");
  Pipeline p(PipelineConfig::load(ws / "config.json"));
  const auto plan = p.plan();
  EXPECT_EQ(plan.total, 60u);
  EXPECT_EQ(plan.escalated, 20u);
  EXPECT_EQ(plan.calls_per_instance, 9u);
  EXPECT_EQ(plan.planned_calls, 180u);
  EXPECT_EQ(plan.message(), "would make 9·20 = 180 calls");
  EXPECT_FALSE(plan.from_cached_routing);
  EXPECT_EQ(p.gateway(), nullptr);
  EXPECT_FALSE(std::filesystem::exists(ws / "out/synthetic/manifest.json"));
}

TEST(Pipeline, ZeroShotBaselineReport) {
  TempWorkspace ws("synthetic");
  auto transport = std::make_shared<llmgw::MockTransport>(std::vector<llmgw::MockRule>{
      triage::testing::rule("zs", {"Classify the following text into one of the sexism categories"}, {triage::testing::ok("2) Derogation")})});
  Pipeline p(with(ws, [](auto& j) { j["mode"] = "zero-shot-baseline"; }), transport, triage::testing::no_sleep());
  const auto r = p.run();
  ASSERT_TRUE(r.report);
  EXPECT_EQ(r.report->baseline.name, "zero-shot");
  EXPECT_EQ(p.gateway()->ledger().size(), 60u);
  for (const auto& line : read_jsonl_file(r.run_dir / "zero_shot.jsonl")) EXPECT_EQ(line.at("label"), "2. derogation");
}

TEST(Pipeline, NoGoldSkipsReport) {
  TempWorkspace ws("synthetic");
  std::vector<LogitRecord> records = read_logit_jsonl(ws / "test.jsonl");
  for (auto& r : records) r.gold_label.reset();
  {
    std::ofstream out(ws / "test.jsonl");
    write_logit_jsonl(out, records);
  }
  Pipeline p(PipelineConfig::load(ws / "config.json"));
  const auto r = p.run();
  EXPECT_FALSE(r.report);
  EXPECT_FALSE(std::filesystem::exists(r.run_dir / "report.json"));
  EXPECT_TRUE(std::filesystem::exists(r.run_dir / "predictions.jsonl"));
}

TEST(Predictions, FieldAutoDetect) {
  TempWorkspace ws("synthetic");
  const auto gold = read_predictions(ws / "test.jsonl");
  EXPECT_EQ(gold.size(), 60u);
  EXPECT_EQ(gold[0].label, read_logit_jsonl(ws / "test.jsonl")[0].gold_label);
}
