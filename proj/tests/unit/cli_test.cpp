#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "triage/cli.hpp"
#include "triage/jsonl.hpp"
#include "workspace.hpp"

using namespace triage;
using triage::testing::TempWorkspace;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.insert(args.begin(), "triage");
  cli::Hooks hooks;
  hooks.env = [](const std::string&) { return std::nullopt; };
  const int code = cli::run(args, out, err, hooks);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST(Cli, VersionAndHelp) {
  EXPECT_EQ(run({"--version"}).code, cli::kExitOk);
  const auto help = run({"--help"});
  EXPECT_EQ(help.code, cli::kExitOk);
  EXPECT_NE(help.out.find("tune-routing"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("\"error\":\"usage\""), std::string::npos) << r.err;
  EXPECT_EQ(run({"weights", "--task", "edos-a"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"calibrate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({}).code, cli::kExitUsage);
}

TEST(Cli, WeightsHumanAndJson) {
  const auto r = run({"weights", "--task", "exist-1.1", "--counts", "NO=900,YES=100"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("YES\t100\t1.7235629545298814"), std::string::npos) << r.out;
  const auto j = run({"weights", "--task", "edos-a", "--counts", R"({"not sexist": 900, "sexist": 100})", "--json"});
  ASSERT_EQ(j.code, cli::kExitOk) << j.err;
  EXPECT_NEAR(nlohmann::json::parse(j.out).at("weights").at("sexist").get<double>(), 1.7235629545298814, 1e-15);
  const auto bad = run({"weights", "--task", "edos-a", "--counts", "sexist=0,not sexist=3"});
  EXPECT_EQ(bad.code, cli::kExitFailure);
  EXPECT_NE(bad.err.find("\"error\":\"validation\""), std::string::npos) << bad.err;
}

TEST(Cli, PipelineDryRunMakesNoCalls) {
  TempWorkspace ws("synthetic");
  const auto r = run({"pipeline", "--config", (ws / "config.json").string(), "--dry-run"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("would make 9·20 = 180 calls"), std::string::npos) << r.out;
  EXPECT_FALSE(std::filesystem::exists(ws / "out/synthetic/manifest.json"));
  const auto cal = run({"calibrate", "--config", (ws / "config.json").string(), "--dry-run"});
  EXPECT_NE(cal.out.find("would make 0 calls"), std::string::npos) << cal.out;
}

TEST(Cli, PipelineRunAndRunIdOverride) {
  TempWorkspace ws("synthetic");
  const auto r = run({"pipeline", "--config", (ws / "config.json").string(), "--run-id", "alt", "--json"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_TRUE(std::filesystem::exists(ws / "out/alt/report.json"));
  const auto manifest = read_json_file(ws / "out/alt/manifest.json");
  EXPECT_EQ(manifest.at("config").at("run_id"), "alt");
  const auto again = run({"pipeline", "--config", (ws / "config.json").string(), "--run-id", "alt"});
  EXPECT_EQ(again.code, cli::kExitFailure);
  EXPECT_NE(again.err.find("\"error\":\"config\""), std::string::npos) << again.err;
}

TEST(Cli, StepwiseSubcommandsResume) {
  TempWorkspace ws("synthetic");
  const auto cfg = (ws / "config.json").string();
  ASSERT_EQ(run({"route", "--config", cfg}).code, cli::kExitOk);
  EXPECT_TRUE(std::filesystem::exists(ws / "out/synthetic/routing.jsonl"));
  const auto c = run({"cej", "--config", cfg});
  ASSERT_EQ(c.code, cli::kExitOk) << c.err;
  EXPECT_TRUE(std::filesystem::exists(ws / "out/synthetic/predictions.jsonl"));
}

TEST(Cli, EvaluateScoresAndNamesMisalignedId) {
  TempWorkspace ws("synthetic");
  ASSERT_EQ(run({"pipeline", "--config", (ws / "config.json").string()}).code, cli::kExitOk);
  const auto gold = (ws / "test.jsonl").string();
  const auto pred = (ws / "out/synthetic/predictions.jsonl").string();
  const auto r = run({"evaluate", "--task", "edos-b", "--gold", gold, "--pred", "routed=" + pred, "--json"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NEAR(nlohmann::json::parse(r.out).at("baseline").at("macro_f1").get<double>(), 0.8848276723276722, 1e-12);

  const auto short_pred = ws / "short.jsonl";
  {
    std::ofstream out(short_pred);
    std::ifstream in(pred);
    std::string line;
    for (int i = 0; i < 59 && std::getline(in, line); ++i) out << line << "\n";
  }
  const auto missing_id = read_jsonl_file(pred).back().at("instance_id").get<std::string>();
  const auto bad = run({"evaluate", "--task", "edos-b", "--gold", gold, "--pred", "routed=" + short_pred.string()});
  EXPECT_EQ(bad.code, cli::kExitFailure);
  EXPECT_NE(bad.err.find(missing_id), std::string::npos) << bad.err;
}

TEST(Cli, ZeroShotDryRun) {
  const auto r = run({"zero-shot", "--task", "edos-b", "--dry-run"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("4) Prejudiced discussions."), std::string::npos);
  const auto t = run({"zero-shot", "--task", "edos-a", "--text", "hello world", "--dry-run"});
  EXPECT_NE(t.out.find("hello world"), std::string::npos);
  EXPECT_EQ(run({"zero-shot", "--task", "edos-a", "--text", "hi"}).code, cli::kExitFailure);
}

TEST(Cli, MissingConfigFileIsConfigError) {
  const auto r = run({"calibrate", "--config", "/nonexistent/config.json"});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_NE(r.err.find("\"error\":\"config\""), std::string::npos) << r.err;
}

TEST(Cli, WeightsFileRoundTrip) {
  TempWorkspace ws("synthetic");
  {
    std::ofstream counts(ws / "counts.json");
    counts << R"({"1. threats, plans to harm and incitement": 310, "2. derogation": 1590, "3. animosity": 1165, "4. prejudiced discussions": 333})";
  }
  const auto r = run({"weights", "--task", "edos-b", "--counts", (ws / "counts.json").string(), "--out",
                      (ws / "weights.json").string()});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const auto j = read_json_file(ws / "weights.json");
  for (const char* key : {"config", "weights", "labels", "counts", "effective_number", "raw", "normalized", "clamped"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j.at("counts"), nlohmann::json::array({310, 1590, 1165, 333}));
  EXPECT_GT(j.at("weights").at("1. threats, plans to harm and incitement").get<double>(),
            j.at("weights").at("2. derogation").get<double>());
}
