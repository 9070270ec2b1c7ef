#include <cmath>

#include <gtest/gtest.h>

#include "triage/calibrate.hpp"

using namespace triage;
using namespace triage::calibrate;

namespace {

Dataset analytic_fixture() {
  const auto schema = TaskSchema::builtin(TaskId::EdosA);
  std::vector<LogitRecord> records;
  for (int i = 0; i < 10; ++i)
    records.push_back({"r" + std::to_string(i), "", i == 9 ? "sexist" : "not sexist", {4.0, 0.0}});
  return validate_dataset(records, schema);
}

}  // namespace

TEST(Temperature, AnalyticOptimum) {
  const auto model = fit_temperature(analytic_fixture());
  EXPECT_NEAR(model.temperature, 1.820478453253674787228, 1e-4);
  EXPECT_LT(model.dev_nll_after, model.dev_nll_before);
  EXPECT_FALSE(model.at_lower_bound);
  EXPECT_FALSE(model.at_upper_bound);
}

TEST(Temperature, MeanNllAtOne) {
  // 9 * log(1 + e^-4) + log(1 + e^4), averaged.
  const double expected = (9.0 * std::log1p(std::exp(-4.0)) + std::log1p(std::exp(4.0))) / 10.0;
  EXPECT_NEAR(mean_nll(analytic_fixture(), 1.0), expected, 1e-12);
}

TEST(Temperature, PerfectlySeparableHitsLowerBound) {
  const auto schema = TaskSchema::builtin(TaskId::EdosA);
  const auto d = validate_dataset({{"a", "", "sexist", {0.0, 1.0}}, {"b", "", "not sexist", {1.0, 0.0}}}, schema);
  TemperatureSearch s;
  s.t_lo = 0.5;
  s.t_hi = 3.0;
  const auto m = fit_temperature(d, s);
  EXPECT_EQ(m.temperature, 0.5);
  EXPECT_TRUE(m.at_lower_bound);
}

TEST(Temperature, SingleClassWarns) {
  const auto schema = TaskSchema::builtin(TaskId::EdosA);
  const auto d = validate_dataset({{"a", "", "sexist", {0.0, 1.0}}, {"b", "", "sexist", {1.0, 0.0}}}, schema);
  EXPECT_TRUE(fit_temperature(d).single_class_warning);
}

TEST(Temperature, RejectsBadInput) {
  EXPECT_THROW(calibrate::calibrate(std::vector<double>{0.0, 1.0}, 0.0), ValidationError);
  TemperatureSearch s;
  s.t_lo = 2.0;
  s.t_hi = 1.0;
  EXPECT_THROW(fit_temperature(analytic_fixture(), s), Error);
  const auto schema = TaskSchema::builtin(TaskId::EdosA);
  const auto unlabelled = validate_dataset({{"a", "", std::nullopt, {0.0, 1.0}}}, schema);
  EXPECT_THROW(fit_temperature(unlabelled), Error);
}

TEST(Calibrate, KnownSigmoidValues) {
  EXPECT_NEAR(calibrate::calibrate(std::vector<double>{0.0, 2.0}, 1.0)[1], 0.8807970779778824440597, 1e-15);
  EXPECT_NEAR(calibrate::calibrate(std::vector<double>{0.0, 2.0}, 2.0)[1], 0.7310585786300048792511, 1e-15);
}

TEST(Threshold, GridIsExact) {
  const auto g = threshold_grid(0.01);
  ASSERT_EQ(g.size(), 101u);
  EXPECT_EQ(g[41], 0.41);
  EXPECT_EQ(g.back(), 1.0);
  EXPECT_THROW(threshold_grid(0.03), ValidationError);
}

TEST(Threshold, SpecExampleSmallestMaximiser) {
  const auto schema = TaskSchema::builtin(TaskId::EdosA);
  const std::vector<double> p = {0.2, 0.4, 0.6, 0.8};
  const std::vector<std::string> gold = {"not sexist", "not sexist", "sexist", "sexist"};
  const auto m = tune_threshold(p, gold, schema, 0.01);
  EXPECT_EQ(m.threshold, 0.41);
  EXPECT_EQ(m.dev_macro_f1, 1.0);
  EXPECT_FALSE(m.outside_typical_range);
}

TEST(Threshold, ApplyIsInclusive) {
  const auto schema = TaskSchema::builtin(TaskId::EdosA);
  EXPECT_EQ(apply_threshold(0.5, 0.5, schema), "sexist");
  EXPECT_EQ(apply_threshold(0.4999, 0.5, schema), "not sexist");
}

TEST(Threshold, FlagsUnusualThreshold) {
  const auto schema = TaskSchema::builtin(TaskId::EdosA);
  const std::vector<double> p = {0.80, 0.85, 0.90, 0.95};
  const std::vector<std::string> gold = {"not sexist", "not sexist", "sexist", "sexist"};
  const auto m = tune_threshold(p, gold, schema, 0.01);
  EXPECT_EQ(m.threshold, 0.86);
  EXPECT_TRUE(m.outside_typical_range);
}

TEST(Threshold, RejectsMulticlass) {
  const auto schema = TaskSchema::builtin(TaskId::EdosB);
  const std::vector<double> p = {0.5};
  const std::vector<std::string> gold = {schema.label(0)};
  EXPECT_THROW(tune_threshold(p, gold, schema), Error);
}

TEST(CalibrationModel, JsonRoundTrip) {
  CalibrationModel m;
  m.task_id = TaskId::EdosA;
  m.fitted_on = "fnv1a64:0123456789abcdef";
  m.temperature.temperature = 1.25;
  m.threshold = ThresholdModel{0.41, 0.01, 0.9, false};
  m.tau_conf = 0.7;
  const auto back = calibration_model_from_json(to_json(m));
  EXPECT_EQ(back.temperature.temperature, 1.25);
  ASSERT_TRUE(back.threshold);
  EXPECT_EQ(back.threshold->threshold, 0.41);
  EXPECT_EQ(back.tau_conf, 0.7);
  EXPECT_FALSE(back.tau_margin);
  EXPECT_NO_THROW(back.ensure_applicable(TaskSchema::builtin(TaskId::EdosA)));
  EXPECT_THROW(back.ensure_applicable(TaskSchema::builtin(TaskId::EdosB)), ConfigError);
}
