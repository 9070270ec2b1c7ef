// Randomized checks of library invariants against the reference oracles.

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "triage/calibrate.hpp"
#include "triage/imbalance.hpp"
#include "triage/metrics.hpp"
#include "triage/router.hpp"

using namespace triage;
namespace oracle = triage::testing;

namespace {

std::vector<double> random_logits(std::mt19937_64& rng, std::size_t c, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> z(c);
  for (auto& v : z) v = d(rng);
  return z;
}

}  // namespace

TEST(OracleWeights, HighPrecisionAgreement) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng() % 10;
    std::vector<std::int64_t> counts;
    for (std::size_t i = 0; i < c; ++i) counts.push_back(1 + static_cast<std::int64_t>(rng() % 20000));
    const double beta = std::uniform_real_distribution<double>(0.0, 0.99999)(rng);
    imbalance::WeightConfig cfg;
    cfg.beta = beta;
    const auto w = imbalance::class_weights(counts, cfg);
    const auto expected = oracle::class_weights_oracle(counts, beta, cfg.w_min, cfg.w_max);
    for (std::size_t i = 0; i < c; ++i) ASSERT_NEAR(w[i], expected[i].convert_to<double>(), 1e-9);
  }
}

TEST(OracleWeights, MonotoneInCount) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t a = 1 + static_cast<std::int64_t>(rng() % 5000);
    const std::int64_t b = a + 1 + static_cast<std::int64_t>(rng() % 5000);
    const auto w = imbalance::class_weights(std::vector<std::int64_t>{a, b});
    EXPECT_GE(w[0], w[1]);
  }
}

TEST(OracleLoss, CrossEntropyAndFocal) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t c = 2 + rng() % 10;
    const auto z = random_logits(rng, c, 4.0);
    std::vector<double> w(c);
    for (auto& v : w) v = std::uniform_real_distribution<double>(0.25, 4.0)(rng);
    const std::size_t gold = rng() % c;
    const double eps = std::uniform_real_distribution<double>(0.0, 0.2)(rng);
    const double gamma = std::uniform_real_distribution<double>(0.0, 5.0)(rng);
    const auto weights = imbalance::ClassWeights::from_weights(w);
    imbalance::LossConfig cfg;
    cfg.label_smoothing_eps = eps;
    cfg.gamma = gamma;
    const double ce = imbalance::cb_ce_loss(z, gold, weights, cfg);
    const double focal = imbalance::cb_focal_loss(z, gold, weights, cfg);
    ASSERT_NEAR(ce, static_cast<double>(oracle::ce_oracle(z, gold, w, eps)), 1e-10 * std::max(1.0, ce));
    ASSERT_NEAR(focal, static_cast<double>(oracle::focal_oracle(z, gold, w, gamma)), 1e-10 * std::max(1.0, focal));
    cfg.gamma = 0.0;
    cfg.label_smoothing_eps = 0.0;
    ASSERT_NEAR(imbalance::cb_focal_loss(z, gold, weights, cfg), imbalance::cb_ce_loss(z, gold, weights, cfg), 1e-12);
  }
}

TEST(OracleCalibration, TemperatureWithinOneGridStep) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 6; ++trial) {
    const auto schema = TaskSchema::builtin(trial % 2 == 0 ? TaskId::EdosA : TaskId::EdosB);
    const std::size_t c = schema.num_classes();
    std::vector<LogitRecord> records;
    std::vector<oracle::OracleRecord> refs;
    for (int i = 0; i < 30; ++i) {
      const std::size_t gold = rng() % c;
      auto z = random_logits(rng, c, 1.0 + trial);
      z[gold] += 1.0 + 0.5 * trial;
      records.push_back({"r" + std::to_string(i), "", schema.label(gold), z});
      refs.push_back({z, gold});
    }
    const auto dev = validate_dataset(records, schema);
    calibrate::TemperatureSearch search;
    search.t_lo = 0.2;
    search.t_hi = 6.0;
    const auto model = calibrate::fit_temperature(dev, search);
    EXPECT_NEAR(model.temperature, oracle::temperature_grid_oracle(refs, search.t_lo, search.t_hi), 1e-4 + 1e-12);
  }
}

TEST(OracleCalibration, TemperatureKeepsRanking) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto z = random_logits(rng, 2 + rng() % 10, 6.0);
    const double t = std::exp(std::uniform_real_distribution<double>(-4.0, 4.0)(rng));
    const auto p = calibrate::calibrate(z, t);
    ASSERT_EQ(p.argmax(), argmax(z));
    for (std::size_t i = 0; i < z.size(); ++i)
      for (std::size_t j = 0; j < z.size(); ++j)
        if (z[i] < z[j]) {
          ASSERT_LE(p[i], p[j]);
        }
  }
}

TEST(OracleCalibration, ThresholdMatchesBruteForce) {
  std::mt19937_64 rng(16);
  const auto schema = TaskSchema::builtin(TaskId::Exist11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 5 + rng() % 60;
    std::vector<double> p;
    std::vector<bool> gold_pos;
    std::vector<std::string> gold;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pos = u(rng) < 0.4;
      gold_pos.push_back(pos);
      gold.push_back(pos ? "YES" : "NO");
      p.push_back(std::round(u(rng) * 100.0) / 100.0);
    }
    const double step = trial % 2 ? 0.01 : 0.05;
    const auto m = calibrate::tune_threshold(p, gold, schema, step);
    ASSERT_EQ(m.threshold, oracle::threshold_oracle(p, gold_pos, step)) << "trial " << trial;
  }
}

TEST(OracleMetrics, MacroF1MatchesExactRational) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng() % 10;
    const std::size_t n = 1 + rng() % 300;
    std::vector<std::size_t> g, p;
    evalrep::ConfusionMatrix cm(c);
    for (std::size_t i = 0; i < n; ++i) {
      g.push_back(rng() % c);
      p.push_back(rng() % 2 ? g.back() : rng() % c);
      cm.add(g.back(), p.back());
    }
    const double exact = oracle::macro_f1_rational(g, p, c).convert_to<double>();
    ASSERT_NEAR(evalrep::macro_f1(cm), exact, 1e-12);
  }
}

TEST(OracleRouting, EscalationMonotoneInThresholds) {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto p = calibrate::calibrate(random_logits(rng, 2 + rng() % 5, 2.0), 1.0);
    const double c = router::confidence(p);
    const double m = router::margin(p);
    double t1 = u(rng), t2 = u(rng), m1 = u(rng), m2 = u(rng);
    if (t1 > t2) std::swap(t1, t2);
    if (m1 > m2) std::swap(m1, m2);
    t1 = std::max(t1, 1e-9);
    if (router::should_escalate(c, m, router::RoutingPolicy::multiclass(t1, m1))) {
      ASSERT_TRUE(router::should_escalate(c, m, router::RoutingPolicy::multiclass(t2, m2)));
    }
    if (router::should_escalate(c, m, router::RoutingPolicy::binary(t1))) {
      ASSERT_TRUE(router::should_escalate(c, m, router::RoutingPolicy::binary(t2)));
    }
  }
}

TEST(OracleRouting, TuningMatchesExhaustiveSearch) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 12; ++trial) {
    const auto schema = TaskSchema::builtin(trial % 3 == 0 ? TaskId::EdosA : TaskId::EdosB);
    const std::size_t c = schema.num_classes();
    std::vector<router::DevItem> items;
    std::vector<oracle::RoutingItem> oracle_items;
    std::vector<std::size_t> judged;
    for (int i = 0; i < 40; ++i) {
      const std::size_t gold = rng() % c;
      auto z = random_logits(rng, c, 1.0);
      z[gold] += 0.8;
      const auto p = calibrate::calibrate(z, 1.0);
      const std::size_t spec = p.argmax();
      judged.push_back(rng() % 4 == 0 ? rng() % c : gold);
      items.push_back({"i" + std::to_string(i), p, schema.label(spec), schema.label(gold)});
      oracle_items.push_back({std::vector<double>(p.values().begin(), p.values().end()), spec, gold});
    }
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < items.size(); ++i) pos[items[i].instance_id] = i;
    router::ScriptedOracle provider([&](const router::DevItem& d) { return schema.label(judged[pos.at(d.instance_id)]); });
    const auto grid = router::RoutingGrid::deciles();
    const auto tuned = router::tune_routing(items, schema, router::mode_for(schema), grid, provider);
    const auto expected = oracle::routing_oracle(oracle_items, c, schema.is_binary(), grid.tau_conf, grid.tau_margin,
                                                  [&](std::size_t i) { return judged[i]; });
    EXPECT_EQ(tuned.policy.tau_conf, expected.tau_conf) << "trial " << trial;
    EXPECT_EQ(tuned.policy.tau_margin, expected.tau_margin) << "trial " << trial;
    EXPECT_NEAR(tuned.macro_f1, expected.macro_f1.convert_to<double>(), 1e-12);
  }
}
