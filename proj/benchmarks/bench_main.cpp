#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "triage/calibrate.hpp"
#include "triage/imbalance.hpp"
#include "triage/router.hpp"
#include "triage/structured_output.hpp"

using namespace triage;

namespace {

const TaskSchema& edos_a() {
  static const TaskSchema s = TaskSchema::builtin(TaskId::EdosA);
  return s;
}

const TaskSchema& edos_c() {
  static const TaskSchema s = TaskSchema::builtin(TaskId::EdosC);
  return s;
}

Dataset random_dataset(const TaskSchema& schema, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.5);
  std::vector<LogitRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t gold = i % schema.num_classes();
    std::vector<double> z(schema.num_classes());
    for (auto& v : z) v = noise(rng);
    z[gold] += 1.0;
    records.push_back({"b" + std::to_string(i), "", schema.label(gold), z});
  }
  return validate_dataset(std::move(records), schema);
}

void BM_ClassWeights(benchmark::State& state) {
  std::vector<std::int64_t> counts;
  for (std::int64_t i = 0; i < state.range(0); ++i) counts.push_back(10 + 137 * i);
  for (auto _ : state) benchmark::DoNotOptimize(imbalance::class_weights(counts, {}));
}
BENCHMARK(BM_ClassWeights)->Arg(2)->Arg(11);

void BM_FocalLoss(benchmark::State& state) {
  const std::vector<double> z = {0.3, -1.2, 2.5, 0.0, 0.7, -0.4, 1.1, 0.2, -2.0, 0.9, 0.05};
  const auto w = imbalance::ClassWeights::uniform(z.size());
  for (auto _ : state) benchmark::DoNotOptimize(imbalance::cb_focal_loss(z, 3, w, {}));
}
BENCHMARK(BM_FocalLoss);

void BM_FitTemperature(benchmark::State& state) {
  const auto dev = random_dataset(edos_c(), static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(calibrate::fit_temperature(dev));
}
BENCHMARK(BM_FitTemperature)->Arg(1000)->Arg(10000);

void BM_TuneThreshold(benchmark::State& state) {
  const auto dev = random_dataset(edos_a(), static_cast<std::size_t>(state.range(0)), 2);
  const auto probs = calibrate::calibrate_all(dev, 1.3);
  std::vector<double> p_pos;
  std::vector<std::string> gold;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    p_pos.push_back(probs[i][1]);
    gold.push_back(*dev[i].gold_label);
  }
  for (auto _ : state) benchmark::DoNotOptimize(calibrate::tune_threshold(p_pos, gold, edos_a(), 0.001));
}
BENCHMARK(BM_TuneThreshold)->Arg(1000)->Arg(10000);

void BM_TuneRouting(benchmark::State& state) {
  const auto dev = random_dataset(edos_c(), static_cast<std::size_t>(state.range(0)), 3);
  const auto probs = calibrate::calibrate_all(dev, 1.0);
  std::vector<router::DevItem> items;
  for (std::size_t i = 0; i < dev.size(); ++i)
    items.push_back({dev[i].instance_id, probs[i], edos_c().label(probs[i].argmax()), *dev[i].gold_label});
  const router::ProxyOutcomes provider(edos_c(), 0.8, 7);
  const auto grid = router::RoutingGrid::deciles();
  for (auto _ : state)
    benchmark::DoNotOptimize(router::tune_routing(items, edos_c(), router::Mode::Multiclass, grid, provider));
}
BENCHMARK(BM_TuneRouting)->Arg(1000);

void BM_ParseOpinion(benchmark::State& state) {
  const std::string raw =
      "Here is my answer:\n{\n\"persona\": \"Normal Person\",\n\"label\": \"1\",\n"
      "\"justification\": \"The tweet stereotypes women's intelligence.\",\n\"confidence\": \"0.87\"\n}";
  for (auto _ : state) benchmark::DoNotOptimize(cej::parse_opinion(raw, edos_a()));
}
BENCHMARK(BM_ParseOpinion);

}  // namespace
