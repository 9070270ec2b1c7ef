#include "triage/imbalance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace triage::imbalance {

using nlohmann::json;

void WeightConfig::validate() const {
  if (!(beta >= 0.0 && beta < 1.0)) throw ValidationError("beta must lie in [0, 1)");
  if (!(w_min > 0.0 && w_min <= w_max)) throw ValidationError("weight bounds need 0 < w_min <= w_max");
}

void LossConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ValidationError("gamma must be >= 0");
  if (!(label_smoothing_eps >= 0.0 && label_smoothing_eps < 1.0))
    throw ValidationError("label smoothing eps must lie in [0, 1)");
}

ClassWeights ClassWeights::uniform(std::size_t num_classes) {
  return from_weights(std::vector<double>(num_classes, 1.0));
}

ClassWeights ClassWeights::from_weights(std::vector<double> weights) {
  ClassWeights w;
  w.raw = weights;
  w.normalized = weights;
  w.clamped = weights;
  w.weights = std::move(weights);
  return w;
}

double effective_number(std::int64_t n, double beta) {
  if (n < 1) throw ValidationError("effective number needs n >= 1");
  if (!(beta >= 0.0 && beta < 1.0)) throw ValidationError("beta must lie in [0, 1)");
  if (beta == 0.0) return 1.0;
  // 1 - beta^n evaluated as -expm1(n log beta) keeps precision for beta near 1.
  return -std::expm1(static_cast<double>(n) * std::log(beta)) / (1.0 - beta);
}

namespace {

std::vector<double> unit_mean(const std::vector<double>& v) {
  const double sum = std::accumulate(v.begin(), v.end(), 0.0);
  const double scale = static_cast<double>(v.size()) / sum;
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [scale](double x) { return x * scale; });
  return out;
}

}  // namespace

ClassWeights class_weights(std::span<const std::int64_t> counts, const WeightConfig& cfg) {
  cfg.validate();
  if (counts.empty()) throw ValidationError("class_weights needs at least one class");
  ClassWeights w;
  w.counts.assign(counts.begin(), counts.end());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 1) {
      throw ValidationError("class " + std::to_string(c) +
                            " has zero examples; drop or merge the empty class before weighting");
    }
    w.effective.push_back(effective_number(counts[c], cfg.beta));
    w.raw.push_back(1.0 / w.effective.back());
  }
  w.normalized = unit_mean(w.raw);
  w.clamped.resize(w.normalized.size());
  std::transform(w.normalized.begin(), w.normalized.end(), w.clamped.begin(),
                 [&](double x) { return std::clamp(x, cfg.w_min, cfg.w_max); });
  w.weights = unit_mean(w.clamped);
  return w;
}

namespace {

void check_loss_args(std::span<const double> logits, std::size_t gold, const ClassWeights& weights) {
  if (logits.size() != weights.size())
    throw ValidationError("loss: " + std::to_string(logits.size()) + " logits but " +
                          std::to_string(weights.size()) + " class weights");
  if (gold >= logits.size()) throw ValidationError("loss: gold index out of range");
}

}  // namespace

double cb_ce_loss(std::span<const double> logits, std::size_t gold_index,
                  const ClassWeights& weights, const LossConfig& cfg) {
  cfg.validate();
  check_loss_args(logits, gold_index, weights);
  const auto logp = log_softmax(logits);
  const double eps = cfg.label_smoothing_eps;
  const double uniform = eps / static_cast<double>(logits.size());
  double acc = 0.0;
  for (std::size_t c = 0; c < logp.size(); ++c) {
    const double target = (c == gold_index ? 1.0 - eps : 0.0) + uniform;
    acc += target * logp[c];
  }
  return -weights[gold_index] * acc;
}

double cb_focal_loss(std::span<const double> logits, std::size_t gold_index,
                     const ClassWeights& weights, const LossConfig& cfg) {
  cfg.validate();
  check_loss_args(logits, gold_index, weights);
  const double logp = log_softmax(logits)[gold_index];
  // 1 - p computed as -expm1(log p) so confident predictions keep their tail.
  const double one_minus_p = -std::expm1(logp);
  const double modulator = cfg.gamma == 0.0 ? 1.0 : std::pow(one_minus_p, cfg.gamma);
  return -weights[gold_index] * modulator * logp;
}

std::vector<std::int64_t> counts_from_json(const json& j, const TaskSchema& schema) {
  if (!j.is_object()) throw ValidationError("class counts must be a JSON object label -> count");
  std::vector<std::int64_t> counts(schema.num_classes(), 0);
  for (const auto& [label, value] : j.items()) {
    if (!value.is_number_integer()) throw ValidationError("count for '" + label + "' is not an integer");
    counts[schema.require_index(label)] = value.get<std::int64_t>();
  }
  return counts;
}

json weights_to_json(const ClassWeights& w, const TaskSchema& schema, const WeightConfig& cfg) {
  json out;
  out["config"] = {{"beta", cfg.beta}, {"w_min", cfg.w_min}, {"w_max", cfg.w_max}};
  json weights = json::object();
  for (std::size_t c = 0; c < w.size(); ++c) weights[schema.label(c)] = w.weights[c];
  out["weights"] = weights;
  out["labels"] = schema.class_labels();
  out["counts"] = w.counts;
  out["effective_number"] = w.effective;
  out["raw"] = w.raw;
  out["normalized"] = w.normalized;
  out["clamped"] = w.clamped;
  return out;
}

// ---------------------------------------------------------------------------

ClassAwareSampler::ClassAwareSampler(std::vector<std::vector<std::size_t>> partitions, SamplerConfig cfg)
    : partitions_(std::move(partitions)), cfg_(cfg), quota_(cfg.quota()), engine_(cfg.seed) {
  if (cfg_.num_classes == 0 || partitions_.size() != cfg_.num_classes)
    throw ConfigError("sampler: got " + std::to_string(partitions_.size()) + " partitions for " +
                      std::to_string(cfg_.num_classes) + " classes");
  if (quota_ == 0)
    throw ConfigError("sampler: batch too small for class count (batch_size " +
                      std::to_string(cfg_.batch_size) + " < num_classes " +
                      std::to_string(cfg_.num_classes) + ")");
  for (std::size_t c = 0; c < partitions_.size(); ++c) {
    if (partitions_[c].empty()) throw ConfigError("sampler: class " + std::to_string(c) + " has no instances");
  }
}

namespace {
__extension__ using u128 = unsigned __int128;
}  // namespace

std::uint64_t ClassAwareSampler::bounded(std::uint64_t n) {
  // Lemire, "Fast Random Integer Generation in an Interval" (2019).
  u128 m = static_cast<u128>(engine_()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<u128>(engine_()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

std::vector<std::size_t> ClassAwareSampler::next_batch() {
  std::vector<std::size_t> batch;
  batch.reserve(quota_ * partitions_.size());
  for (const auto& part : partitions_) {
    for (std::size_t i = 0; i < quota_; ++i) batch.push_back(part[bounded(part.size())]);
  }
  for (std::size_t i = batch.size() - 1; i > 0; --i) {
    std::swap(batch[i], batch[bounded(i + 1)]);
  }
  return batch;
}

std::vector<std::vector<std::size_t>> ClassAwareSampler::take() {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(cfg_.num_batches);
  for (std::size_t b = 0; b < cfg_.num_batches; ++b) out.push_back(next_batch());
  return out;
}

std::vector<std::vector<std::size_t>> partition_by_class(const Dataset& dataset) {
  std::vector<std::vector<std::size_t>> parts(dataset.schema().num_classes());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (auto g = dataset.gold_index(i)) parts[*g].push_back(i);
  }
  return parts;
}

}  // namespace triage::imbalance
