#pragma once

// Effective-number class weighting, class-balanced CE / focal loss evaluation,
// and the class-aware batch sampler.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/core.hpp"

namespace triage::imbalance {

struct WeightConfig {
  double beta = 0.999;
  double w_min = 0.25;
  double w_max = 4.0;

  void validate() const;
};

/// Final weights plus every intermediate stage, kept for audit output.
/// `weights` is the re-normalized vector; the [w_min, w_max] bound holds for
/// `clamped` and may be exceeded by `weights` by the re-normalization factor.
struct ClassWeights {
  std::vector<double> weights;
  std::vector<std::int64_t> counts;
  std::vector<double> effective;
  std::vector<double> raw;
  std::vector<double> normalized;
  std::vector<double> clamped;

  std::size_t size() const noexcept { return weights.size(); }
  double operator[](std::size_t i) const { return weights[i]; }

  /// Unit weights, handy for unweighted loss evaluation.
  static ClassWeights uniform(std::size_t num_classes);
  static ClassWeights from_weights(std::vector<double> weights);
};

struct LossConfig {
  double gamma = 2.0;
  double label_smoothing_eps = 0.05;

  void validate() const;
};

/// (1 - beta^n) / (1 - beta); equals 1 for every n when beta == 0.
double effective_number(std::int64_t n, double beta);

/// raw = 1/EN, unit-mean normalize, clamp to [w_min, w_max], unit-mean
/// re-normalize. Every count must be at least 1.
ClassWeights class_weights(std::span<const std::int64_t> counts, const WeightConfig& cfg = {});

/// Weighted cross-entropy against the smoothed target
/// (1-eps)*onehot(gold) + eps/C.
double cb_ce_loss(std::span<const double> logits, std::size_t gold_index,
                  const ClassWeights& weights, const LossConfig& cfg = {});

/// -w_y (1-p_y)^gamma log p_y on the hard gold class; label smoothing is not
/// applied here.
double cb_focal_loss(std::span<const double> logits, std::size_t gold_index,
                     const ClassWeights& weights, const LossConfig& cfg = {});

/// Label -> count JSON in, label -> weight JSON (with intermediates) out.
std::vector<std::int64_t> counts_from_json(const nlohmann::json& j, const TaskSchema& schema);
nlohmann::json weights_to_json(const ClassWeights& w, const TaskSchema& schema, const WeightConfig& cfg);

// ---------------------------------------------------------------------------
// Class-aware batching

struct SamplerConfig {
  std::size_t batch_size = 16;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;
  std::size_t num_batches = 1;

  /// floor(batch_size / num_classes).
  std::size_t quota() const noexcept { return num_classes == 0 ? 0 : batch_size / num_classes; }
};

/// Draws batches of quota()*C dataset indices, quota() per class with
/// replacement, then shuffles each batch.
///
/// The random stream is pinned so that batch sequences are reproducible
/// across platforms and standard libraries: the engine is std::mt19937_64
/// seeded with `seed` (its output sequence is fixed by the standard), bounded
/// integers in [0, n) use Lemire's multiply-shift with rejection, and the
/// shuffle is a Fisher-Yates pass from the last position down to 1, drawing
/// j in [0, i]. Classes are visited in index order, each drawing `quota`
/// positions into its partition.
///
/// Single consumer. Use one sampler per worker with distinct seeds.
class ClassAwareSampler {
 public:
  ClassAwareSampler(std::vector<std::vector<std::size_t>> partitions, SamplerConfig cfg);

  std::size_t quota() const noexcept { return quota_; }
  std::vector<std::size_t> next_batch();
  /// cfg.num_batches batches from the current state.
  std::vector<std::vector<std::size_t>> take();

 private:
  std::uint64_t bounded(std::uint64_t n);

  std::vector<std::vector<std::size_t>> partitions_;
  SamplerConfig cfg_;
  std::size_t quota_;
  std::mt19937_64 engine_;
};

/// Groups dataset positions by gold class (records without gold are skipped).
std::vector<std::vector<std::size_t>> partition_by_class(const Dataset& dataset);

}  // namespace triage::imbalance
