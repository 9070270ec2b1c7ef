#pragma once

// Confidence-aware selective classification: accept the specialist's label or
// escalate the instance to collaborative judgment.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/core.hpp"

namespace triage::router {

enum class Mode { Binary, Multiclass };

std::string_view to_string(Mode mode) noexcept;
Mode mode_for(const TaskSchema& schema) noexcept;

struct RoutingPolicy {
  double tau_conf = 0.5;
  /// Unused (null) in binary mode; required in multiclass mode.
  std::optional<double> tau_margin;
  Mode mode = Mode::Binary;

  static RoutingPolicy binary(double tau_conf);
  static RoutingPolicy multiclass(double tau_conf, double tau_margin);
  void validate() const;
};

enum class Outcome { Accepted, Escalated };

struct RoutingDecision {
  std::string instance_id;
  std::string specialist_label;
  double confidence = 0.0;
  double margin = 0.0;
  Outcome outcome = Outcome::Accepted;

  bool escalated() const noexcept { return outcome == Outcome::Escalated; }
};

/// Largest probability.
double confidence(const ProbVector& p);
/// Largest minus second-largest probability; 0 on a tie. Needs C >= 2.
double margin(const ProbVector& p);

/// Binary: c < tau_conf. Multiclass: c < tau_conf AND m < tau_margin.
bool should_escalate(double confidence, double margin, const RoutingPolicy& policy);

/// The specialist label is the argmax, except for binary schemas with a tuned
/// threshold where it is positive iff p_pos >= threshold. Confidence stays the
/// maximum probability either way.
RoutingDecision decide(std::string instance_id, const ProbVector& p, const TaskSchema& schema,
                       const RoutingPolicy& policy, std::optional<double> binary_threshold = std::nullopt);

nlohmann::json to_json(const RoutingDecision& d);
RoutingDecision routing_decision_from_json(const nlohmann::json& j);

/// escalation_rate, accepted_accuracy (null without gold), per-class
/// escalation counts keyed by specialist label and, when gold is known, by
/// gold label.
nlohmann::json routing_summary(std::span<const RoutingDecision> decisions, const TaskSchema& schema,
                               const std::map<std::string, std::string>& gold_by_id = {});

// ---------------------------------------------------------------------------
// Joint threshold tuning

struct DevItem {
  std::string instance_id;
  ProbVector probs;
  std::string specialist_label;
  std::string gold_label;
};

/// What collaborative judgment would answer for an escalated dev instance.
class EscalationOutcomeProvider {
 public:
  virtual ~EscalationOutcomeProvider() = default;
  virtual std::string outcome(const DevItem& item) const = 0;
  virtual std::string describe() const = 0;
};

/// Labels recovered from earlier judgment transcripts, keyed by instance id.
class CachedOutcomes final : public EscalationOutcomeProvider {
 public:
  explicit CachedOutcomes(std::map<std::string, std::string> labels) : labels_(std::move(labels)) {}
  std::string outcome(const DevItem& item) const override;
  std::string describe() const override { return "cached"; }

 private:
  std::map<std::string, std::string> labels_;
};

/// Test hook: any callable.
class ScriptedOracle final : public EscalationOutcomeProvider {
 public:
  explicit ScriptedOracle(std::function<std::string(const DevItem&)> fn) : fn_(std::move(fn)) {}
  std::string outcome(const DevItem& item) const override { return fn_(item); }
  std::string describe() const override { return "scripted"; }

 private:
  std::function<std::string(const DevItem&)> fn_;
};

/// Judgment returns the gold label with probability q; otherwise the most
/// probable non-gold label. The coin for each instance is a hash of
/// (seed, instance_id), so outcomes do not depend on evaluation order.
class ProxyOutcomes final : public EscalationOutcomeProvider {
 public:
  ProxyOutcomes(const TaskSchema& schema, double q, std::uint64_t seed);
  std::string outcome(const DevItem& item) const override;
  std::string describe() const override;

 private:
  TaskSchema schema_;
  double q_;
  std::uint64_t seed_;
};

struct TuneObjective {
  enum class Kind { Lexicographic, Penalized };
  Kind kind = Kind::Lexicographic;
  /// Penalized only: score = macro_f1 - lambda * escalation_rate.
  double lambda = 0.0;
};

struct RoutingGrid {
  std::vector<double> tau_conf;
  /// Ignored in binary mode.
  std::vector<double> tau_margin;

  /// {0, 0.1, ..., 1.0} on both axes.
  static RoutingGrid deciles();
};

struct SurfaceCell {
  double tau_conf = 0.0;
  std::optional<double> tau_margin;
  double macro_f1 = 0.0;
  double escalation_rate = 0.0;
};

struct RoutingTuneResult {
  RoutingPolicy policy;
  double macro_f1 = 0.0;
  double escalation_rate = 0.0;
  /// Every evaluated cell in grid order (tau_conf outer, tau_margin inner).
  std::vector<SurfaceCell> surface;
};

/// Macro-F1 places compared by the lexicographic objective.
inline constexpr double kRoutingF1Scale = 1e4;

/// Exhaustive grid search. Lexicographic objective: highest macro-F1 rounded
/// to 4 decimals, then lowest escalation rate, then earliest grid cell.
RoutingTuneResult tune_routing(std::span<const DevItem> dev, const TaskSchema& schema, Mode mode,
                               const RoutingGrid& grid, const EscalationOutcomeProvider& provider,
                               const TuneObjective& objective = {});

nlohmann::json to_json(const RoutingTuneResult& result);

}  // namespace triage::router
