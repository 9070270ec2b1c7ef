#pragma once

// Run reports: per-class F1 for a baseline and one or more routed variants,
// class-wise gains, and escalation accounting.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/core.hpp"
#include "triage/metrics.hpp"
#include "triage/router.hpp"

namespace triage::evalrep {

struct Prediction {
  std::string instance_id;
  std::string label;
};

struct PredictionSet {
  std::string name;
  std::vector<Prediction> predictions;
};

struct SystemScores {
  std::string name;
  double macro_f1 = 0.0;
  std::vector<ClassScore> per_class;
};

struct GainRow {
  std::string label;
  std::int64_t n = 0;  ///< gold support
  double baseline_f1 = 0.0;
  std::vector<double> variant_f1;  ///< aligned with RunReport::variants
  std::string best_variant;
  double routed_f1 = 0.0;  ///< best variant F1 for this class
  double gain = 0.0;       ///< routed_f1 - baseline_f1, unrounded
  bool degraded = false;   ///< gain < 0
  std::int64_t escalations = 0;  ///< escalated instances whose gold label is this class
};

struct EscalationEffect {
  std::int64_t accepted = 0;
  std::int64_t escalated = 0;
  double escalation_rate = 0.0;
  std::optional<double> accepted_accuracy;
  std::optional<double> escalated_specialist_accuracy;
  std::optional<double> escalated_final_accuracy;
  std::int64_t corrected = 0;  ///< escalated, specialist wrong, final right
  std::int64_t broken = 0;     ///< escalated, specialist right, final wrong
  std::int64_t changed = 0;    ///< escalated with final != specialist
};

struct RunReport {
  std::string task_id;
  std::vector<std::string> class_labels;
  std::int64_t n = 0;
  SystemScores baseline;
  std::vector<SystemScores> variants;
  std::vector<GainRow> classwise_gain;
  /// Absent when no routing decisions were supplied.
  std::optional<EscalationEffect> escalation;
};

/// Every prediction set must cover exactly the gold ids; the first id out
/// of place is named in the error. Decisions, if given, must cover them too.
RunReport build_report(const TaskSchema& schema, const std::vector<Prediction>& gold, const PredictionSet& baseline,
                       const std::vector<PredictionSet>& variants,
                       std::span<const router::RoutingDecision> decisions = {});

/// ICM fields are null: they come from the official external scorer.
nlohmann::json to_json(const RunReport& report);
/// Columns: Category, n, baseline, one per variant, Gain (points).
std::string render_table(const RunReport& report);
std::string render_csv(const RunReport& report);

}  // namespace triage::evalrep
