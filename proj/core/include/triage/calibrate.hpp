#pragma once

// Post-hoc temperature scaling and binary decision-threshold tuning on
// development-set logits.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/core.hpp"

namespace triage::calibrate {

struct TemperatureSearch {
  double t_lo = 0.05;
  double t_hi = 10.0;
  /// Golden-section stops once the bracket is narrower than this.
  double tolerance = 1e-4;

  void validate() const;
};

struct TemperatureModel {
  double temperature = 1.0;
  double t_lo = 0.05;
  double t_hi = 10.0;
  /// Mean per-instance NLL at T = 1 and at the fitted temperature.
  double dev_nll_before = 0.0;
  double dev_nll_after = 0.0;
  bool at_lower_bound = false;
  bool at_upper_bound = false;
  /// Dev gold labels cover a single class; the fit is still returned.
  bool single_class_warning = false;
};

/// Mean over records of -z_y/T + log sum_c exp(z_c/T). Records need gold labels.
double mean_nll(const Dataset& dev, double temperature);

/// Golden-section search for the NLL-minimizing T on [t_lo, t_hi]. The
/// bracket midpoint, both bounds and (if inside the bounds) T = 1 are then
/// compared and the lowest NLL wins, ties going to the smaller T.
TemperatureModel fit_temperature(const Dataset& dev, const TemperatureSearch& search = {});

/// softmax(logits / T). Throws ValidationError for T <= 0.
ProbVector calibrate(std::span<const double> logits, double temperature);

std::vector<ProbVector> calibrate_all(const Dataset& data, double temperature);

// ---------------------------------------------------------------------------
// Threshold tuning (binary schemas only)

struct ThresholdModel {
  double threshold = 0.5;
  double grid_step = 0.001;
  double dev_macro_f1 = 0.0;
  /// The tuned threshold left the usual [0.3, 0.6] band.
  bool outside_typical_range = false;
};

inline constexpr double kTypicalThresholdLow = 0.3;
inline constexpr double kTypicalThresholdHigh = 0.6;
/// Macro-F1 values closer than this count as ties.
inline constexpr double kF1TieTolerance = 1e-12;

/// Grid {0, 1/n, ..., 1} with n = round(1/step); step must divide 1.
std::vector<double> threshold_grid(double grid_step);

/// positive_label iff p_pos >= t.
const std::string& apply_threshold(double p_pos, double threshold, const TaskSchema& schema);

/// Dev macro-F1 when thresholding at t.
double threshold_objective(std::span<const double> p_pos, std::span<const std::string> gold,
                           const TaskSchema& schema, double threshold);

/// Exhaustive scan of threshold_grid(grid_step); the smallest t among
/// maximal macro-F1 values wins.
ThresholdModel tune_threshold(std::span<const double> p_pos, std::span<const std::string> gold,
                              const TaskSchema& schema, double grid_step = 0.001);

// ---------------------------------------------------------------------------
// Persisted calibration

struct CalibrationModel {
  TaskId task_id = TaskId::Custom;
  std::string fitted_on;  ///< dev dataset fingerprint
  TemperatureModel temperature;
  std::optional<ThresholdModel> threshold;
  std::optional<double> tau_conf;
  std::optional<double> tau_margin;

  /// Throws ConfigError when the model was fitted for a different task.
  void ensure_applicable(const TaskSchema& schema) const;
};

nlohmann::json to_json(const CalibrationModel& model);
CalibrationModel calibration_model_from_json(const nlohmann::json& j);

}  // namespace triage::calibrate
