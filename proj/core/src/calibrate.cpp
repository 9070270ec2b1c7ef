#include "triage/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "triage/metrics.hpp"

namespace triage::calibrate {

using nlohmann::json;

void TemperatureSearch::validate() const {
  if (!(t_lo > 0.0 && t_lo < t_hi) || !std::isfinite(t_hi))
    throw ValidationError("temperature bounds need 0 < T_lo < T_hi");
  if (!(tolerance > 0.0)) throw ValidationError("temperature tolerance must be positive");
}

double mean_nll(const Dataset& dev, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  if (dev.empty()) throw ValidationError("NLL of an empty dataset");
  double total = 0.0;
  std::vector<double> scaled;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    const auto gold = dev.gold_index(i);
    if (!gold) throw ValidationError("record '" + dev[i].instance_id + "' has no gold label");
    const auto& z = dev[i].logits;
    scaled.resize(z.size());
    std::transform(z.begin(), z.end(), scaled.begin(), [&](double v) { return v / temperature; });
    const double top = *std::max_element(scaled.begin(), scaled.end());
    double sum = 0.0;
    for (double s : scaled) sum += std::exp(s - top);
    total += -scaled[*gold] + top + std::log(sum);
  }
  return total / static_cast<double>(dev.size());
}

TemperatureModel fit_temperature(const Dataset& dev, const TemperatureSearch& search) {
  search.validate();
  if (dev.empty()) throw ValidationError("fit_temperature: empty dev set");
  if (!dev.all_gold()) throw ValidationError("fit_temperature: every dev record needs a gold label");

  TemperatureModel model;
  model.t_lo = search.t_lo;
  model.t_hi = search.t_hi;
  std::set<std::size_t> classes;
  for (std::size_t i = 0; i < dev.size(); ++i) classes.insert(*dev.gold_index(i));
  model.single_class_warning = classes.size() < 2;

  auto f = [&](double t) { return mean_nll(dev, t); };

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = search.t_lo;
  double b = search.t_hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > search.tolerance) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }

  std::vector<double> candidates = {search.t_lo, 0.5 * (a + b), search.t_hi};
  if (search.t_lo <= 1.0 && 1.0 <= search.t_hi) candidates.push_back(1.0);
  std::sort(candidates.begin(), candidates.end());
  double best_t = candidates.front();
  double best_f = f(best_t);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double v = f(candidates[i]);
    if (v < best_f) {
      best_f = v;
      best_t = candidates[i];
    }
  }

  model.temperature = best_t;
  model.dev_nll_after = best_f;
  model.dev_nll_before = f(1.0);
  model.at_lower_bound = best_t == search.t_lo;
  model.at_upper_bound = best_t == search.t_hi;
  return model;
}

ProbVector calibrate(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ValidationError("temperature must be a positive finite number");
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& z : scaled) z /= temperature;
  return softmax(scaled);
}

std::vector<ProbVector> calibrate_all(const Dataset& data, double temperature) {
  std::vector<ProbVector> out;
  out.reserve(data.size());
  for (const auto& r : data.records()) out.push_back(calibrate(r.logits, temperature));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> threshold_grid(double grid_step) {
  if (!(grid_step > 0.0 && grid_step <= 1.0)) throw ValidationError("grid step must lie in (0, 1]");
  const long n = std::lround(1.0 / grid_step);
  if (std::abs(static_cast<double>(n) * grid_step - 1.0) > 1e-9)
    throw ValidationError("grid step must divide 1 evenly");
  std::vector<double> grid(static_cast<std::size_t>(n) + 1);
  for (long i = 0; i <= n; ++i) grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(n);
  return grid;
}

namespace {

void require_binary(const TaskSchema& schema, const char* what) {
  if (!schema.is_binary()) {
    throw ValidationError(std::string(what) +
                          " needs a binary schema; multi-class tasks are decided by argmax and "
                          "confidence/margin routing");
  }
}

}  // namespace

const std::string& apply_threshold(double p_pos, double threshold, const TaskSchema& schema) {
  require_binary(schema, "apply_threshold");
  return p_pos >= threshold ? *schema.positive_label() : schema.negative_label();
}

double threshold_objective(std::span<const double> p_pos, std::span<const std::string> gold,
                           const TaskSchema& schema, double threshold) {
  require_binary(schema, "threshold_objective");
  if (p_pos.size() != gold.size()) throw ValidationError("probabilities and gold labels differ in length");
  const std::size_t pos = schema.positive_index();
  evalrep::ConfusionMatrix cm(2);
  for (std::size_t i = 0; i < p_pos.size(); ++i) {
    cm.add(schema.require_index(gold[i]), p_pos[i] >= threshold ? pos : 1 - pos);
  }
  return evalrep::macro_f1(cm);
}

ThresholdModel tune_threshold(std::span<const double> p_pos, std::span<const std::string> gold,
                              const TaskSchema& schema, double grid_step) {
  require_binary(schema, "tune_threshold");
  if (p_pos.empty()) throw ValidationError("tune_threshold: empty dev set");
  for (double p : p_pos) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("tune_threshold: probability outside [0,1]");
  }
  ThresholdModel model;
  model.grid_step = grid_step;
  model.dev_macro_f1 = -1.0;
  for (double t : threshold_grid(grid_step)) {
    const double f1 = threshold_objective(p_pos, gold, schema, t);
    if (f1 > model.dev_macro_f1 + kF1TieTolerance) {
      model.dev_macro_f1 = f1;
      model.threshold = t;
    }
  }
  model.outside_typical_range =
      model.threshold < kTypicalThresholdLow || model.threshold > kTypicalThresholdHigh;
  return model;
}

// ---------------------------------------------------------------------------

void CalibrationModel::ensure_applicable(const TaskSchema& schema) const {
  if (schema.task_id() != task_id) {
    throw ConfigError("calibration model was fitted for task " + std::string(to_string(task_id)) +
                      " (dev " + fitted_on + ") but the pipeline declares " +
                      std::string(to_string(schema.task_id())));
  }
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_optional(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

}  // namespace

json to_json(const CalibrationModel& m) {
  json j;
  j["task_id"] = std::string(to_string(m.task_id));
  j["temperature"] = m.temperature.temperature;
  j["threshold"] = m.threshold ? json(m.threshold->threshold) : json(nullptr);
  j["tau_conf"] = optional_number(m.tau_conf);
  j["tau_margin"] = optional_number(m.tau_margin);
  j["fitted_on"] = {{"task_id", std::string(to_string(m.task_id))}, {"fingerprint", m.fitted_on}};
  j["grid_step"] = m.threshold ? json(m.threshold->grid_step) : json(nullptr);
  j["bounds"] = {m.temperature.t_lo, m.temperature.t_hi};
  j["dev_nll_before"] = m.temperature.dev_nll_before;
  j["dev_nll_after"] = m.temperature.dev_nll_after;
  j["dev_macro_f1"] = m.threshold ? json(m.threshold->dev_macro_f1) : json(nullptr);
  j["flags"] = {{"temperature_at_lower_bound", m.temperature.at_lower_bound},
                {"temperature_at_upper_bound", m.temperature.at_upper_bound},
                {"single_class_dev", m.temperature.single_class_warning},
                {"threshold_outside_typical_range",
                 m.threshold ? m.threshold->outside_typical_range : false}};
  return j;
}

CalibrationModel calibration_model_from_json(const json& j) {
  try {
    CalibrationModel m;
    m.task_id = parse_task_id(j.at("task_id").get<std::string>());
    const auto& fitted = j.at("fitted_on");
    if (parse_task_id(fitted.at("task_id").get<std::string>()) != m.task_id)
      throw ConfigError("calibration model fitted_on.task_id disagrees with task_id");
    m.fitted_on = fitted.at("fingerprint").get<std::string>();
    m.temperature.temperature = j.at("temperature").get<double>();
    const auto& bounds = j.at("bounds");
    m.temperature.t_lo = bounds.at(0).get<double>();
    m.temperature.t_hi = bounds.at(1).get<double>();
    m.temperature.dev_nll_before = j.value("dev_nll_before", 0.0);
    m.temperature.dev_nll_after = j.value("dev_nll_after", 0.0);
    if (auto flags = j.find("flags"); flags != j.end()) {
      m.temperature.at_lower_bound = flags->value("temperature_at_lower_bound", false);
      m.temperature.at_upper_bound = flags->value("temperature_at_upper_bound", false);
      m.temperature.single_class_warning = flags->value("single_class_dev", false);
    }
    if (auto t = read_optional(j, "threshold")) {
      ThresholdModel tm;
      tm.threshold = *t;
      tm.grid_step = read_optional(j, "grid_step").value_or(0.001);
      tm.dev_macro_f1 = read_optional(j, "dev_macro_f1").value_or(0.0);
      tm.outside_typical_range = tm.threshold < kTypicalThresholdLow || tm.threshold > kTypicalThresholdHigh;
      m.threshold = tm;
    }
    m.tau_conf = read_optional(j, "tau_conf");
    m.tau_margin = read_optional(j, "tau_margin");
    if (!(m.temperature.temperature > 0.0)) throw ConfigError("calibration model temperature must be positive");
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed calibration model: ") + e.what());
  }
}

}  // namespace triage::calibrate
