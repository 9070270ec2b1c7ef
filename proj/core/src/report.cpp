#include "triage/report.hpp"

#include <cstdio>
#include <map>
#include <set>

namespace triage::evalrep {

using nlohmann::json;

namespace {

/// Labels of `set` in gold order; throws on the first id out of place.
std::vector<std::string> align(const std::vector<Prediction>& gold, const std::vector<Prediction>& set,
                               const std::string& name, const TaskSchema& schema) {
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : set) {
    if (!by_id.emplace(p.instance_id, &p).second)
      throw ValidationError("predictions '" + name + "': duplicate instance '" + p.instance_id + "'");
  }
  std::vector<std::string> labels;
  labels.reserve(gold.size());
  for (const auto& g : gold) {
    auto it = by_id.find(g.instance_id);
    if (it == by_id.end())
      throw ValidationError("predictions '" + name + "' misaligned: no prediction for instance '" + g.instance_id + "'");
    if (!schema.contains(it->second->label))
      throw ValidationError("predictions '" + name + "': label '" + it->second->label + "' for instance '" +
                            g.instance_id + "' is not in the schema");
    labels.push_back(it->second->label);
  }
  if (set.size() != gold.size()) {
    std::set<std::string> gold_ids;
    for (const auto& g : gold) gold_ids.insert(g.instance_id);
    for (const auto& p : set) {
      if (!gold_ids.count(p.instance_id))
        throw ValidationError("predictions '" + name + "' misaligned: instance '" + p.instance_id +
                              "' has no gold label");
    }
  }
  return labels;
}

SystemScores score(const std::string& name, const TaskSchema& schema, const std::vector<std::string>& gold,
                   const std::vector<std::string>& predicted) {
  const auto cm = ConfusionMatrix::from_labels(schema, gold, predicted);
  SystemScores s;
  s.name = name;
  s.per_class = per_class_f1(cm);
  s.macro_f1 = macro_f1(s.per_class);
  return s;
}

json to_json(const SystemScores& s, const std::vector<std::string>& labels) {
  json per_class = json::array();
  for (std::size_t c = 0; c < s.per_class.size(); ++c) {
    const auto& cs = s.per_class[c];
    per_class.push_back({{"label", labels.at(c)},
                         {"precision", cs.precision},
                         {"recall", cs.recall},
                         {"f1", cs.f1},
                         {"support", cs.support},
                         {"undefined", cs.undefined}});
  }
  return json{{"name", s.name}, {"macro_f1", s.macro_f1}, {"per_class", per_class}};
}

json optional_number(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string signed_points(double gain) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.2f", gain * 100.0);
  // "-0.00" reads as a loss that did not happen.
  return std::string(buf) == "-0.00" ? "+0.00" : buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

RunReport build_report(const TaskSchema& schema, const std::vector<Prediction>& gold, const PredictionSet& baseline,
                       const std::vector<PredictionSet>& variants, std::span<const router::RoutingDecision> decisions) {
  if (gold.empty()) throw ValidationError("report needs at least one gold instance");
  std::vector<std::string> gold_labels;
  std::set<std::string> seen;
  for (const auto& g : gold) {
    if (!seen.insert(g.instance_id).second) throw ValidationError("duplicate gold instance '" + g.instance_id + "'");
    if (!schema.contains(g.label))
      throw ValidationError("gold label '" + g.label + "' for instance '" + g.instance_id + "' is not in the schema");
    gold_labels.push_back(g.label);
  }

  RunReport r;
  r.task_id = std::string(to_string(schema.task_id()));
  r.class_labels = schema.class_labels();
  r.n = static_cast<std::int64_t>(gold.size());
  const auto baseline_labels = align(gold, baseline.predictions, baseline.name, schema);
  r.baseline = score(baseline.name, schema, gold_labels, baseline_labels);
  std::vector<std::vector<std::string>> variant_labels;
  for (const auto& v : variants) {
    variant_labels.push_back(align(gold, v.predictions, v.name, schema));
    r.variants.push_back(score(v.name, schema, gold_labels, variant_labels.back()));
  }

  std::vector<std::int64_t> escalations_by_gold(schema.num_classes(), 0);
  if (!decisions.empty()) {
    std::map<std::string, const router::RoutingDecision*> by_id;
    for (const auto& d : decisions) {
      if (!by_id.emplace(d.instance_id, &d).second)
        throw ValidationError("duplicate routing decision for instance '" + d.instance_id + "'");
    }
    if (by_id.size() != gold.size()) {
      for (const auto& d : decisions) {
        if (!seen.count(d.instance_id))
          throw ValidationError("routing decisions misaligned: instance '" + d.instance_id + "' has no gold label");
      }
    }
    // The routed system is the first variant when present, else the baseline.
    const auto& final_labels = variant_labels.empty() ? baseline_labels : variant_labels.front();
    EscalationEffect e;
    std::int64_t accepted_correct = 0;
    std::int64_t esc_spec_correct = 0;
    std::int64_t esc_final_correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      auto it = by_id.find(gold[i].instance_id);
      if (it == by_id.end())
        throw ValidationError("routing decisions misaligned: no decision for instance '" + gold[i].instance_id + "'");
      const auto& d = *it->second;
      const bool spec_ok = d.specialist_label == gold_labels[i];
      const bool final_ok = final_labels[i] == gold_labels[i];
      if (d.escalated()) {
        ++e.escalated;
        ++escalations_by_gold[schema.require_index(gold_labels[i])];
        esc_spec_correct += spec_ok ? 1 : 0;
        esc_final_correct += final_ok ? 1 : 0;
        if (final_labels[i] != d.specialist_label) ++e.changed;
        if (!spec_ok && final_ok) ++e.corrected;
        if (spec_ok && !final_ok) ++e.broken;
      } else {
        ++e.accepted;
        accepted_correct += spec_ok ? 1 : 0;
      }
    }
    e.escalation_rate = static_cast<double>(e.escalated) / static_cast<double>(gold.size());
    if (e.accepted) e.accepted_accuracy = static_cast<double>(accepted_correct) / static_cast<double>(e.accepted);
    if (e.escalated) {
      e.escalated_specialist_accuracy = static_cast<double>(esc_spec_correct) / static_cast<double>(e.escalated);
      e.escalated_final_accuracy = static_cast<double>(esc_final_correct) / static_cast<double>(e.escalated);
    }
    r.escalation = e;
  }

  for (std::size_t c = 0; c < schema.num_classes(); ++c) {
    GainRow row;
    row.label = schema.label(c);
    row.n = r.baseline.per_class[c].support;
    row.baseline_f1 = r.baseline.per_class[c].f1;
    row.best_variant = r.baseline.name;
    row.routed_f1 = row.baseline_f1;
    bool first = true;
    for (const auto& v : r.variants) {
      const double f1 = v.per_class[c].f1;
      row.variant_f1.push_back(f1);
      if (first || f1 > row.routed_f1) {
        row.routed_f1 = f1;
        row.best_variant = v.name;
        first = false;
      }
    }
    row.gain = row.routed_f1 - row.baseline_f1;
    row.degraded = row.gain < 0.0;
    row.escalations = escalations_by_gold[c];
    r.classwise_gain.push_back(std::move(row));
  }
  return r;
}

json to_json(const RunReport& r) {
  auto scores_json = [&](const SystemScores& s) { return to_json(s, r.class_labels); };

  json variants = json::array();
  for (const auto& v : r.variants) variants.push_back(scores_json(v));
  json rows = json::array();
  for (const auto& row : r.classwise_gain) {
    json vf = json::object();
    for (std::size_t i = 0; i < r.variants.size(); ++i) vf[r.variants[i].name] = row.variant_f1[i];
    rows.push_back({{"label", row.label},
                    {"n", row.n},
                    {"baseline_f1", row.baseline_f1},
                    {"variant_f1", vf},
                    {"best_variant", row.best_variant},
                    {"routed_f1", row.routed_f1},
                    {"gain", row.gain},
                    {"gain_points", row.gain * 100.0},
                    {"degraded", row.degraded},
                    {"escalations", row.escalations}});
  }
  json escalation = nullptr;
  if (r.escalation) {
    const auto& e = *r.escalation;
    escalation = {{"accepted", e.accepted},
                  {"escalated", e.escalated},
                  {"total", e.accepted + e.escalated},
                  {"escalation_rate", e.escalation_rate},
                  {"accepted_accuracy", optional_number(e.accepted_accuracy)},
                  {"escalated_specialist_accuracy", optional_number(e.escalated_specialist_accuracy)},
                  {"escalated_final_accuracy", optional_number(e.escalated_final_accuracy)},
                  {"corrected", e.corrected},
                  {"broken", e.broken},
                  {"changed", e.changed},
                  {"net_effect", e.changed ? json(e.corrected - e.broken) : json(nullptr)}};
  }
  return json{{"task_id", r.task_id},
              {"n", r.n},
              {"baseline", scores_json(r.baseline)},
              {"variants", variants},
              {"macro_f1", r.variants.empty() ? r.baseline.macro_f1 : r.variants.front().macro_f1},
              {"classwise_gain", rows},
              {"accepted_vs_final", escalation},
              {"icm", nullptr},
              {"icm_norm", nullptr},
              {"icm_note", "ICM and ICM-Norm come from the official external evaluation tool"}};
}

std::string render_table(const RunReport& r) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"Category", "n", r.baseline.name};
  for (const auto& v : r.variants) header.push_back(v.name);
  header.push_back("Gain");
  cells.push_back(header);
  for (const auto& row : r.classwise_gain) {
    std::vector<std::string> line = {row.label, std::to_string(row.n), fixed(row.baseline_f1 * 100.0, 2)};
    for (double f : row.variant_f1) line.push_back(fixed(f * 100.0, 2));
    line.push_back(signed_points(row.gain) + (row.degraded ? " !" : ""));
    cells.push_back(std::move(line));
  }
  std::vector<std::string> macro = {"macro-F1", std::to_string(r.n), fixed(r.baseline.macro_f1 * 100.0, 2)};
  double best = r.baseline.macro_f1;
  bool first = true;
  for (const auto& v : r.variants) {
    macro.push_back(fixed(v.macro_f1 * 100.0, 2));
    if (first || v.macro_f1 > best) best = v.macro_f1;
    first = false;
  }
  macro.push_back(signed_points(best - r.baseline.macro_f1));
  cells.push_back(std::move(macro));

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::string out;
  auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      const std::string pad(width[i] - line[i].size(), ' ');
      out += i == 0 ? line[i] + pad : "  " + pad + line[i];
    }
    out += '\n';
  };
  emit(cells.front());
  std::size_t total = 0;
  for (std::size_t w : width) total += w + 2;
  out += std::string(total - 2, '-') + '\n';
  for (std::size_t i = 1; i + 1 < cells.size(); ++i) emit(cells[i]);
  out += std::string(total - 2, '-') + '\n';
  emit(cells.back());
  return out;
}

std::string render_csv(const RunReport& r) {
  std::string out = "category,n," + csv_field(r.baseline.name);
  for (const auto& v : r.variants) out += "," + csv_field(v.name);
  out += ",best_variant,gain_points,degraded,escalations\n";
  for (const auto& row : r.classwise_gain) {
    out += csv_field(row.label) + "," + std::to_string(row.n) + "," + fixed(row.baseline_f1, 6);
    for (double f : row.variant_f1) out += "," + fixed(f, 6);
    out += "," + csv_field(row.best_variant) + "," + fixed(row.gain * 100.0, 4) + "," +
           (row.degraded ? "true" : "false") + "," + std::to_string(row.escalations) + "\n";
  }
  return out;
}

}  // namespace triage::evalrep
