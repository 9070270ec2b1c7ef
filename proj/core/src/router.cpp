#include "triage/router.hpp"

#include <algorithm>
#include <cmath>

#include "triage/calibrate.hpp"
#include "triage/metrics.hpp"

namespace triage::router {

using nlohmann::json;

std::string_view to_string(Mode mode) noexcept {
  return mode == Mode::Binary ? "binary" : "multiclass";
}

Mode mode_for(const TaskSchema& schema) noexcept {
  return schema.is_binary() ? Mode::Binary : Mode::Multiclass;
}

RoutingPolicy RoutingPolicy::binary(double tau_conf) {
  RoutingPolicy p{tau_conf, std::nullopt, Mode::Binary};
  p.validate();
  return p;
}

RoutingPolicy RoutingPolicy::multiclass(double tau_conf, double tau_margin) {
  RoutingPolicy p{tau_conf, tau_margin, Mode::Multiclass};
  p.validate();
  return p;
}

void RoutingPolicy::validate() const {
  if (!(tau_conf >= 0.0 && tau_conf <= 1.0)) throw ValidationError("tau_conf must lie in [0, 1]");
  if (mode == Mode::Binary) {
    if (tau_margin) throw ValidationError("binary routing ignores tau_margin; leave it null");
  } else {
    if (!tau_margin) throw ValidationError("multiclass routing requires tau_margin");
    if (!(*tau_margin >= 0.0 && *tau_margin <= 1.0)) throw ValidationError("tau_margin must lie in [0, 1]");
  }
}

double confidence(const ProbVector& p) {
  return *std::max_element(p.values().begin(), p.values().end());
}

double margin(const ProbVector& p) {
  if (p.size() < 2) throw ValidationError("margin needs at least two classes");
  double first = -1.0;
  double second = -1.0;
  for (double v : p.values()) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return first - second;
}

bool should_escalate(double c, double m, const RoutingPolicy& policy) {
  if (policy.mode == Mode::Binary) return c < policy.tau_conf;
  return c < policy.tau_conf && m < *policy.tau_margin;
}

RoutingDecision decide(std::string instance_id, const ProbVector& p, const TaskSchema& schema,
                       const RoutingPolicy& policy, std::optional<double> binary_threshold) {
  if (p.size() != schema.num_classes()) throw ValidationError("probability arity differs from schema");
  if (mode_for(schema) != policy.mode)
    throw ValidationError(std::string("routing mode ") + std::string(to_string(policy.mode)) +
                          " does not match a " + std::to_string(schema.num_classes()) + "-class schema");
  RoutingDecision d;
  d.instance_id = std::move(instance_id);
  d.confidence = confidence(p);
  d.margin = margin(p);
  if (schema.is_binary() && binary_threshold) {
    d.specialist_label = calibrate::apply_threshold(p[schema.positive_index()], *binary_threshold, schema);
  } else {
    d.specialist_label = schema.label(p.argmax());
  }
  d.outcome = should_escalate(d.confidence, d.margin, policy) ? Outcome::Escalated : Outcome::Accepted;
  return d;
}

json to_json(const RoutingDecision& d) {
  return json{{"instance_id", d.instance_id},
              {"specialist_label", d.specialist_label},
              {"confidence", d.confidence},
              {"margin", d.margin},
              {"outcome", d.escalated() ? "escalated" : "accepted"}};
}

RoutingDecision routing_decision_from_json(const json& j) {
  try {
    RoutingDecision d;
    d.instance_id = j.at("instance_id").get<std::string>();
    d.specialist_label = j.at("specialist_label").get<std::string>();
    d.confidence = j.at("confidence").get<double>();
    d.margin = j.at("margin").get<double>();
    const auto outcome = j.at("outcome").get<std::string>();
    if (outcome == "escalated") {
      d.outcome = Outcome::Escalated;
    } else if (outcome == "accepted") {
      d.outcome = Outcome::Accepted;
    } else {
      throw ValidationError("unknown routing outcome '" + outcome + "'");
    }
    return d;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed routing decision: ") + e.what());
  }
}

json routing_summary(std::span<const RoutingDecision> decisions, const TaskSchema& schema,
                     const std::map<std::string, std::string>& gold_by_id) {
  std::size_t escalated = 0;
  std::size_t accepted_with_gold = 0;
  std::size_t accepted_correct = 0;
  json by_specialist = json::object();
  json by_gold = json::object();
  for (const auto& l : schema.class_labels()) {
    by_specialist[l] = 0;
    by_gold[l] = 0;
  }
  for (const auto& d : decisions) {
    auto gold = gold_by_id.find(d.instance_id);
    if (d.escalated()) {
      ++escalated;
      by_specialist[d.specialist_label] = by_specialist[d.specialist_label].get<int>() + 1;
      if (gold != gold_by_id.end()) by_gold[gold->second] = by_gold[gold->second].get<int>() + 1;
    } else if (gold != gold_by_id.end()) {
      ++accepted_with_gold;
      if (gold->second == d.specialist_label) ++accepted_correct;
    }
  }
  const std::size_t total = decisions.size();
  json out;
  out["total"] = total;
  out["accepted"] = total - escalated;
  out["escalated"] = escalated;
  out["escalation_rate"] = total ? static_cast<double>(escalated) / static_cast<double>(total) : 0.0;
  out["accepted_accuracy"] = accepted_with_gold
                                 ? json(static_cast<double>(accepted_correct) / static_cast<double>(accepted_with_gold))
                                 : json(nullptr);
  out["per_class_escalations"] = by_specialist;
  out["per_gold_class_escalations"] = gold_by_id.empty() ? json(nullptr) : by_gold;
  return out;
}

// ---------------------------------------------------------------------------

std::string CachedOutcomes::outcome(const DevItem& item) const {
  auto it = labels_.find(item.instance_id);
  if (it == labels_.end())
    throw ValidationError("no cached judgment outcome for dev instance '" + item.instance_id + "'");
  return it->second;
}

ProxyOutcomes::ProxyOutcomes(const TaskSchema& schema, double q, std::uint64_t seed)
    : schema_(schema), q_(q), seed_(seed) {
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("proxy accuracy q must lie in [0, 1]");
}

std::string ProxyOutcomes::outcome(const DevItem& item) const {
  const std::uint64_t h = fnv1a64(item.instance_id, fnv1a64(hex64(seed_)));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < q_) return item.gold_label;
  const std::size_t gold = schema_.require_index(item.gold_label);
  std::size_t best = gold == 0 ? 1 : 0;
  for (std::size_t c = 0; c < item.probs.size(); ++c) {
    if (c != gold && item.probs[c] > item.probs[best]) best = c;
  }
  return schema_.label(best);
}

std::string ProxyOutcomes::describe() const {
  return "proxy(q=" + std::to_string(q_) + ", seed=" + std::to_string(seed_) + ")";
}

RoutingGrid RoutingGrid::deciles() {
  RoutingGrid g;
  for (int i = 0; i <= 10; ++i) {
    g.tau_conf.push_back(i / 10.0);
    g.tau_margin.push_back(i / 10.0);
  }
  return g;
}

RoutingTuneResult tune_routing(std::span<const DevItem> dev, const TaskSchema& schema, Mode mode,
                               const RoutingGrid& grid, const EscalationOutcomeProvider& provider,
                               const TuneObjective& objective) {
  if (dev.empty()) throw ValidationError("tune_routing: empty dev set");
  if (grid.tau_conf.empty()) throw ConfigError("tune_routing: empty tau_conf grid");
  if (mode == Mode::Multiclass && grid.tau_margin.empty())
    throw ConfigError("tune_routing: empty tau_margin grid");
  if (mode_for(schema) != mode) throw ValidationError("tune_routing: mode does not match schema arity");

  const std::size_t n = dev.size();
  std::vector<std::size_t> gold(n), specialist(n), cej(n);
  std::vector<double> conf(n), marg(n);
  for (std::size_t i = 0; i < n; ++i) {
    gold[i] = schema.require_index(dev[i].gold_label);
    specialist[i] = schema.require_index(dev[i].specialist_label);
    cej[i] = schema.require_index(provider.outcome(dev[i]));
    conf[i] = confidence(dev[i].probs);
    marg[i] = margin(dev[i].probs);
  }

  std::vector<std::optional<double>> margins;
  if (mode == Mode::Binary) {
    margins.push_back(std::nullopt);
  } else {
    margins.assign(grid.tau_margin.begin(), grid.tau_margin.end());
  }

  RoutingTuneResult result;
  bool have_best = false;
  long long best_f1_key = 0;
  double best_score = 0.0;
  for (double tc : grid.tau_conf) {
    for (const auto& tm : margins) {
      RoutingPolicy policy{tc, tm, mode};
      policy.validate();
      evalrep::ConfusionMatrix cm(schema.num_classes());
      std::size_t escalated = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool esc = should_escalate(conf[i], marg[i], policy);
        escalated += esc ? 1 : 0;
        cm.add(gold[i], esc ? cej[i] : specialist[i]);
      }
      SurfaceCell cell{tc, tm, evalrep::macro_f1(cm), static_cast<double>(escalated) / static_cast<double>(n)};
      result.surface.push_back(cell);

      bool better = false;
      if (objective.kind == TuneObjective::Kind::Lexicographic) {
        const long long key = std::llround(cell.macro_f1 * kRoutingF1Scale);
        better = !have_best || key > best_f1_key ||
                 (key == best_f1_key && cell.escalation_rate < result.escalation_rate);
        if (better) best_f1_key = key;
      } else {
        const double score = cell.macro_f1 - objective.lambda * cell.escalation_rate;
        better = !have_best || score > best_score;
        if (better) best_score = score;
      }
      if (better) {
        have_best = true;
        result.policy = policy;
        result.macro_f1 = cell.macro_f1;
        result.escalation_rate = cell.escalation_rate;
      }
    }
  }
  return result;
}

json to_json(const RoutingTuneResult& r) {
  json surface = json::array();
  for (const auto& c : r.surface) {
    surface.push_back({{"tau_conf", c.tau_conf},
                       {"tau_margin", c.tau_margin ? json(*c.tau_margin) : json(nullptr)},
                       {"macro_f1", c.macro_f1},
                       {"escalation_rate", c.escalation_rate}});
  }
  return json{{"mode", std::string(to_string(r.policy.mode))},
              {"tau_conf", r.policy.tau_conf},
              {"tau_margin", r.policy.tau_margin ? json(*r.policy.tau_margin) : json(nullptr)},
              {"macro_f1", r.macro_f1},
              {"escalation_rate", r.escalation_rate},
              {"surface", surface}};
}

}  // namespace triage::router
