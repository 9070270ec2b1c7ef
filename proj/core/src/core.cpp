#include "triage/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

namespace triage {

const char* to_string(Violation::Kind kind) noexcept {
  switch (kind) {
    case Violation::Kind::DuplicateId: return "duplicate_id";
    case Violation::Kind::LogitArity: return "logit_arity";
    case Violation::Kind::NonFiniteLogit: return "non_finite_logit";
    case Violation::Kind::UnknownLabel: return "unknown_label";
    case Violation::Kind::EmptyId: return "empty_id";
  }
  return "unknown";
}

namespace {

std::string describe(const std::vector<Violation>& violations) {
  std::ostringstream out;
  out << violations.size() << " dataset violation(s)";
  for (const auto& v : violations) {
    out << "; " << to_string(v.kind) << " [" << v.instance_id << "]: " << v.message;
  }
  return out.str();
}

}  // namespace

DatasetError::DatasetError(std::vector<Violation> violations)
    : ValidationError(describe(violations)), violations_(std::move(violations)) {}

std::string_view to_string(TaskId id) noexcept {
  switch (id) {
    case TaskId::Exist11: return "exist-1.1";
    case TaskId::EdosA: return "edos-a";
    case TaskId::EdosB: return "edos-b";
    case TaskId::EdosC: return "edos-c";
    case TaskId::Custom: return "custom";
  }
  return "custom";
}

TaskId parse_task_id(std::string_view text) {
  for (TaskId id : {TaskId::Exist11, TaskId::EdosA, TaskId::EdosB, TaskId::EdosC, TaskId::Custom}) {
    if (to_string(id) == text) return id;
  }
  throw ValidationError("unknown task id '" + std::string(text) +
                        "' (expected exist-1.1, edos-a, edos-b, edos-c or custom)");
}

// ---------------------------------------------------------------------------
// TaskSchema

TaskSchema::TaskSchema(TaskId id, std::vector<std::string> labels,
                       std::optional<std::string> positive_label,
                       std::map<std::string, std::string> parent_map)
    : id_(id),
      labels_(std::move(labels)),
      positive_(std::move(positive_label)),
      parents_(std::move(parent_map)) {
  const std::string tag(to_string(id_));
  if (labels_.size() < 2) throw ValidationError(tag + ": schema needs at least 2 classes");
  std::set<std::string> seen;
  for (const auto& l : labels_) {
    if (l.empty()) throw ValidationError(tag + ": empty class label");
    if (!seen.insert(l).second) throw ValidationError(tag + ": duplicate class label '" + l + "'");
  }
  if (is_binary()) {
    if (!positive_) throw ValidationError(tag + ": binary schema requires positive_label");
    if (!seen.contains(*positive_))
      throw ValidationError(tag + ": positive_label '" + *positive_ + "' is not a class label");
  } else if (positive_) {
    throw ValidationError(tag + ": positive_label is only defined for binary schemas");
  }
  switch (id_) {
    case TaskId::Exist11:
    case TaskId::EdosA:
      if (!is_binary()) throw ValidationError(tag + ": binary task requires exactly 2 labels");
      break;
    case TaskId::EdosB:
      if (labels_.size() != 4) throw ValidationError(tag + ": requires exactly 4 classes");
      break;
    case TaskId::EdosC: {
      if (labels_.size() != 11) throw ValidationError(tag + ": requires exactly 11 classes");
      const TaskSchema coarse = builtin(TaskId::EdosB);
      for (const auto& l : labels_) {
        auto it = parents_.find(l);
        if (it == parents_.end()) throw ValidationError(tag + ": no parent for '" + l + "'");
        if (!coarse.contains(it->second))
          throw ValidationError(tag + ": parent '" + it->second + "' is not an edos-b class");
      }
      break;
    }
    case TaskId::Custom:
      break;
  }
  for (const auto& [fine, coarse] : parents_) {
    if (!seen.contains(fine)) throw ValidationError(tag + ": parent_map key '" + fine + "' is not a class");
  }
}

TaskSchema TaskSchema::builtin(TaskId id) {
  switch (id) {
    case TaskId::Exist11:
      return TaskSchema(id, {"NO", "YES"}, "YES");
    case TaskId::EdosA:
      return TaskSchema(id, {"not sexist", "sexist"}, "sexist");
    case TaskId::EdosB:
      return TaskSchema(id, {"1. threats, plans to harm and incitement", "2. derogation",
                             "3. animosity", "4. prejudiced discussions"});
    case TaskId::EdosC: {
      const std::vector<std::pair<std::string, std::string>> fine = {
          {"1.1 threats of harm", "1. threats, plans to harm and incitement"},
          {"1.2 incitement and encouragement of harm", "1. threats, plans to harm and incitement"},
          {"2.1 descriptive attacks", "2. derogation"},
          {"2.2 aggressive and emotive attacks", "2. derogation"},
          {"2.3 dehumanising attacks & overt sexual objectification", "2. derogation"},
          {"3.1 casual use of gendered slurs, profanities, and insults", "3. animosity"},
          {"3.2 immutable gender differences and gender stereotypes", "3. animosity"},
          {"3.3 backhanded gendered compliments", "3. animosity"},
          {"3.4 condescending explanations or unwelcome advice", "3. animosity"},
          {"4.1 supporting mistreatment of individual women", "4. prejudiced discussions"},
          {"4.2 supporting systemic discrimination against women as a group",
           "4. prejudiced discussions"},
      };
      std::vector<std::string> labels;
      std::map<std::string, std::string> parents;
      for (const auto& [l, p] : fine) {
        labels.push_back(l);
        parents.emplace(l, p);
      }
      return TaskSchema(id, std::move(labels), std::nullopt, std::move(parents));
    }
    case TaskId::Custom:
      break;
  }
  throw ValidationError("custom schemas have no built-in taxonomy");
}

std::size_t TaskSchema::positive_index() const {
  if (!is_binary()) throw ValidationError("positive_index requires a binary schema");
  return *index_of(*positive_);
}

const std::string& TaskSchema::negative_label() const {
  return labels_[1 - positive_index()];
}

std::optional<std::size_t> TaskSchema::index_of(std::string_view label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels_.begin());
}

std::size_t TaskSchema::require_index(std::string_view label) const {
  if (auto i = index_of(label)) return *i;
  throw ValidationError("label '" + std::string(label) + "' is not in the " +
                        std::string(to_string(id_)) + " schema");
}

// ---------------------------------------------------------------------------
// ProbVector / softmax

ProbVector::ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw ValidationError("probability vector is empty");
  double sum = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0)
      throw ValidationError("probability entry outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) throw ValidationError("probabilities do not sum to 1");
}

std::size_t ProbVector::argmax() const noexcept { return triage::argmax(probs_); }

std::size_t argmax(std::span<const double> values) noexcept {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

namespace {

void require_finite(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("softmax of an empty vector");
  for (double z : logits) {
    if (!std::isfinite(z)) throw ValidationError("softmax input contains a non-finite value");
  }
}

}  // namespace

ProbVector softmax(std::span<const double> logits) {
  require_finite(logits);
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return ProbVector(std::move(out));
}

std::vector<double> log_softmax(std::span<const double> logits) {
  require_finite(logits);
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - top);
  const double log_norm = top + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_norm;
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(TaskSchema schema, std::vector<LogitRecord> records)
    : schema_(std::move(schema)), records_(std::move(records)) {
  gold_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    gold_.push_back(r.gold_label ? schema_.index_of(*r.gold_label) : std::nullopt);
    by_id_.emplace(r.instance_id, i);
  }
}

bool Dataset::all_gold() const noexcept {
  return std::all_of(gold_.begin(), gold_.end(), [](const auto& g) { return g.has_value(); });
}

const LogitRecord* Dataset::find(std::string_view instance_id) const {
  auto it = by_id_.find(std::string(instance_id));
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

std::string Dataset::fingerprint() const {
  std::uint64_t h = fnv1a64(to_string(schema_.task_id()));
  char buf[32];
  for (const auto& r : records_) {
    h = fnv1a64(r.instance_id, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
    h = fnv1a64(r.text, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
    h = fnv1a64(r.gold_label ? *r.gold_label : std::string("\x00null", 5), h);
    for (double z : r.logits) {
      const int n = std::snprintf(buf, sizeof buf, "|%.17g", z);
      h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(n)), h);
    }
    h = fnv1a64(std::string_view("\x1e", 1), h);
  }
  return "fnv1a64:" + hex64(h);
}

Dataset validate_dataset(std::vector<LogitRecord> records, const TaskSchema& schema) {
  std::vector<Violation> violations;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (r.instance_id.empty()) {
      violations.push_back({Violation::Kind::EmptyId, r.instance_id, "empty instance_id"});
    } else if (!seen.insert(r.instance_id).second) {
      violations.push_back({Violation::Kind::DuplicateId, r.instance_id, "duplicate instance_id"});
    }
    if (r.logits.size() != schema.num_classes()) {
      violations.push_back({Violation::Kind::LogitArity, r.instance_id,
                            "expected " + std::to_string(schema.num_classes()) + " logits, got " +
                                std::to_string(r.logits.size())});
    }
    if (std::any_of(r.logits.begin(), r.logits.end(), [](double z) { return !std::isfinite(z); })) {
      violations.push_back({Violation::Kind::NonFiniteLogit, r.instance_id, "non-finite logit"});
    }
    if (r.gold_label && !schema.contains(*r.gold_label)) {
      violations.push_back({Violation::Kind::UnknownLabel, r.instance_id,
                            "gold label '" + *r.gold_label + "' not in schema"});
    }
  }
  if (!violations.empty()) throw DatasetError(std::move(violations));
  return Dataset(schema, std::move(records));
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) noexcept {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace triage
