#include "triage/metrics.hpp"

#include <numeric>

namespace triage::evalrep {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : n_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw ValidationError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_labels(const TaskSchema& schema, std::span<const std::string> gold,
                                             std::span<const std::string> predicted) {
  if (gold.size() != predicted.size()) throw ValidationError("gold and predicted sequences differ in length");
  ConfusionMatrix cm(schema.num_classes());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    cm.add(schema.require_index(gold[i]), schema.require_index(predicted[i]));
  }
  return cm;
}

void ConfusionMatrix::add(std::size_t gold, std::size_t predicted, std::int64_t count) {
  if (gold >= n_ || predicted >= n_) throw ValidationError("confusion matrix index out of range");
  if (count < 0) throw ValidationError("confusion matrix counts must be non-negative");
  counts_[gold * n_ + predicted] += count;
  total_ += count;
}

std::int64_t ConfusionMatrix::gold_support(std::size_t c) const {
  std::int64_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(c, p);
  return s;
}

std::int64_t ConfusionMatrix::predicted_count(std::size_t c) const {
  std::int64_t s = 0;
  for (std::size_t g = 0; g < n_; ++g) s += at(g, c);
  return s;
}

std::vector<ClassScore> per_class_f1(const ConfusionMatrix& cm) {
  std::vector<ClassScore> out(cm.num_classes());
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const auto tp = static_cast<double>(cm.at(c, c));
    const auto predicted = static_cast<double>(cm.predicted_count(c));
    const auto support = cm.gold_support(c);
    ClassScore& s = out[c];
    s.support = support;
    s.precision = predicted > 0 ? tp / predicted : 0.0;
    s.recall = support > 0 ? tp / static_cast<double>(support) : 0.0;
    if (s.precision + s.recall == 0.0) {
      s.f1 = 0.0;
      s.undefined = true;
    } else {
      s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    }
  }
  return out;
}

double macro_f1(std::span<const double> f1_values) {
  if (f1_values.empty()) throw ValidationError("macro-F1 of an empty class set");
  return std::accumulate(f1_values.begin(), f1_values.end(), 0.0) / static_cast<double>(f1_values.size());
}

double macro_f1(std::span<const ClassScore> scores) {
  std::vector<double> f1(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) f1[i] = scores[i].f1;
  return macro_f1(f1);
}

double macro_f1(const ConfusionMatrix& cm) {
  const auto scores = per_class_f1(cm);
  return macro_f1(std::span<const ClassScore>(scores));
}

}  // namespace triage::evalrep
