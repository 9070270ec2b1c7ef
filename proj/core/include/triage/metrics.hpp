#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "triage/core.hpp"

namespace triage::evalrep {

/// C x C counts, rows = gold, columns = predicted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);
  /// Label-keyed construction; both sequences must be aligned and in-schema.
  static ConfusionMatrix from_labels(const TaskSchema& schema, std::span<const std::string> gold,
                                     std::span<const std::string> predicted);

  void add(std::size_t gold, std::size_t predicted, std::int64_t count = 1);
  std::int64_t at(std::size_t gold, std::size_t predicted) const { return counts_[gold * n_ + predicted]; }
  std::size_t num_classes() const noexcept { return n_; }
  std::int64_t total() const noexcept { return total_; }
  std::int64_t gold_support(std::size_t c) const;
  std::int64_t predicted_count(std::size_t c) const;

 private:
  std::size_t n_;
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  /// Precision + recall was 0 (including a class absent from gold and
  /// predictions); F1 is reported as 0.
  bool undefined = false;
};

/// One score per class, in class index order.
std::vector<ClassScore> per_class_f1(const ConfusionMatrix& cm);

/// Unweighted mean over all classes, flagged zero classes included.
double macro_f1(std::span<const ClassScore> scores);
double macro_f1(std::span<const double> f1_values);
double macro_f1(const ConfusionMatrix& cm);

}  // namespace triage::evalrep
