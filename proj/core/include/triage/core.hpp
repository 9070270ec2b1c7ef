#pragma once

// Task schemas, logit records and probability vectors shared by every module.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "triage/error.hpp"

namespace triage {

enum class TaskId { Exist11, EdosA, EdosB, EdosC, Custom };

std::string_view to_string(TaskId id) noexcept;
/// Accepts "exist-1.1", "edos-a", "edos-b", "edos-c", "custom".
TaskId parse_task_id(std::string_view text);

/// A label taxonomy. Labels are the canonical representation at module
/// boundaries; integer indices are positions in class_labels().
class TaskSchema {
 public:
  TaskSchema(TaskId id, std::vector<std::string> labels,
             std::optional<std::string> positive_label = std::nullopt,
             std::map<std::string, std::string> parent_map = {});

  /// The built-in taxonomy for one of the four benchmark tasks.
  static TaskSchema builtin(TaskId id);

  TaskId task_id() const noexcept { return id_; }
  std::size_t num_classes() const noexcept { return labels_.size(); }
  const std::vector<std::string>& class_labels() const noexcept { return labels_; }
  const std::string& label(std::size_t index) const { return labels_.at(index); }
  bool is_binary() const noexcept { return labels_.size() == 2; }
  const std::optional<std::string>& positive_label() const noexcept { return positive_; }
  /// Only meaningful for binary schemas.
  std::size_t positive_index() const;
  const std::string& negative_label() const;
  const std::map<std::string, std::string>& parent_map() const noexcept { return parents_; }

  std::optional<std::size_t> index_of(std::string_view label) const;
  bool contains(std::string_view label) const { return index_of(label).has_value(); }
  /// index_of that throws ValidationError for unknown labels.
  std::size_t require_index(std::string_view label) const;

  bool operator==(const TaskSchema& other) const = default;

 private:
  TaskId id_;
  std::vector<std::string> labels_;
  std::optional<std::string> positive_;
  std::map<std::string, std::string> parents_;
};

/// One instance exported by the specialist classifier.
struct LogitRecord {
  std::string instance_id;
  std::string text;
  std::optional<std::string> gold_label;
  std::vector<double> logits;

  bool operator==(const LogitRecord&) const = default;
};

/// A probability distribution over the schema's classes.
class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  /// Validates entries in [0,1] with sum within kSumTolerance of 1.
  explicit ProbVector(std::vector<double> probs);

  std::span<const double> values() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  /// Lowest index among maximal entries.
  std::size_t argmax() const noexcept;

 private:
  std::vector<double> probs_;
};

/// Max-subtracted softmax. Throws ValidationError on empty or non-finite input.
ProbVector softmax(std::span<const double> logits);

/// log(softmax(logits)), computed without forming the exponentials' ratio.
std::vector<double> log_softmax(std::span<const double> logits);

/// Index of the first maximal element; the vector must be non-empty.
std::size_t argmax(std::span<const double> values) noexcept;

/// A schema plus records that passed validate_dataset. Immutable.
class Dataset {
 public:
  const TaskSchema& schema() const noexcept { return schema_; }
  const std::vector<LogitRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const LogitRecord& operator[](std::size_t i) const { return records_[i]; }

  std::optional<std::size_t> gold_index(std::size_t i) const { return gold_[i]; }
  bool all_gold() const noexcept;
  const LogitRecord* find(std::string_view instance_id) const;

  /// Content hash over task id and every record ("fnv1a64:<16 hex digits>").
  std::string fingerprint() const;

 private:
  friend Dataset validate_dataset(std::vector<LogitRecord>, const TaskSchema&);
  Dataset(TaskSchema schema, std::vector<LogitRecord> records);

  TaskSchema schema_;
  std::vector<LogitRecord> records_;
  std::vector<std::optional<std::size_t>> gold_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Checks ids are unique and non-empty, logit arity equals C, logits are
/// finite and gold labels belong to the schema. Throws DatasetError listing
/// every violation.
Dataset validate_dataset(std::vector<LogitRecord> records, const TaskSchema& schema);

/// 64-bit FNV-1a, exposed for fingerprints elsewhere in the pipeline.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;
std::string hex64(std::uint64_t value);

}  // namespace triage
