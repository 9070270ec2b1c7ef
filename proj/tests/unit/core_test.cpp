#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "triage/core.hpp"
#include "triage/jsonl.hpp"

using namespace triage;

namespace {

LogitRecord rec(std::string id, std::optional<std::string> gold, std::vector<double> z) {
  return {std::move(id), "t", std::move(gold), std::move(z)};
}

}  // namespace

TEST(TaskSchema, BuiltinTaxonomies) {
  EXPECT_EQ(TaskSchema::builtin(TaskId::Exist11).class_labels(), (std::vector<std::string>{"NO", "YES"}));
  const auto a = TaskSchema::builtin(TaskId::EdosA);
  EXPECT_EQ(a.class_labels(), (std::vector<std::string>{"not sexist", "sexist"}));
  EXPECT_EQ(a.positive_index(), 1u);
  EXPECT_EQ(TaskSchema::builtin(TaskId::EdosB).num_classes(), 4u);
  EXPECT_EQ(TaskSchema::builtin(TaskId::EdosC).num_classes(), 11u);
  const auto c = TaskSchema::builtin(TaskId::EdosC);
  for (const auto& label : c.class_labels()) {
    ASSERT_TRUE(c.parent_map().count(label)) << label;
    EXPECT_TRUE(TaskSchema::builtin(TaskId::EdosB).contains(c.parent_map().at(label)));
  }
}

TEST(TaskSchema, TaskIdRoundTrip) {
  for (auto id : {TaskId::Exist11, TaskId::EdosA, TaskId::EdosB, TaskId::EdosC})
    EXPECT_EQ(parse_task_id(to_string(id)), id);
  EXPECT_THROW(parse_task_id("edos-d"), Error);
}

TEST(TaskSchema, RequireIndexRejectsUnknown) {
  const auto a = TaskSchema::builtin(TaskId::EdosA);
  EXPECT_EQ(a.require_index("sexist"), 1u);
  EXPECT_THROW(a.require_index("Sexist?"), ValidationError);
}

TEST(ProbVector, ValidatesSumAndRange) {
  EXPECT_NO_THROW(ProbVector({0.25, 0.75}));
  EXPECT_THROW(ProbVector({0.5, 0.6}), ValidationError);
  EXPECT_THROW(ProbVector({-0.1, 1.1}), ValidationError);
}

TEST(Softmax, StableForLargeLogits) {
  const std::vector<double> z = {1000.0, 1000.0};
  const auto p = softmax(z);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  const auto l = log_softmax(std::vector<double>{-1e4, 0.0});
  EXPECT_TRUE(std::isfinite(l[0]));
  EXPECT_NEAR(l[0], -1e4, 1e-9);
  EXPECT_THROW(softmax(std::vector<double>{}), ValidationError);
  EXPECT_THROW(softmax(std::vector<double>{0.0, std::numeric_limits<double>::quiet_NaN()}), ValidationError);
}

TEST(Softmax, ArgmaxTakesFirstMaximum) {
  EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0}), 1u);
  EXPECT_EQ(ProbVector({0.5, 0.5}).argmax(), 0u);
}

TEST(Dataset, ReportsEveryViolation) {
  const auto a = TaskSchema::builtin(TaskId::EdosA);
  std::vector<LogitRecord> records = {
      rec("x", "sexist", {0.0, 1.0}),
      rec("x", "sexist", {0.0, 1.0}),
      rec("y", "SEXIST", {0.0, 1.0}),
      rec("z", std::nullopt, {0.0, 1.0, 2.0}),
      rec("", std::nullopt, {0.0, std::numeric_limits<double>::infinity()}),
  };
  try {
    validate_dataset(records, a);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    std::vector<Violation::Kind> kinds;
    for (const auto& v : e.violations()) kinds.push_back(v.kind);
    using K = Violation::Kind;
    for (auto k : {K::DuplicateId, K::UnknownLabel, K::LogitArity, K::EmptyId, K::NonFiniteLogit})
      EXPECT_NE(std::find(kinds.begin(), kinds.end(), k), kinds.end()) << to_string(k);
    EXPECT_STREQ(e.kind(), "dataset");
  }
}

TEST(Dataset, FingerprintIsContentHash) {
  const auto a = TaskSchema::builtin(TaskId::EdosA);
  const auto d1 = validate_dataset({rec("a", "sexist", {0.0, 1.0})}, a);
  const auto d2 = validate_dataset({rec("a", "sexist", {0.0, 1.0})}, a);
  const auto d3 = validate_dataset({rec("a", "sexist", {0.0, 1.5})}, a);
  EXPECT_EQ(d1.fingerprint(), d2.fingerprint());
  EXPECT_NE(d1.fingerprint(), d3.fingerprint());
  EXPECT_EQ(d1.fingerprint().rfind("fnv1a64:", 0), 0u);
  EXPECT_EQ(d1.fingerprint().size(), 8u + 16u);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(LogitJsonl, RoundTripsAndSkipsBlankLines) {
  std::vector<LogitRecord> records = {rec("a", "sexist", {0.5, -0.25}), rec("b", std::nullopt, {1.0, 2.0})};
  std::stringstream ss;
  write_logit_jsonl(ss, records);
  std::stringstream with_blank(ss.str() + "\n\n");
  EXPECT_EQ(read_logit_jsonl(with_blank), records);
}

TEST(LogitJsonl, MalformedLineNamesLineNumber) {
  std::stringstream ss(R"({"instance_id":"a","text":"t","gold_label":null,"logits":[1,2]})"
                       "\n{not json}\n");
  try {
    read_logit_jsonl(ss);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
  }
  std::stringstream missing(R"({"instance_id":"a","text":"t"})");
  EXPECT_THROW(read_logit_jsonl(missing), ValidationError);
}
