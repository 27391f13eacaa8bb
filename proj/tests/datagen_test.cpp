// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mile/datagen.hpp"
#include "mile/errors.hpp"

namespace mile {
namespace {

namespace fs = std::filesystem;

const fs::path kTemplates = fs::path(MILE_SOURCE_DIR) / "data" / "templates.json";

QARecord open_rec(std::string q, std::string a, Attribute attr, std::string image = "img.ppm") {
  return {std::move(image), std::move(q), std::move(a), AnswerType::kOpen, attr};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Ten records over three attributes, with a duplicate answer and two closed
// records whose answers stay out of the pools.
std::vector<QARecord> fixture10() {
  return {
      open_rec("What modality is used to take this image?", "ct", Attribute::kModality),
      open_rec("What modality is this?", "mri", Attribute::kModality),
      open_rec("Which imaging modality?", "ct", Attribute::kModality),
      open_rec("Which organ is shown?", "liver", Attribute::kOrgan),
      open_rec("Which organ is abnormal?", "lung", Attribute::kOrgan),
      open_rec("What organ is this?", "heart", Attribute::kOrgan),
      open_rec("Where is the lesion?", "upper left", Attribute::kLocation),
      open_rec("Where is the mass located?", "center", Attribute::kLocation),
      {"img.ppm", "Is this a ct image?", "yes", AnswerType::kClosed, Attribute::kModality},
      {"img.ppm", "Is the liver healthy?", "no", AnswerType::kClosed, Attribute::kOrgan},
  };
}

TEST(Classify, KeywordRules) {
  const auto rules = AttributeRules::defaults();
  EXPECT_EQ(rules.classify("What modality is used to take this image?"), Attribute::kModality);
  EXPECT_EQ(rules.classify("Which organ is abnormal?"), Attribute::kOrgan);
  EXPECT_EQ(rules.classify("Where is the lesion located?"), Attribute::kLocation);
  EXPECT_EQ(rules.classify("Is this an axial slice?"), Attribute::kPlane);
  EXPECT_EQ(rules.classify("What shape is the lesion?"), Attribute::kShape);
  EXPECT_EQ(rules.classify("How big is the nodule?"), Attribute::kSize);
  EXPECT_EQ(rules.classify("Is there a fracture?"), Attribute::kPathology);
  EXPECT_EQ(rules.classify("What color is the text?"), Attribute::kOther);
  // Whole-word matching: "act" must not trigger the "ct" keyword.
  EXPECT_EQ(rules.classify("What is the exact count?"), Attribute::kOther);
}

TEST(Classify, ShippedRuleFileMatchesDefaults) {
  const auto shipped = AttributeRules::load(fs::path(MILE_SOURCE_DIR) / "data" / "attribute_rules.json");
  EXPECT_EQ(shipped.to_json(), AttributeRules::defaults().to_json());
}

TEST(Pools, SingleRecordAndDedup) {
  auto one = build_pools({open_rec("q", "a", Attribute::kSize)});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[Attribute::kSize], (std::vector<std::string>{"a"}));
  EXPECT_THROW(build_pools({}), InputError);
}

TEST(Pools, FixtureMatchesHandEnumeration) {
  auto pools = build_pools(fixture10());
  EXPECT_EQ(pools.size(), 3u);
  EXPECT_EQ(pools[Attribute::kModality], (std::vector<std::string>{"ct", "mri"}));
  EXPECT_EQ(pools[Attribute::kOrgan], (std::vector<std::string>{"heart", "liver", "lung"}));
  EXPECT_EQ(pools[Attribute::kLocation], (std::vector<std::string>{"center", "upper left"}));
}

TEST(Distractors, ForcedChoiceAndErrors) {
  AttributePool pools{{Attribute::kShape, {"a", "b", "c"}}};
  auto rng = record_rng(1, 0);
  auto d = sample_distractors(open_rec("q", "a", Attribute::kShape), pools, 2, rng);
  EXPECT_EQ(std::set<std::string>(d.begin(), d.end()), (std::set<std::string>{"b", "c"}));
  EXPECT_THROW(sample_distractors(open_rec("q", "a", Attribute::kShape), pools, -1, rng), InputError);
}

TEST(Distractors, NeverTheAnswerAndDeterministic) {
  AttributePool pools{{Attribute::kOrgan, {"a", "b", "c", "d", "e", "f", "g"}}};
  const auto rec = open_rec("q", "d", Attribute::kOrgan);
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto r1 = record_rng(s, 3), r2 = record_rng(s, 3);
    auto d1 = sample_distractors(rec, pools, 3, r1);
    EXPECT_EQ(d1, sample_distractors(rec, pools, 3, r2));
    EXPECT_EQ(d1.size(), 3u);
    EXPECT_EQ(std::count(d1.begin(), d1.end(), "d"), 0);
    EXPECT_EQ(std::set<std::string>(d1.begin(), d1.end()).size(), 3u);
  }
}

TEST(Distractors, SmallPoolPadsFromOther) {
  AttributePool pools{{Attribute::kSize, {"big", "small"}}, {Attribute::kOther, {"x", "y"}}};
  auto rng = record_rng(0, 0);
  auto d = sample_distractors(open_rec("q", "big", Attribute::kSize), pools, 3, rng);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d[0], "small");
  EXPECT_EQ(std::set<std::string>(d.begin() + 1, d.end()), (std::set<std::string>{"x", "y"}));
}

TEST(UniformIndex, CoversRangeRoughlyEvenly) {
  std::mt19937_64 rng(5);
  std::vector<int> hist(5, 0);
  for (int i = 0; i < 50000; ++i) ++hist[uniform_index(rng, 5)];
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
}

TEST(Render, ClosedHasNoOptionsOpenHasAll) {
  const auto templates = TemplateSet::load(kTemplates);
  EXPECT_GE(templates.closed.size(), 5u);
  EXPECT_GE(templates.opened.size(), 5u);
  auto rng = record_rng(3, 0);
  QARecord closed{"i", "Is this a ct image?", "yes", AnswerType::kClosed, Attribute::kModality};
  auto c = render_instruction(closed, {}, templates, rng);
  EXPECT_TRUE(c.options.empty());
  EXPECT_NE(c.instruction.find(closed.question), std::string::npos);
  EXPECT_EQ(c.instruction.find("A) "), std::string::npos);
  EXPECT_EQ(c.template_id.rfind("closed-", 0), 0u);

  auto o = render_instruction(open_rec("Which organ?", "liver", Attribute::kOrgan), {"lung", "heart", "brain"},
                              templates, rng);
  ASSERT_EQ(o.options.size(), 4u);
  EXPECT_EQ(std::count(o.options.begin(), o.options.end(), "liver"), 1);
  EXPECT_NE(o.instruction.find(render_options(o.options)), std::string::npos);
  EXPECT_EQ(o.template_id.rfind("opened-", 0), 0u);
}

TEST(Render, SameSeedSameRendering) {
  const auto templates = TemplateSet::load(kTemplates);
  const auto rec = open_rec("Which organ?", "liver", Attribute::kOrgan);
  auto r1 = record_rng(9, 4), r2 = record_rng(9, 4);
  auto a = render_instruction(rec, {"lung", "heart", "brain"}, templates, r1);
  auto b = render_instruction(rec, {"lung", "heart", "brain"}, templates, r2);
  EXPECT_EQ(a.instruction, b.instruction);
  EXPECT_EQ(a.options, b.options);
}

TEST(Render, OptionsAreLettered) {
  EXPECT_EQ(render_options({"x", "y z"}), "A) x B) y z");
  EXPECT_EQ(render_options({}), "");
}

TEST(Render, EmptyFamilyIsConfigError) {
  TemplateSet t;
  t.opened = {{"o", "{question} {options}"}};
  auto rng = record_rng(0, 0);
  QARecord closed{"i", "q?", "yes", AnswerType::kClosed, Attribute::kOther};
  EXPECT_THROW(render_instruction(closed, {}, t, rng), ConfigError);
}

TEST(Templates, ValidationRejectsBadFamilies) {
  TemplateSet t;
  t.closed = {{"c", "{question} {options}"}};
  t.opened = {{"o", "{question} {options}"}};
  EXPECT_THROW(t.validate(), ConfigError);
  t.closed = {{"c", "{question}"}};
  t.opened = {{"o", "{question}"}};
  EXPECT_THROW(t.validate(), ConfigError);
}

class DatasetTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mile_dg_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(DatasetTest, GenerateIsDeterministicAndValid) {
  const auto records = fixture10();
  const auto m = generate_dataset(records, kTemplates, 42, 3, dir_ / "a.jsonl");
  generate_dataset(records, kTemplates, 42, 3, dir_ / "b.jsonl");
  EXPECT_EQ(m.n_records, records.size());
  EXPECT_EQ(m.n_open, 8u);
  EXPECT_EQ(m.n_closed, 2u);
  EXPECT_EQ(m.templates_sha256, sha256_file(kTemplates));
  EXPECT_EQ(slurp(dir_ / "a.jsonl"), slurp(dir_ / "b.jsonl"));
  EXPECT_EQ(slurp(dir_ / "a.jsonl.manifest.json"), slurp(dir_ / "b.jsonl.manifest.json"));
  generate_dataset(records, kTemplates, 43, 3, dir_ / "c.jsonl");
  EXPECT_NE(slurp(dir_ / "a.jsonl"), slurp(dir_ / "c.jsonl"));

  const auto back = read_instruction_records(dir_ / "a.jsonl");
  ASSERT_EQ(back.size(), records.size());
  const auto report = validate_instructions(records, back, TemplateSet::load(kTemplates), 3);
  EXPECT_TRUE(report.ok()) << (report.failures.empty() ? "" : report.failures.front());
  EXPECT_EQ(report.passed, records.size());
}

TEST_F(DatasetTest, ValidatorCatchesTampering) {
  const auto records = fixture10();
  const auto templates = TemplateSet::load(kTemplates);
  auto gen = generate_instructions(records, templates, 1, 3);
  auto bad = gen;
  bad[0].answer = "pet";
  bad[3].options[0] = "kidney";  // not in the organ pool
  bad[8].options = {"yes", "no"};
  bad[6].instruction += " extra";
  const auto report = validate_instructions(records, bad, templates, 3);
  EXPECT_EQ(report.passed, records.size() - 4);
  EXPECT_EQ(report.failures.size(), 4u);
}

TEST_F(DatasetTest, QaRecordRoundTripAndClassification) {
  {
    std::ofstream os(dir_ / "in.jsonl");
    os << R"({"image":"a.ppm","question":"Which organ is shown?","answer":"liver","answer_type":"OPEN"})" << "\n\n";
    os << R"({"image":"b.ppm","question":"Is it big?","answer":"no","answer_type":"closed","attribute":"size"})" << "\n";
  }
  auto recs = read_qa_records(dir_ / "in.jsonl", AttributeRules::defaults());
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].attribute, Attribute::kOrgan);
  EXPECT_EQ(recs[1].answer_type, AnswerType::kClosed);
  write_qa_records(dir_ / "out.jsonl", recs);
  auto again = read_qa_records(dir_ / "out.jsonl", AttributeRules::defaults());
  EXPECT_EQ(again[0].answer, "liver");
  EXPECT_EQ(again[1].attribute, Attribute::kSize);
  { std::ofstream(dir_ / "bad.jsonl") << R"({"image":"a","question":"q"})" << "\n"; }
  EXPECT_THROW(read_qa_records(dir_ / "bad.jsonl", AttributeRules::defaults()), InputError);
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace mile
