// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "mile/tuning.hpp"
#include "test_support.hpp"

namespace mile {
namespace {

ParamReport paper_report(const std::string& plan, Ia3Sites sites = {}) {
  MileModel<float> model(ModelConfig::paper(), 0, MileModel<float>::Storage::kShapeOnly);
  apply_plan(model, TuningPlan::parse(plan), 0, sites);
  return count_params(model);
}

TEST(TuneMode, Parse) {
  EXPECT_EQ(TuneMode::parse("F"), TuneMode::freeze());
  EXPECT_EQ(TuneMode::parse("t"), TuneMode::full());
  EXPECT_EQ(TuneMode::parse("LoRA"), TuneMode::lora(4));
  EXPECT_EQ(TuneMode::parse("lora(8)"), TuneMode::lora(8));
  EXPECT_EQ(TuneMode::parse("IA3"), TuneMode::ia3());
  EXPECT_EQ(TuneMode::parse("PTv2(10)"), TuneMode::ptv2(10));
  EXPECT_EQ(TuneMode::parse("Prefix"), TuneMode::prefix(16));
  EXPECT_THROW(TuneMode::parse("Adapter"), ConfigError);
  EXPECT_THROW(TuneMode::parse("LoRA0"), ConfigError);
  EXPECT_THROW(TuneMode::parse("F3"), ConfigError);
}

TEST(TuningPlan, ParseAndValidate) {
  auto plan = TuningPlan::parse("F, LoRA4, PTv2(10)");
  EXPECT_EQ(plan.str(), "F,LoRA4,PTv2(10)");
  EXPECT_THROW(TuningPlan::parse("F,T"), ConfigError);
  EXPECT_THROW(TuningPlan::parse("Prefix,F,F"), ConfigError);
  EXPECT_THROW(TuningPlan::parse("PTv2(10),F,F"), ConfigError);
}

TEST(Accounting, PaperScaleBaseTotals) {
  auto r = paper_report("F,F,F");
  EXPECT_EQ(r[Component::kVit].base_total, 86339328u);
  EXPECT_EQ(r[Component::kJtm].base_total, 137256960u);
  EXPECT_EQ(r[Component::kDecoder].base_total, 137287482u);
  EXPECT_EQ(r.trainable(), 0u);
}

TEST(Accounting, PaperScaleLora) {
  auto r4 = paper_report("F,LoRA4,LoRA4");
  EXPECT_EQ(r4.trainable(), 589824u);
  EXPECT_NEAR(r4.fraction_percent(), 0.163, 0.005);
  auto r8 = paper_report("F,LoRA8,LoRA8");
  EXPECT_EQ(r8.trainable(), 2 * 589824u);
  EXPECT_NEAR(r8.fraction_percent(), 0.325, 0.005);
}

TEST(Accounting, PaperScaleFullRows) {
  EXPECT_NEAR(paper_report("T,T,LoRA4").fraction_percent(), 61.887, 0.5);
  EXPECT_NEAR(paper_report("F,T,LoRA4").fraction_percent(), 38.022, 0.5);
  EXPECT_NEAR(paper_report("T,LoRA4,LoRA4").fraction_percent(), 24.009, 0.5);
  auto all = paper_report("T,T,T");
  EXPECT_EQ(all.trainable(), all.total());
}

TEST(Accounting, PaperScalePrefixRows) {
  EXPECT_NEAR(paper_report("F,F,PTv2(10)").fraction_percent(), 0.051, 0.01);
  EXPECT_NEAR(paper_report("F,PTv2(10),PTv2(10)").fraction_percent(), 0.102, 0.01);
  EXPECT_NEAR(paper_report("F,F,Prefix16").fraction_percent(), 3.926, 0.1);
  EXPECT_NEAR(paper_report("F,Prefix16,Prefix16").fraction_percent(), 7.556, 0.2);
}

TEST(Accounting, PaperScaleIa3) {
  EXPECT_EQ(paper_report("F,IA3,IA3").peft_trainable(),
            2u * 12 * (2 * 2 * 768 + 3072));
  EXPECT_EQ(paper_report("F,IA3,IA3", Ia3Sites{.cross_attention = false}).peft_trainable(),
            2u * 12 * (2 * 768 + 3072));
}

TEST(Accounting, ReportFormats) {
  auto r = paper_report("F,LoRA4,LoRA4");
  const auto csv = r.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "component,base_total,base_trainable,peft_total,peft_trainable,trainable,total,"
            "fraction_percent");
  EXPECT_NE(csv.find("all,360883770,0,589824,589824,589824,361473594,"), std::string::npos);
  EXPECT_NE(r.table("F,LoRA4,LoRA4").find("0.163%"), std::string::npos);
}

TEST(ApplyPlan, TwiceIsContractError) {
  MileModel<float> model(ModelConfig::toy(), 1);
  apply_plan(model, TuningPlan::parse("F,F,T"));
  EXPECT_THROW(apply_plan(model, TuningPlan::parse("F,F,T")), ContractError);
}

TEST(ApplyPlan, TrainableFlagsFollowModes) {
  MileModel<float> model(ModelConfig::toy(), 1);
  apply_plan(model, TuningPlan::parse("T,F,LoRA2"));
  for (const auto& p : model.base_parameters(Component::kVit)) EXPECT_TRUE(p.tensor.trainable());
  for (const auto& p : model.base_parameters(Component::kJtm)) EXPECT_FALSE(p.tensor.trainable());
  for (const auto& p : model.base_parameters(Component::kDecoder)) EXPECT_FALSE(p.tensor.trainable());
  for (const auto& p : model.peft_parameters(Component::kDecoder)) EXPECT_TRUE(p.tensor.trainable());
}

class MaskingTest : public ::testing::TestWithParam<std::string> {};

TEST_P(MaskingTest, FreezeContractHolds) {
  auto cfg = ModelConfig::toy();
  cfg.hidden_dim = 16;
  cfg.ffn_dim = 32;
  cfg.image_size = 16;
  cfg.prefix_hidden = 16;
  MileModel<float> model(cfg, 11);
  apply_plan(model, TuningPlan::parse(GetParam()), 5);
  std::vector<LmExample<float>> data;
  for (std::uint64_t i = 0; i < 3; ++i) data.push_back(testing::random_example<float>(cfg, 50 + i));
  auto report = verify_masking(model, 10, std::span<const LmExample<float>>(data),
                               AdamWOptions{.base_lr = 1e-3});
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(report.losses.size(), 10u);
}

INSTANTIATE_TEST_SUITE_P(Plans, MaskingTest,
                         ::testing::Values("F,F,F", "T,T,T", "F,LoRA4,LoRA4", "T,F,IA3",
                                           "F,PTv2(3),Prefix4", "LoRA2,T,F", "IA3,Prefix2,T"),
                         [](const auto& info) {
                           std::string s;
                           for (char ch : info.param) s += std::isalnum((unsigned char)ch) ? ch : '_';
                           return s;
                         });

TEST(Masking, DetectsAFrozenTensorThatMoves) {
  MaskingReport r;
  r.frozen_modified.push_back("dec/lm_head/weight");
  EXPECT_FALSE(r.ok());
  try {
    r.check();
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("dec/lm_head/weight"), std::string::npos);
  }
}

}  // namespace
}  // namespace mile
