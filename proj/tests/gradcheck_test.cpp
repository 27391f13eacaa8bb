// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "mile/gradcheck.hpp"

namespace mile {
namespace {

class GradcheckSuite : public ::testing::TestWithParam<std::string> {};

TEST_P(GradcheckSuite, MicroModelMatchesFiniteDifferences) {
  const auto report = gradcheck_model(ModelConfig::micro(), TuningPlan::parse(GetParam()));
  EXPECT_GT(report.scalars, 0u);
  EXPECT_TRUE(report.ok()) << report.summary();
}

INSTANTIATE_TEST_SUITE_P(Plans, GradcheckSuite,
                         ::testing::Values("T,T,T", "LoRA2,LoRA2,LoRA2", "IA3,IA3,IA3", "F,Prefix2,Prefix2",
                                           "F,PTv2(2),PTv2(2)"));

TEST(Gradcheck, DetectsCorruptedGradient) {
  // A tolerance of zero must flag rounding differences somewhere.
  GradcheckOptions o;
  o.tolerance = 0;
  const auto report = gradcheck_model(ModelConfig::micro(), TuningPlan::parse("F,F,IA3"), o);
  EXPECT_FALSE(report.ok());
}

TEST(Gradcheck, CoversEveryMicroParameter) {
  const auto report = gradcheck_model(ModelConfig::micro(), TuningPlan::parse("T,T,T"));
  MileModel<double> model(ModelConfig::micro());
  std::size_t total = 0;
  for (const auto& p : model.parameters()) total += p.tensor.numel();
  EXPECT_EQ(report.scalars, total);
}

}  // namespace
}  // namespace mile
