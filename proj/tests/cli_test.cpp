// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mile/cli.hpp"
#include "mile/datagen.hpp"

namespace mile {
namespace {

namespace fs = std::filesystem;

const fs::path kRoot = MILE_SOURCE_DIR;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  return {std::istreambuf_iterator<char>(is), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mile_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  fs::path dir_;
};

TEST_F(CliTest, UnknownSubcommandIsUsageError) {
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("train"), std::string::npos);  // usage lists the subcommands
}

TEST_F(CliTest, MissingSubcommandIsUsageError) { EXPECT_EQ(run({}).code, kExitUsage); }

TEST_F(CliTest, MalformedConfigIsUsageError) {
  const auto bad_key = write("bad_key.cfg", "[train]\nlearning_rate = 1\n");
  EXPECT_EQ(run({"count-params", "--config", bad_key.string()}).code, kExitUsage);
  const auto bad_value = write("bad_value.cfg", "[train]\nepochs = many\n");
  EXPECT_EQ(run({"train", "--config", bad_value.string()}).code, kExitUsage);
  const auto bad_plan = write("bad_plan.cfg", "[plan]\nplan = Prefix,F,F\n");
  EXPECT_EQ(run({"count-params", "--config", bad_plan.string()}).code, kExitUsage);
  EXPECT_EQ(run({"train", "--config", (dir_ / "missing.cfg").string()}).code, kExitUsage);
}

TEST_F(CliTest, BadOverrideIsUsageError) {
  EXPECT_EQ(run({"count-params", "--set", "nosection=1"}).code, kExitUsage);
  EXPECT_EQ(run({"count-params", "--plan", "F,Adapter,F"}).code, kExitUsage);
}

TEST_F(CliTest, CountParamsPaperCsv) {
  const auto r = run({"count-params", "--config", (kRoot / "configs" / "paper.cfg").string(), "--plan",
                      "F,LoRA4,LoRA4", "--csv"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(r.out.rfind("component,", 0), 0u);
  EXPECT_NE(r.out.find("all,360883770,0,589824,589824,589824,361473594,"), std::string::npos);
}

TEST_F(CliTest, CountParamsTable) {
  const auto r = run({"count-params", "--config", (kRoot / "configs" / "paper.cfg").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("0.163%"), std::string::npos);
}

TEST_F(CliTest, GenInstructWritesValidatedRecords) {
  const auto out = dir_ / "instruct.jsonl";
  const auto r = run({"gen-instruct", "--in", (kRoot / "data/toy/datagen/qa.jsonl").string(), "--out", out.string(),
                      "--seed", "11", "--distractors", "3", "--templates", (kRoot / "data/templates.json").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("validator: 200/200 passed"), std::string::npos) << r.out;
  EXPECT_EQ(sha256_file(out), sha256_file(kRoot / "data/toy/datagen/instruct.jsonl"));
  EXPECT_TRUE(fs::exists(out.string() + ".manifest.json"));
}

TEST_F(CliTest, GradcheckSubcommand) {
  EXPECT_EQ(run({"gradcheck", "--plan", "F,LoRA2,IA3"}).code, kExitOk);
  EXPECT_EQ(run({"gradcheck", "--plan", "F,LoRA2,IA3", "--tolerance", "0"}).code, kExitFailure);
}

TEST_F(CliTest, TrainThenEvalWritesCsvs) {
  const auto cfg = (kRoot / "configs" / "overfit.cfg").string();
  const auto out_dir = dir_ / "run";
  auto r = run({"train", "--config", cfg, "--set", "train.epochs=3", "--set", "train.out_dir=" + out_dir.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto loss = read_file(out_dir / "loss.csv");
  EXPECT_EQ(loss.rfind("step,stage,lr,loss\n", 0), 0u);
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 4);

  const auto eval_csv = dir_ / "eval.csv";
  r = run({"eval", "--config", cfg, "--checkpoint", (out_dir / "final.ckpt").string(), "--csv", eval_csv.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto csv = read_file(eval_csv);
  EXPECT_EQ(csv.rfind("n_open,n_closed,acc_open,acc_closed,acc_global\n6,10,", 0), 0u) << csv;
}

TEST_F(CliTest, EvalWithoutCheckpointFileFails) {
  const auto r = run({"eval", "--config", (kRoot / "configs" / "overfit.cfg").string(), "--checkpoint",
                      (dir_ / "none.ckpt").string()});
  EXPECT_NE(r.code, kExitOk);
}

}  // namespace
}  // namespace mile
