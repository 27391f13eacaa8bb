// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance run: prints one PASS/FAIL line per criterion and
// exits 0 only when every gated criterion passes.

#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "mile/cli.hpp"
#include "mile/config.hpp"
#include "mile/datagen.hpp"
#include "mile/gradcheck.hpp"
#include "mile/peft.hpp"
#include "mile/train.hpp"
#include "mile/tuning.hpp"

namespace fs = std::filesystem;
using namespace mile;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

LmExample<float> random_example(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  std::vector<float> v(cfg.image_size * cfg.image_size * cfg.channels);
  for (auto& x : v) x = static_cast<float>(pixel(rng));
  LmExample<float> ex;
  ex.pixels = Tensor<float>::from({cfg.image_size, cfg.image_size, cfg.channels}, std::move(v));
  for (int i = 0; i < 6; ++i) ex.question.push_back(static_cast<TokenId>(rng() % (cfg.vocab_size - 4)));
  for (int i = 0; i < 3; ++i) ex.answer.push_back(static_cast<TokenId>(rng() % (cfg.vocab_size - 4)));
  ex.answer.push_back(cfg.eos_id());
  return ex;
}

Tensor<float> logits_of(const MileModel<float>& m, const LmExample<float>& ex) {
  return m.decode_text(m.encode_jtm(ex.question, m.encode_image(ex.pixels)), ex.answer);
}

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

std::string fmt(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

// C1 ------------------------------------------------------------------------

ParamReport paper_report(const std::string& plan, Ia3Sites sites = {}) {
  MileModel<float> model(ModelConfig::paper(), 0, MileModel<float>::Storage::kShapeOnly);
  apply_plan(model, TuningPlan::parse(plan), 0, sites);
  return count_params(model);
}

Outcome c1_accounting() {
  struct Row {
    std::string plan;
    double target;
    double tol;
    std::uint64_t trainable = 0;  // exact count, 0 = not gated
  };
  const std::vector<Row> rows = {
      {"F,LoRA4,LoRA4", 0.163, 0.005, 589824},
      {"F,LoRA8,LoRA8", 0.325, 0.005, 2 * 589824},
      {"T,T,LoRA4", 61.887, 0.5},
      {"F,T,LoRA4", 38.022, 0.5},
      {"T,LoRA4,LoRA4", 24.009, 0.5},
      {"F,F,PTv2(10)", 0.051, 0.01},
      {"F,PTv2(10),PTv2(10)", 0.102, 0.01},
      {"F,F,Prefix16", 3.926, 0.1},
      {"F,Prefix16,Prefix16", 7.556, 0.2},
  };
  bool ok = true;
  std::ostringstream detail;
  for (const auto& row : rows) {
    const auto r = paper_report(row.plan);
    const double pct = r.fraction_percent();
    bool row_ok = std::abs(pct - row.target) <= row.tol;
    if (row.trainable != 0) row_ok = row_ok && r.trainable() == row.trainable;
    ok = ok && row_ok;
    detail << "\n    " << (row_ok ? "ok  " : "BAD ") << std::left << std::setw(22) << row.plan << std::right
           << std::setw(11) << r.trainable() << " trainable  " << fmt(pct, 3) << "% (target " << row.target
           << " +/- " << row.tol << ")";
  }
  // Rows whose configuration is under-specified: reported, not gated.
  const std::vector<std::pair<std::string, Ia3Sites>> informative = {
      {"LoRA4,LoRA4,LoRA4", {}},
      {"F,IA3,IA3", Ia3Sites{.cross_attention = true}},
      {"F,IA3,IA3", Ia3Sites{.cross_attention = false}},
      {"F,F,IA3", Ia3Sites{.cross_attention = true}},
  };
  for (const auto& [plan, sites] : informative) {
    const auto r = paper_report(plan, sites);
    detail << "\n    info " << std::left << std::setw(22)
           << (plan + (plan.find("IA3") != std::string::npos
                           ? (sites.cross_attention ? " +xattn" : " -xattn")
                           : ""))
           << std::right << std::setw(11) << r.trainable() << " trainable  " << fmt(r.fraction_percent(), 3)
           << "% (not gated)";
  }
  return {ok, detail.str()};
}

// C2 ------------------------------------------------------------------------

Outcome c2_identity() {
  const auto cfg = ModelConfig::toy();
  std::size_t failures = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto ex = random_example(cfg, 10'000 + seed);
    MileModel<float> lora(cfg, seed);
    const auto before = logits_of(lora, ex);
    auto ia3 = lora.clone(), prefix = lora.clone(), ptv2 = lora.clone();
    for (auto c : {Component::kVit, Component::kJtm, Component::kDecoder}) {
      attach_lora(lora, c, 4, seed);
      attach_ia3(ia3, c);
    }
    for (auto c : {Component::kJtm, Component::kDecoder}) {
      attach_prefix(prefix, c, 0, seed);
      attach_ptv2(ptv2, c, 0, seed);
    }
    for (const auto* m : {&lora, &ia3, &prefix, &ptv2}) {
      if (!bitwise_equal(before, logits_of(*m, ex))) ++failures;
    }
  }
  return {failures == 0, "100 seeds x {LoRA4, IA3, Prefix(P=0), PTv2(P=0)}, " + std::to_string(failures) +
                             " non-bitwise-identical outputs"};
}

// C3 ------------------------------------------------------------------------

Outcome c3_merge() {
  const auto cfg = ModelConfig::toy();
  double worst = 0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    MileModel<float> model(cfg, k);
    std::mt19937_64 rng(20'000 + k);
    std::normal_distribution<double> noise(0.0, 0.1);
    for (auto c : {Component::kVit, Component::kJtm, Component::kDecoder}) {
      attach_lora(model, c, 4, k);
      for (auto& p : model.peft_parameters(c)) {
        for (auto& v : p.tensor.data()) v += static_cast<float>(noise(rng));
      }
    }
    const auto ex = random_example(cfg, 30'000 + k);
    const auto unmerged = logits_of(model, ex);
    for (auto c : {Component::kVit, Component::kJtm, Component::kDecoder}) merge_lora(model, c);
    const auto merged = logits_of(model, ex);
    double scale = 0, diff = 0;
    for (std::size_t i = 0; i < merged.numel(); ++i) {
      scale = std::max(scale, std::abs(double(unmerged.data()[i])));
      diff = std::max(diff, std::abs(double(unmerged.data()[i]) - double(merged.data()[i])));
    }
    worst = std::max(worst, diff / std::max(scale, 1e-12));
  }
  std::ostringstream os;
  os << "100 perturbed LoRA4 models, max relative logit difference " << std::scientific << std::setprecision(2)
     << worst << " (limit 1e-5)";
  return {worst < 1e-5, os.str()};
}

// C4 ------------------------------------------------------------------------

Outcome c4_masking() {
  const auto cfg = ModelConfig::toy();
  const std::vector<std::string> vit_modes = {"F", "T", "LoRA4", "IA3"};
  const std::vector<std::string> text_modes = {"F", "T", "LoRA4", "IA3", "Prefix4", "PTv2(4)"};
  std::vector<std::string> plans;
  for (const auto& v : vit_modes)
    for (const auto& j : text_modes)
      for (const auto& d : text_modes) plans.push_back(v + "," + j + "," + d);

  std::vector<LmExample<float>> data;
  for (std::uint64_t i = 0; i < 4; ++i) data.push_back(random_example(cfg, 40'000 + i));

  auto audit = [&](const std::string& plan) {
    MileModel<float> model(cfg, 7);
    apply_plan(model, TuningPlan::parse(plan), 7);
    auto report = verify_masking(model, 10, std::span<const LmExample<float>>(data), AdamWOptions{.base_lr = 1e-3});
    return std::make_pair(report.ok(), report.frozen_checked + report.trainable_checked);
  };
  std::vector<std::future<std::pair<bool, std::size_t>>> jobs;
  const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::string> bad;
  std::size_t tensors = 0;
  for (std::size_t start = 0; start < plans.size(); start += workers) {
    jobs.clear();
    for (std::size_t i = start; i < std::min(plans.size(), start + workers); ++i) {
      jobs.push_back(std::async(std::launch::async, audit, plans[i]));
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      auto [ok, checked] = jobs[i].get();
      tensors += checked;
      if (!ok) bad.push_back(plans[start + i]);
    }
  }
  std::string detail = std::to_string(plans.size()) + " plans x 10 steps, " + std::to_string(tensors) +
                       " tensor audits, " + std::to_string(bad.size()) + " violations";
  for (const auto& p : bad) detail += "\n    violated: " + p;
  return {bad.empty(), detail};
}

// C5 ------------------------------------------------------------------------

Outcome c5_gradcheck() {
  bool ok = true;
  std::ostringstream detail;
  for (const auto& plan : gradcheck_plans()) {
    const auto report = gradcheck_model(ModelConfig::micro(), plan, GradcheckOptions{});
    ok = ok && report.ok();
    detail << "\n    " << report.summary();
  }
  return {ok, detail.str()};
}

// C6 ------------------------------------------------------------------------

std::string last_line(const fs::path& p) {
  std::ifstream is(p);
  std::string line, last;
  while (std::getline(is, line)) {
    if (!line.empty()) last = line;
  }
  return last;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

Outcome c6_overfit(const fs::path& root, const fs::path& work) {
  const auto out_dir = work / "overfit";
  const auto config = (root / "configs" / "overfit.cfg").string();
  const auto t0 = Clock::now();
  std::ostringstream out, err;
  int code = run_cli({"train", "--config", config, "--set", "train.out_dir=" + out_dir.string()}, out, err);
  if (code != kExitOk) return {false, "train exited " + std::to_string(code) + ": " + err.str()};
  const auto eval_csv = out_dir / "eval.csv";
  code = run_cli({"eval", "--config", config, "--checkpoint", (out_dir / "final.ckpt").string(), "--csv",
                  eval_csv.string()},
                 out, err);
  if (code != kExitOk) return {false, "eval exited " + std::to_string(code) + ": " + err.str()};
  const double elapsed = seconds_since(t0);

  const auto loss_row = split_csv(last_line(out_dir / "loss.csv"));  // step,stage,lr,loss
  const auto eval_row = split_csv(last_line(eval_csv));              // n_open,n_closed,acc_*
  if (loss_row.size() != 4 || eval_row.size() != 5) return {false, "unexpected CSV layout"};
  const std::size_t steps = std::stoul(loss_row[0]);
  const double loss = std::stod(loss_row[3]);
  const double open = std::stod(eval_row[2]), closed = std::stod(eval_row[3]), global = std::stod(eval_row[4]);
  const bool ok = steps <= 500 && loss < 0.1 && open == 100.0 && closed == 100.0 && global == 100.0 &&
                  elapsed < 600.0;
  return {ok, "T,T,T on 16 pairs: " + std::to_string(steps) + " steps, final loss " + fmt(loss, 4) +
                  ", eval open/closed/global " + eval_row[2] + "/" + eval_row[3] + "/" + eval_row[4] + " in " +
                  fmt(elapsed, 1) + " s"};
}

// C7 ------------------------------------------------------------------------

Outcome c7_datagen(const fs::path& root, const fs::path& work) {
  const auto dir = root / "data" / "toy" / "datagen";
  const auto templates = root / "data" / "templates.json";
  const auto sources = read_qa_records(dir / "qa.jsonl", AttributeRules::defaults());
  const std::uint64_t seed = 11;
  const int k = 3;
  const auto first = work / "datagen_a.jsonl", second = work / "datagen_b.jsonl";
  generate_dataset(sources, templates, seed, k, first);
  generate_dataset(sources, templates, seed, k, second);
  const auto report = validate_instructions(sources, read_instruction_records(first), TemplateSet::load(templates), k);
  const auto sha_a = sha256_file(first), sha_b = sha256_file(second), sha_fixture = sha256_file(dir / "instruct.jsonl");
  const bool ok = report.ok() && report.checked == 200 && report.passed == 200 && sha_a == sha_b &&
                  sha_a == sha_fixture;
  std::string detail = "validator " + std::to_string(report.passed) + "/" + std::to_string(report.checked) +
                       " passed; regeneration sha256 " + sha_a.substr(0, 16) + "... " +
                       (sha_a == sha_b ? "stable" : "UNSTABLE") + ", " +
                       (sha_a == sha_fixture ? "matches" : "DIFFERS FROM") + " the committed fixture";
  for (std::size_t i = 0; i < std::min<std::size_t>(report.failures.size(), 5); ++i) {
    detail += "\n    " + report.failures[i];
  }
  return {ok, detail};
}

// C8 ------------------------------------------------------------------------

RunLog toy_run(const fs::path& root, const fs::path& out_dir, const std::string& paradigm, std::uint64_t seed) {
  const auto cfg = load_run_config(root / "configs" / "toy.cfg",
                                   {"train.paradigm=" + paradigm, "train.seed=" + std::to_string(seed),
                                    "train.checkpoint_every=0", "train.out_dir=" + out_dir.string()});
  MileModel<float> model(cfg.model, cfg.train.seed);
  apply_plan(model, cfg.train.plan, cfg.train.seed, cfg.ia3);
  auto parent = [](const fs::path& p) { return p.parent_path(); };
  auto origin = [&] {
    return tokenize_samples<float>(
        origin_samples(read_qa_records(cfg.data.origin_path, AttributeRules::defaults()), parent(cfg.data.origin_path)),
        cfg.model);
  };
  auto instruct = [&] {
    return tokenize_samples<float>(
        instruct_samples(read_instruction_records(cfg.data.instruct_path), parent(cfg.data.instruct_path)), cfg.model);
  };
  const auto& tc = cfg.train;
  if (tc.paradigm == Paradigm::kOriginThenInstruct) return train_two_stage(model, tc, origin(), instruct());
  const auto data = tc.paradigm == Paradigm::kOrigin ? origin() : instruct();
  return train(model, tc, StageSpec<float>{1, &data, tc.epochs, tc.out_dir / "final.ckpt"});
}

double final_epoch_mean(const RunLog& log, int stage) {
  double v = NAN;
  for (const auto& e : log.epochs) {
    if (e.stage == stage) v = e.mean_loss;
  }
  return v;
}

Outcome c8_paradigms(const fs::path& root, const fs::path& work) {
  const std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<std::future<RunLog>> origin, instruct;
  for (auto s : seeds) {
    origin.push_back(std::async(std::launch::async, toy_run, root, work / ("origin_" + std::to_string(s)), "origin", s));
    instruct.push_back(
        std::async(std::launch::async, toy_run, root, work / ("instruct_" + std::to_string(s)), "instruct", s));
  }
  auto both = std::async(std::launch::async, toy_run, root, work / "origin_then_instruct", "origin_then_instruct",
                         std::uint64_t{0});

  std::ostringstream detail;
  double origin_mean = 0, instruct_mean = 0;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto o = origin[i].get(), n = instruct[i].get();
    const double lo = final_epoch_mean(o, 1), ln = final_epoch_mean(n, 1);
    origin_mean += lo / seeds.size();
    instruct_mean += ln / seeds.size();
    steps = o.steps.size();
    detail << "\n    seed " << seeds[i] << ": final-epoch loss origin " << fmt(lo, 4) << ", instruct " << fmt(ln, 4)
           << " (" << o.steps.size() << " / " << n.steps.size() << " steps)";
  }
  const auto two = both.get();
  std::vector<double> stage2;
  for (const auto& e : two.epochs) {
    if (e.stage == 2) stage2.push_back(e.mean_loss);
  }
  const bool format_ok = instruct_mean < origin_mean;
  const bool stage2_ok = stage2.size() >= 2 && stage2.back() < stage2.front();
  detail << "\n    mean over seeds: origin " << fmt(origin_mean, 4) << ", instruct " << fmt(instruct_mean, 4) << " at "
         << steps << " steps each";
  if (!stage2.empty()) {
    detail << "\n    origin_then_instruct stage-2 epoch-mean loss " << fmt(stage2.front(), 4) << " -> "
           << fmt(stage2.back(), 4) << " over " << stage2.size() << " epochs";
  }
  return {format_ok && stage2_ok, "instruct < origin: " + std::string(format_ok ? "yes" : "no") +
                                      "; stage-2 loss decreases: " + (stage2_ok ? "yes" : "no") + detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mile-acceptance: run the end-to-end acceptance criteria"};
  std::string root = MILE_SOURCE_DIR;
  std::string work;
  std::vector<int> only;
  app.add_option("--root", root, "Project root holding configs/ and data/");
  app.add_option("--work-dir", work, "Scratch directory (default: a fresh temporary directory)");
  app.add_option("--only", only, "Run only these criteria (1-8)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const fs::path work_dir = work.empty() ? fs::temp_directory_path() / ("mile-acceptance-" + std::to_string(::getpid()))
                                         : fs::path(work);
  fs::create_directories(work_dir);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"C1 paper-scale parameter accounting", c1_accounting},
      {"C2 identity at attach (bitwise)", c2_identity},
      {"C3 LoRA merge equivalence", c3_merge},
      {"C4 freeze contract, all mode combinations", c4_masking},
      {"C5 finite-difference gradcheck (double, micro)", c5_gradcheck},
      {"C6 toy overfit + eval", [&] { return c6_overfit(root, work_dir); }},
      {"C7 instruction datagen validity + determinism", [&] { return c7_datagen(root, work_dir); }},
      {"C8 instruct vs origin format, two-stage tuning", [&] { return c8_paradigms(root, work_dir); }},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && std::find(only.begin(), only.end(), int(i + 1)) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    all = all && outcome.pass;
    std::cout << (outcome.pass ? "PASS " : "FAIL ") << criteria[i].first << " [" << fmt(seconds_since(t0), 1)
              << " s]: " << outcome.detail << "\n"
              << std::flush;
  }
  std::cout << "C9 NOT REPRODUCED: the downstream accuracy values and the GPU memory column come from "
               "full-scale runs on the real medical VQA benchmarks with pretrained weights; this desk-scale "
               "build reproduces only the parameter accounting and the qualitative training behaviour above.\n";
  if (work.empty()) fs::remove_all(work_dir);
  return all ? 0 : 1;
}
