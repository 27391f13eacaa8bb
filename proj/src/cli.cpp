// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mile/checkpoint.hpp"
#include "mile/config.hpp"
#include "mile/datagen.hpp"
#include "mile/errors.hpp"
#include "mile/gradcheck.hpp"
#include "mile/train.hpp"
#include "mile/tuning.hpp"

namespace mile {
namespace {

namespace fs = std::filesystem;

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  std::string plan;

  void add_to(CLI::App* app, bool required = true) {
    auto* opt = app->add_option("--config", path, "INI run config ([model], [plan], [train], [data])");
    if (required) opt->required();
    app->add_option("--set", overrides, "Override a config value, e.g. --set train.epochs=3")
        ->type_name("SECTION.KEY=VALUE");
    app->add_option("--plan", plan, "Tuning plan, e.g. F,LoRA4,LoRA4 (overrides [plan])");
  }

  RunConfig load() const {
    auto cfg = path.empty() ? parse_run_config("", fs::current_path(), overrides)
                            : load_run_config(path, overrides);
    if (!plan.empty()) {
      cfg.train.plan = TuningPlan::parse(plan);
      cfg.validate();
    }
    return cfg;
  }
};

AttributeRules rules_for(const fs::path& path) {
  return path.empty() ? AttributeRules::defaults() : AttributeRules::load(path);
}

fs::path parent_of(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

void require_path(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " is not set");
}

int cmd_count_params(const ConfigArgs& args, bool csv, std::ostream& out) {
  const auto cfg = args.load();
  MileModel<float> model(cfg.model, 0, MileModel<float>::Storage::kShapeOnly);
  apply_plan(model, cfg.train.plan, 0, cfg.ia3);
  const auto report = count_params(model);
  out << (csv ? report.csv() : report.table(cfg.train.plan.str()));
  return kExitOk;
}

int cmd_train(const ConfigArgs& args, const std::string& resume, std::ostream& out) {
  const auto cfg = args.load();
  const auto& tc = cfg.train;
  MileModel<float> model(cfg.model, tc.seed);
  apply_plan(model, tc.plan, tc.seed, cfg.ia3);
  const auto rules = rules_for(cfg.data.attribute_rules);

  auto origin = [&] {
    require_path(cfg.data.origin_path, "[data] origin_path");
    return tokenize_samples<float>(
        origin_samples(read_qa_records(cfg.data.origin_path, rules), parent_of(cfg.data.origin_path)), cfg.model);
  };
  auto instruct = [&] {
    require_path(cfg.data.instruct_path, "[data] instruct_path");
    return tokenize_samples<float>(
        instruct_samples(read_instruction_records(cfg.data.instruct_path), parent_of(cfg.data.instruct_path)),
        cfg.model);
  };
  const std::optional<fs::path> resume_from = resume.empty() ? std::nullopt : std::optional<fs::path>(resume);

  RunLog log;
  if (tc.paradigm == Paradigm::kOriginThenInstruct) {
    if (resume_from) throw ConfigError("--resume is supported for single-stage paradigms only");
    log = train_two_stage(model, tc, origin(), instruct());
  } else {
    const auto data = tc.paradigm == Paradigm::kOrigin ? origin() : instruct();
    log = train(model, tc, StageSpec<float>{1, &data, tc.epochs, tc.out_dir / "final.ckpt"}, resume_from);
  }
  const auto csv_path = tc.out_dir / "loss.csv";
  log.write_csv(csv_path);
  out << "plan " << tc.plan.str() << ", paradigm " << paradigm_name(tc.paradigm) << ": " << log.steps.size()
      << " steps in " << std::fixed << std::setprecision(1) << log.wall_seconds << " s\n";
  if (!log.steps.empty()) {
    out << "first loss " << std::setprecision(4) << log.steps.front().loss << ", final loss "
        << log.steps.back().loss << "\n";
  }
  out << "checkpoint " << log.checkpoint.string() << "\nloss log " << csv_path.string() << "\n";
  return kExitOk;
}

int cmd_eval(const ConfigArgs& args, const std::string& checkpoint, const std::string& base,
             const std::string& data_path, const std::string& csv_path, std::size_t workers, std::ostream& out) {
  const auto cfg = args.load();
  const auto header = read_checkpoint(checkpoint).header;
  MileModel<float> model(cfg.model, cfg.train.seed);
  if (header.kind == CheckpointKind::kAdapter) {
    if (base.empty()) throw ConfigError("adapter checkpoint '" + checkpoint + "' needs --base <full checkpoint>");
    load_checkpoint(base, model);
  } else if (!base.empty()) {
    throw ConfigError("--base only applies to adapter checkpoints");
  }
  apply_plan(model, TuningPlan::parse(header.plan), cfg.train.seed, cfg.ia3);
  load_checkpoint(checkpoint, model);

  const fs::path path = data_path.empty() ? cfg.data.eval_path : fs::path(data_path);
  require_path(path, "[data] eval_path");
  const auto records = read_eval_records(path, rules_for(cfg.data.attribute_rules));
  const auto report = evaluate(model, records, parent_of(path), cfg.train.max_answer_len, workers);
  out << report.table();
  if (!csv_path.empty()) {
    std::ofstream os(csv_path, std::ios::trunc);
    if (!os) throw Error("cannot open '" + csv_path + "' for writing");
    os << report.csv();
  }
  return kExitOk;
}

int cmd_gen_instruct(const std::string& in, const std::string& out_path, std::uint64_t seed, int k,
                     const std::string& templates, const std::string& rules_path, std::ostream& out) {
  const auto records = read_qa_records(in, rules_for(rules_path));
  const auto manifest = generate_dataset(records, templates, seed, k, out_path);
  const auto generated = read_instruction_records(out_path);
  const auto report = validate_instructions(records, generated, TemplateSet::load(templates), k);
  out << "wrote " << manifest.n_records << " records (" << manifest.n_open << " open, " << manifest.n_closed
      << " closed) to " << out_path << "\n";
  out << "validator: " << report.passed << "/" << report.checked << " passed\n";
  for (const auto& f : report.failures) out << "  " << f << "\n";
  return report.ok() ? kExitOk : kExitFailure;
}

int cmd_gradcheck(const std::vector<std::string>& plans, double tolerance, std::ostream& out) {
  std::vector<TuningPlan> todo;
  for (const auto& p : plans) todo.push_back(TuningPlan::parse(p));
  if (todo.empty()) todo = gradcheck_plans();
  GradcheckOptions options;
  options.tolerance = tolerance;
  bool ok = true;
  for (const auto& plan : todo) {
    const auto report = gradcheck_model(ModelConfig::micro(), plan, options);
    out << report.summary() << "\n";
    ok = ok && report.ok();
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"mile: parameter-efficient tuning of a three-component vision-language model"};
  app.name("mile");
  app.require_subcommand(1);

  ConfigArgs train_cfg, eval_cfg, count_cfg;
  std::string resume;
  auto* train_cmd = app.add_subcommand("train", "Train a model as described by a run config");
  train_cfg.add_to(train_cmd);
  train_cmd->add_option("--resume", resume, "Resume from a checkpoint written by an earlier run");

  std::string checkpoint, base, eval_data, eval_csv;
  std::size_t workers = 1;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint by exact match on original-format questions");
  eval_cfg.add_to(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "Full or adapter checkpoint")->required();
  eval_cmd->add_option("--base", base, "Full checkpoint under an adapter checkpoint");
  eval_cmd->add_option("--data", eval_data, "Evaluation records (default: [data] eval_path)");
  eval_cmd->add_option("--csv", eval_csv, "Also write the accuracies as CSV to this file");
  eval_cmd->add_option("--workers", workers, "Evaluation threads")->check(CLI::PositiveNumber);

  bool csv = false;
  auto* count_cmd = app.add_subcommand("count-params", "Count trainable parameters of a plan without allocating");
  count_cfg.add_to(count_cmd, false);
  count_cmd->add_flag("--csv", csv, "Comma-separated output");

  std::string gen_in, gen_out, templates, rules;
  std::uint64_t seed = 0;
  int k = 3;
  auto* gen_cmd = app.add_subcommand("gen-instruct", "Turn QA records into multiple-choice instruction records");
  gen_cmd->add_option("--in", gen_in, "Source QA records (jsonl)")->required();
  gen_cmd->add_option("--out", gen_out, "Output instruction records (jsonl)")->required();
  gen_cmd->add_option("--seed", seed, "Generator seed");
  gen_cmd->add_option("--distractors", k, "Distractors per open question")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--templates", templates, "Template file (json)")->required();
  gen_cmd->add_option("--rules", rules, "Attribute keyword rules (json; default built-in)");

  std::vector<std::string> gc_plans;
  double tolerance = 1e-3;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check of the micro model (double)");
  gc_cmd->add_option("--plan", gc_plans, "Plans to check (default: the built-in suite)");
  gc_cmd->add_option("--tolerance", tolerance, "Relative tolerance");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "mile: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_cfg, resume, out);
    if (*eval_cmd) return cmd_eval(eval_cfg, checkpoint, base, eval_data, eval_csv, workers, out);
    if (*count_cmd) return cmd_count_params(count_cfg, csv, out);
    if (*gen_cmd) return cmd_gen_instruct(gen_in, gen_out, seed, k, templates, rules, out);
    if (*gc_cmd) return cmd_gradcheck(gc_plans, tolerance, out);
  } catch (const ConfigError& e) {
    err << "mile: configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "mile: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mile
