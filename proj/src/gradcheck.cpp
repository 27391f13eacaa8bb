// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <iomanip>
#include <sstream>

#include "mile/model.hpp"

namespace mile {
namespace {

LmExample<double> random_example(const ModelConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  std::vector<double> pixels(config.image_size * config.image_size * config.channels);
  for (auto& p : pixels) p = pixel(rng);
  // Ordinary ids only; the last four are reserved.
  std::uniform_int_distribution<int> token(0, static_cast<int>(config.vocab_size) - 5);
  LmExample<double> ex;
  ex.pixels = Tensor<double>::from({config.image_size, config.image_size, config.channels}, std::move(pixels));
  for (int i = 0; i < 5; ++i) ex.question.push_back(token(rng));
  for (int i = 0; i < 3; ++i) ex.answer.push_back(token(rng));
  ex.answer.push_back(config.eos_id());
  return ex;
}

double loss_value(const MileModel<double>& model, const LmExample<double>& ex) {
  return model.forward_lm_loss(ex.pixels, ex.question, ex.answer).item();
}

}  // namespace

std::string GradcheckReport::summary() const {
  std::ostringstream os;
  os << (ok() ? "PASS " : "FAIL ") << plan << ": " << tensors << " tensors, " << scalars
     << " scalars, max rel error " << std::scientific << std::setprecision(2) << max_rel_error;
  for (const auto& m : mismatches) {
    os << "\n  " << m.parameter << "[" << m.index << "] analytic " << m.analytic << " numeric " << m.numeric
       << " rel " << m.rel_error;
  }
  return os.str();
}

GradcheckReport gradcheck_model(const ModelConfig& config, const TuningPlan& plan,
                                const GradcheckOptions& options) {
  MileModel<double> model(config, options.seed);
  apply_plan(model, plan, options.seed);
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  // Adapters start at identity (LoRA B = 0, IA3 = 1), which would leave some
  // gradient paths untested.
  std::normal_distribution<double> noise(0.0, 0.1);
  for (const auto c : kComponents) {
    for (auto& p : model.peft_parameters(c)) {
      for (auto& v : p.tensor.data()) v += noise(rng);
    }
  }
  const auto ex = random_example(config, rng);

  auto params = model.parameters();
  std::erase_if(params, [](const NamedTensor<double>& p) { return !p.tensor.trainable(); });
  {
    GradTape<double> tape;
    Tensor<double> loss;
    {
      ActiveTape<double> scope(tape);
      loss = model.forward_lm_loss(ex.pixels, ex.question, ex.answer);
    }
    tape.backward(loss);
  }

  GradcheckReport report;
  report.plan = plan.str();
  for (auto& p : params) {
    ++report.tensors;
    const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    auto data = p.tensor.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + options.step;
      const double up = loss_value(model, ex);
      data[i] = saved - options.step;
      const double down = loss_value(model, ex);
      data[i] = saved;
      const double numeric = (up - down) / (2 * options.step);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), options.scale_floor});
      const double rel = std::abs(analytic[i] - numeric) / scale;
      ++report.scalars;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      if (rel > options.tolerance) report.mismatches.push_back({p.name, i, analytic[i], numeric, rel});
    }
    p.tensor.clear_grad();
  }
  return report;
}

std::vector<TuningPlan> gradcheck_plans() {
  std::vector<TuningPlan> plans;
  for (const char* text : {"T,T,T", "LoRA2,LoRA2,LoRA2", "IA3,IA3,IA3", "F,Prefix2,Prefix2", "F,PTv2(2),PTv2(2)"}) {
    plans.push_back(TuningPlan::parse(text));
  }
  return plans;
}

}  // namespace mile
