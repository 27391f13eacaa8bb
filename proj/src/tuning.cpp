// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/tuning.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstring>
#include <iomanip>
#include <optional>
#include <sstream>

namespace mile {
namespace {

std::string lower(std::string_view s) {
  std::string out;
  for (char ch : s) {
    if (!std::isspace(static_cast<unsigned char>(ch))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  return out;
}

}  // namespace

TuneMode TuneMode::parse(std::string_view text) {
  const std::string s = lower(text);
  std::size_t split = 0;
  while (split < s.size() && std::isalpha(static_cast<unsigned char>(s[split]))) ++split;
  std::string name = s.substr(0, split);
  std::string arg = s.substr(split);
  // IA3 / PTv2 carry digits in their names.
  if ((name == "ia" && arg == "3") || (name == "ptv" && !arg.empty() && arg[0] == '2')) {
    name += arg[0];
    arg = arg.substr(1);
  }
  if (arg.size() >= 2 && arg.front() == '(' && arg.back() == ')') arg = arg.substr(1, arg.size() - 2);
  std::optional<std::size_t> size;
  if (!arg.empty()) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), v);
    if (ec != std::errc() || ptr != arg.data() + arg.size()) {
      throw ConfigError("cannot parse tuning mode '" + std::string(text) + "'");
    }
    size = v;
  }
  auto no_arg = [&](TuneMode m) {
    if (size) throw ConfigError("tuning mode '" + std::string(text) + "' takes no size");
    return m;
  };
  if (name == "f" || name == "freeze") return no_arg(freeze());
  if (name == "t" || name == "full") return no_arg(full());
  if (name == "ia3") return no_arg(ia3());
  if (name == "lora") {
    const auto r = size.value_or(kDefaultLoraRank);
    if (r == 0) throw ConfigError("LoRA rank must be at least 1");
    return lora(r);
  }
  if (name == "prefix") return prefix(size.value_or(kDefaultPrefixLength));
  if (name == "ptv2") return ptv2(size.value_or(kDefaultPromptLength));
  throw ConfigError("unknown tuning mode '" + std::string(text) + "'");
}

std::string TuneMode::str() const {
  switch (kind) {
    case Kind::kFreeze:
      return "F";
    case Kind::kFull:
      return "T";
    case Kind::kLoRA:
      return "LoRA" + std::to_string(size);
    case Kind::kIA3:
      return "IA3";
    case Kind::kPrefix:
      return "Prefix" + std::to_string(size);
    case Kind::kPTv2:
      return "PTv2(" + std::to_string(size) + ")";
  }
  return "?";
}

TuningPlan TuningPlan::parse(std::string_view text) {
  std::vector<std::string> parts;
  std::string current;
  int depth = 0;
  for (char ch : text) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == ',' && depth == 0) {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  parts.push_back(current);
  if (parts.size() != 3) {
    throw ConfigError("a tuning plan lists three modes (ViT,JTM,Dec), got '" + std::string(text) + "'");
  }
  TuningPlan plan{TuneMode::parse(parts[0]), TuneMode::parse(parts[1]), TuneMode::parse(parts[2])};
  plan.validate();
  return plan;
}

std::string TuningPlan::str() const {
  return vit.str() + "," + jtm.str() + "," + dec.str();
}

const TuneMode& TuningPlan::mode(Component c) const {
  switch (c) {
    case Component::kVit:
      return vit;
    case Component::kJtm:
      return jtm;
    case Component::kDecoder:
      break;
  }
  return dec;
}

void TuningPlan::validate() const {
  if (vit.kind == TuneMode::Kind::kPrefix || vit.kind == TuneMode::Kind::kPTv2) {
    throw ConfigError("Prefix/PTv2 tuning is not available for the image encoder");
  }
}

std::uint64_t ParamReport::total() const {
  std::uint64_t n = 0;
  for (const auto& c : components) n += c.total();
  return n;
}

std::uint64_t ParamReport::trainable() const {
  std::uint64_t n = 0;
  for (const auto& c : components) n += c.trainable();
  return n;
}

std::uint64_t ParamReport::peft_trainable() const {
  std::uint64_t n = 0;
  for (const auto& c : components) n += c.peft_trainable;
  return n;
}

double ParamReport::fraction_percent() const {
  const auto t = total();
  return t == 0 ? 0.0 : 100.0 * static_cast<double>(trainable()) / static_cast<double>(t);
}

std::string ParamReport::table(std::string_view plan_label) const {
  std::ostringstream os;
  if (!plan_label.empty()) os << "plan: " << plan_label << "\n";
  os << std::left << std::setw(10) << "component" << std::right << std::setw(14) << "base_total"
     << std::setw(16) << "base_trainable" << std::setw(16) << "peft_trainable" << std::setw(14)
     << "trainable" << std::setw(14) << "total" << "\n";
  for (auto c : kComponents) {
    const auto& cc = (*this)[c];
    os << std::left << std::setw(10) << component_name(c) << std::right << std::setw(14)
       << cc.base_total << std::setw(16) << cc.base_trainable << std::setw(16) << cc.peft_trainable
       << std::setw(14) << cc.trainable() << std::setw(14) << cc.total() << "\n";
  }
  os << std::left << std::setw(10) << "all" << std::right << std::setw(14)
     << (total() - [this] {
          std::uint64_t p = 0;
          for (const auto& c : components) p += c.peft_total;
          return p;
        }())
     << std::setw(16) << (trainable() - peft_trainable()) << std::setw(16) << peft_trainable()
     << std::setw(14) << trainable() << std::setw(14) << total() << "\n";
  os << "trainable fraction: " << std::fixed << std::setprecision(3) << fraction_percent() << "%\n";
  return os.str();
}

std::string ParamReport::csv() const {
  std::ostringstream os;
  os << "component,base_total,base_trainable,peft_total,peft_trainable,trainable,total,fraction_percent\n";
  auto row = [&os](std::string_view name, const ComponentCount& cc) {
    const double pct = cc.total() == 0 ? 0.0
                                       : 100.0 * static_cast<double>(cc.trainable()) /
                                             static_cast<double>(cc.total());
    os << name << ',' << cc.base_total << ',' << cc.base_trainable << ',' << cc.peft_total << ','
       << cc.peft_trainable << ',' << cc.trainable() << ',' << cc.total() << ',' << std::fixed
       << std::setprecision(6) << pct << "\n";
  };
  ComponentCount all;
  for (auto c : kComponents) {
    const auto& cc = (*this)[c];
    row(component_name(c), cc);
    all.base_total += cc.base_total;
    all.base_trainable += cc.base_trainable;
    all.peft_total += cc.peft_total;
    all.peft_trainable += cc.peft_trainable;
  }
  row("all", all);
  return os.str();
}

template <typename T>
void apply_plan(MileModel<T>& model, const TuningPlan& plan, std::uint64_t seed, Ia3Sites ia3_sites) {
  if (model.plan_applied()) throw ContractError("a tuning plan was already applied to this model");
  plan.validate();
  for (auto c : kComponents) {
    const auto& mode = plan.mode(c);
    const bool base_trainable = mode.kind == TuneMode::Kind::kFull;
    model.visit_base(c, [&](const std::string&, Tensor<T>& t) { t.set_trainable(base_trainable); });
    const std::uint64_t unit_seed = seed * 3 + static_cast<std::uint64_t>(c) + 1;
    switch (mode.kind) {
      case TuneMode::Kind::kFreeze:
      case TuneMode::Kind::kFull:
        break;
      case TuneMode::Kind::kLoRA:
        attach_lora(model, c, mode.size, unit_seed);
        break;
      case TuneMode::Kind::kIA3:
        attach_ia3(model, c, ia3_sites);
        break;
      case TuneMode::Kind::kPrefix:
        attach_prefix(model, c, mode.size, unit_seed);
        break;
      case TuneMode::Kind::kPTv2:
        attach_ptv2(model, c, mode.size, unit_seed);
        break;
    }
  }
  model.mark_plan_applied();
}

template <typename T>
ParamReport count_params(const MileModel<T>& model) {
  ParamReport report;
  for (auto c : kComponents) {
    auto& cc = report.components[static_cast<std::size_t>(c)];
    for (const auto& p : model.base_parameters(c)) {
      cc.base_total += p.tensor.numel();
      if (p.tensor.trainable()) cc.base_trainable += p.tensor.numel();
    }
    for (const auto& p : model.peft_parameters(c)) {
      cc.peft_total += p.tensor.numel();
      if (p.tensor.trainable()) cc.peft_trainable += p.tensor.numel();
    }
  }
  return report;
}

void MaskingReport::check() const {
  if (ok()) return;
  std::string msg = "freeze contract violated:";
  for (const auto& n : frozen_modified) msg += " frozen tensor '" + n + "' changed;";
  for (const auto& n : trainable_unchanged) msg += " trainable tensor '" + n + "' never updated;";
  throw ContractError(msg);
}

template <typename T>
MaskingReport verify_masking(MileModel<T>& model, std::size_t n_steps,
                             std::span<const LmExample<T>> data, AdamWOptions options) {
  if (data.empty()) throw InputError("verify_masking needs at least one example");
  if (n_steps == 0) throw InputError("verify_masking needs at least one step");
  auto params = model.parameters();
  std::vector<std::vector<T>> snapshot;
  snapshot.reserve(params.size());
  for (const auto& p : params) {
    snapshot.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  }
  std::vector<bool> updated(params.size(), false);

  options.total_steps = static_cast<std::int64_t>(n_steps);
  AdamW<T> optimizer(params, options);
  MaskingReport report;
  for (std::size_t step = 0; step < n_steps; ++step) {
    const auto& ex = data[step % data.size()];
    GradTape<T> tape;
    Tensor<T> loss;
    {
      ActiveTape<T> scope(tape);
      loss = model.forward_lm_loss(ex.pixels, ex.question, ex.answer);
    }
    report.losses.push_back(static_cast<double>(loss.item()));
    if (loss.requires_grad()) tape.backward(loss);

    std::vector<std::vector<T>> before;
    std::vector<bool> nonzero(params.size(), false);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = params[i].tensor;
      if (!t.trainable()) continue;
      before.emplace_back(t.data().begin(), t.data().end());
      const auto g = t.grad();
      nonzero[i] = std::any_of(g.begin(), g.end(), [](T v) { return v != T(0); });
    }
    optimizer.step();
    optimizer.zero_grad();
    std::size_t k = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = params[i].tensor;
      if (!t.trainable()) continue;
      const auto& prev = before[k++];
      if (nonzero[i] && !std::equal(prev.begin(), prev.end(), t.data().begin())) updated[i] = true;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i].tensor;
    const auto now = t.data();
    if (t.trainable()) {
      ++report.trainable_checked;
      if (!updated[i]) report.trainable_unchanged.push_back(params[i].name);
    } else {
      ++report.frozen_checked;
      if (std::memcmp(now.data(), snapshot[i].data(), now.size() * sizeof(T)) != 0) {
        report.frozen_modified.push_back(params[i].name);
      }
    }
  }
  report.check();
  return report;
}

#define MILE_INSTANTIATE_TUNING(T)                                                            \
  template void apply_plan(MileModel<T>&, const TuningPlan&, std::uint64_t, Ia3Sites);        \
  template ParamReport count_params(const MileModel<T>&);                                     \
  template MaskingReport verify_masking(MileModel<T>&, std::size_t, std::span<const LmExample<T>>, \
                                        AdamWOptions);

MILE_INSTANTIATE_TUNING(float)
MILE_INSTANTIATE_TUNING(double)

#undef MILE_INSTANTIATE_TUNING

}  // namespace mile
