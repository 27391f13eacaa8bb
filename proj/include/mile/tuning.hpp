// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mile/model.hpp"
#include "mile/optim.hpp"
#include "mile/peft.hpp"

namespace mile {

inline constexpr std::size_t kDefaultLoraRank = 4;
inline constexpr std::size_t kDefaultPrefixLength = 16;
inline constexpr std::size_t kDefaultPromptLength = 10;

/// How one component is tuned: F (frozen), T (fully trainable) or a PEFT unit.
struct TuneMode {
  enum class Kind { kFreeze, kFull, kLoRA, kIA3, kPrefix, kPTv2 };
  Kind kind = Kind::kFreeze;
  // LoRA rank or prefix/prompt length; unused otherwise.
  std::size_t size = 0;

  static TuneMode freeze() { return {Kind::kFreeze, 0}; }
  static TuneMode full() { return {Kind::kFull, 0}; }
  static TuneMode lora(std::size_t rank) { return {Kind::kLoRA, rank}; }
  static TuneMode ia3() { return {Kind::kIA3, 0}; }
  static TuneMode prefix(std::size_t length) { return {Kind::kPrefix, length}; }
  static TuneMode ptv2(std::size_t length) { return {Kind::kPTv2, length}; }

  // Accepts F, T, LoRA4, LoRA(4), IA3, Prefix16, Prefix(16), PTv2(10), ...
  static TuneMode parse(std::string_view text);
  std::string str() const;
  bool is_peft() const { return kind != Kind::kFreeze && kind != Kind::kFull; }

  bool operator==(const TuneMode&) const = default;
};

struct TuningPlan {
  TuneMode vit;
  TuneMode jtm;
  TuneMode dec;

  // "F,LoRA4,LoRA4" in ViT, JTM, decoder order.
  static TuningPlan parse(std::string_view text);
  std::string str() const;
  const TuneMode& mode(Component c) const;
  void validate() const;

  bool operator==(const TuningPlan&) const = default;
};

struct ComponentCount {
  std::uint64_t base_total = 0;
  std::uint64_t base_trainable = 0;
  std::uint64_t peft_total = 0;
  std::uint64_t peft_trainable = 0;

  std::uint64_t total() const { return base_total + peft_total; }
  std::uint64_t trainable() const { return base_trainable + peft_trainable; }
};

/// Exact trainable/total accounting. Attached adapters count in both the
/// numerator and the denominator.
struct ParamReport {
  std::array<ComponentCount, 3> components{};

  const ComponentCount& operator[](Component c) const {
    return components[static_cast<std::size_t>(c)];
  }
  std::uint64_t total() const;
  std::uint64_t trainable() const;
  std::uint64_t peft_trainable() const;
  // 100 * trainable / total.
  double fraction_percent() const;

  std::string table(std::string_view plan_label = {}) const;
  std::string csv() const;
};

/// Sets trainability per component and attaches the plan's adapters.
/// A model accepts exactly one plan.
template <typename T>
void apply_plan(MileModel<T>& model, const TuningPlan& plan, std::uint64_t seed = 0,
                Ia3Sites ia3_sites = {});

template <typename T>
ParamReport count_params(const MileModel<T>& model);

struct MaskingReport {
  std::vector<double> losses;
  // Frozen tensors whose bytes changed.
  std::vector<std::string> frozen_modified;
  // Trainable tensors that never changed on a step with a nonzero gradient.
  std::vector<std::string> trainable_unchanged;
  std::size_t frozen_checked = 0;
  std::size_t trainable_checked = 0;

  bool ok() const { return frozen_modified.empty() && trainable_unchanged.empty(); }
  // Throws ContractError naming every offending tensor.
  void check() const;
};

/// Runs n_steps optimizer steps cycling through `data` and audits the freeze
/// contract tensor by tensor.
template <typename T>
MaskingReport verify_masking(MileModel<T>& model, std::size_t n_steps,
                             std::span<const LmExample<T>> data, AdamWOptions options);

}  // namespace mile
