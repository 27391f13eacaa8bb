// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mile/tensor.hpp"

namespace mile {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Cosine decay from base_lr at step 0 to min_lr at total_steps.
double cosine_lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, double min_lr);

struct AdamWOptions {
  double base_lr = 2e-5;
  double weight_decay = 0.05;
  double min_lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t total_steps = 1;
};

template <typename T>
struct OptimizerState {
  AdamWOptions options;
  std::int64_t step = 0;
  // Keyed by parameter name; present only for tensors trainable when the
  // optimizer was built.
  std::map<std::string, std::vector<T>> first_moment;
  std::map<std::string, std::vector<T>> second_moment;
};

/// AdamW with decoupled weight decay and a per-step cosine schedule.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<NamedTensor<T>> params, AdamWOptions options);

  // Applies one update and returns the learning rate it used.
  double step();
  void zero_grad();

  double current_lr() const;
  std::int64_t step_count() const { return state_.step; }
  const OptimizerState<T>& state() const { return state_; }
  // Restores moments and step counter; names and sizes must match.
  void load_state(const OptimizerState<T>& state);
  const std::vector<NamedTensor<T>>& params() const { return params_; }

 private:
  std::vector<NamedTensor<T>> params_;
  OptimizerState<T> state_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace mile
