// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/optim.hpp"

#include <cmath>
#include <numbers>

namespace mile {

double cosine_lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, double min_lr) {
  if (total_steps <= 0) throw ConfigError("cosine schedule needs total_steps > 0");
  if (step < 0 || step > total_steps) {
    throw ConfigError("cosine schedule step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  }
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
AdamW<T>::AdamW(std::vector<NamedTensor<T>> params, AdamWOptions options) {
  if (options.total_steps <= 0) throw ConfigError("AdamW needs total_steps > 0");
  state_.options = options;
  for (auto& p : params) {
    if (!p.tensor.trainable()) continue;
    state_.first_moment[p.name].assign(p.tensor.numel(), T(0));
    state_.second_moment[p.name].assign(p.tensor.numel(), T(0));
    params_.push_back(std::move(p));
  }
}

template <typename T>
double AdamW<T>::current_lr() const {
  const auto& o = state_.options;
  return cosine_lr_at(std::min(state_.step, o.total_steps), o.total_steps, o.base_lr, o.min_lr);
}

template <typename T>
double AdamW<T>::step() {
  const auto& o = state_.options;
  const double lr = cosine_lr_at(state_.step, o.total_steps, o.base_lr, o.min_lr);
  for (auto& p : params_) {
    if (!p.tensor.has_grad()) {
      throw ContractError("AdamW: trainable tensor '" + p.name + "' has no gradient");
    }
  }
  const double t = static_cast<double>(state_.step + 1);
  const T bc1 = static_cast<T>(1.0 - std::pow(o.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(o.beta2, t));
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T eps = static_cast<T>(o.eps);
  const T lr_t = static_cast<T>(lr);
  const T decay = static_cast<T>(1.0 - lr * o.weight_decay);
  for (auto& p : params_) {
    auto w = p.tensor.data();
    auto g = p.tensor.grad();
    auto& m = state_.first_moment.at(p.name);
    auto& v = state_.second_moment.at(p.name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      w[i] = w[i] * decay - lr_t * mhat / (std::sqrt(vhat) + eps);
    }
  }
  ++state_.step;
  return lr;
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

template <typename T>
void AdamW<T>::load_state(const OptimizerState<T>& state) {
  for (const auto& p : params_) {
    auto m = state.first_moment.find(p.name);
    auto v = state.second_moment.find(p.name);
    if (m == state.first_moment.end() || v == state.second_moment.end() ||
        m->second.size() != p.tensor.numel() || v->second.size() != p.tensor.numel()) {
      throw ContractError("optimizer state does not match trainable tensor '" + p.name + "'");
    }
  }
  if (state.first_moment.size() != params_.size()) {
    throw ContractError("optimizer state holds " + std::to_string(state.first_moment.size()) +
                        " tensors, optimizer tracks " + std::to_string(params_.size()));
  }
  state_ = state;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace mile
