// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace mile {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  check_shape(shape);
  const auto n = shape_numel(shape);
  return make_result<T>(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  return make_result<T>(std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::meta(Shape shape) {
  check_shape(shape);
  auto t = make_result<T>(std::move(shape), {});
  t.impl_->meta = true;
  return t;
}

template <typename T>
std::span<T> Tensor<T>::data() {
  if (impl_->meta) throw ContractError("shape-only tensor " + shape_str(impl_->shape) + " has no data");
  return impl_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (impl_->meta) throw ContractError("shape-only tensor " + shape_str(impl_->shape) + " has no data");
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  return impl_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(numel(), T(0));
  return impl_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->meta = impl_->meta;
  impl->trainable = impl_->trainable;
  impl->requires_grad = impl_->trainable;
  return Tensor(std::move(impl));
}

template <typename T>
GradTape<T>::~GradTape() {
  if (active_tape_slot<T>() == this) active_tape_slot<T>() = nullptr;
}

template <typename T>
void GradTape<T>::record(Tensor<T>& out, std::function<void()> backward) {
  auto* impl = out.impl();
  impl->requires_grad = true;
  impl->tape = this;
  impl->tape_epoch = epoch_;
  entries_.push_back(std::move(backward));
  outputs_.push_back(out.impl_);
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss");
  }
  auto* impl = loss.impl();
  if (impl->tape != this || impl->tape_epoch != epoch_ || entries_.empty()) {
    throw ContractError("stale tape: loss was not produced by the current recording "
                        "(backward already ran or no forward pass was recorded)");
  }
  impl->grad.assign(1, T(1));
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  clear();
}

template <typename T>
void GradTape<T>::clear() {
  entries_.clear();
  outputs_.clear();
  ++epoch_;
}

template <typename T>
ActiveTape<T>::ActiveTape(GradTape<T>& tape) : previous_(active_tape_slot<T>()) {
  active_tape_slot<T>() = &tape;
}

template <typename T>
ActiveTape<T>::~ActiveTape() {
  active_tape_slot<T>() = previous_;
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template class ActiveTape<float>;
template class ActiveTape<double>;

}  // namespace mile
