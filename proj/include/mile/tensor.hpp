// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mile/errors.hpp"

namespace mile {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold float or double");
  return std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;
}

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <typename T>
class GradTape;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty when absent
  bool trainable = false;
  bool requires_grad = false;
  // Shape-only tensors carry no buffer; used for paper-scale accounting.
  bool meta = false;
  // Recording that produced this tensor; null for leaves.
  const GradTape<T>* tape = nullptr;
  std::uint64_t tape_epoch = 0;
};

/// Shared handle to a dense row-major buffer plus its gradient slot.
///
/// Copying a Tensor aliases the same storage, the way model code passes
/// parameters around; use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from(Shape shape, std::vector<T> values);
  static Tensor meta(Shape shape);
  static Tensor scalar(T value) { return from({1}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  bool is_meta() const { return impl_->meta; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t numel() const { return shape_numel(impl_->shape); }
  // Row/column view of a 1-D or 2-D tensor; a 1-D tensor is a single row.
  std::size_t rows() const { return ndim() == 1 ? 1 : impl_->shape[0]; }
  std::size_t cols() const { return impl_->shape.back(); }

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;
  T at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad();
  std::span<const T> grad() const;
  // Allocates a zero gradient if absent.
  std::span<T> ensure_grad() const;
  void clear_grad() const { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }

  bool trainable() const { return impl_->trainable; }
  void set_trainable(bool on) {
    impl_->trainable = on;
    impl_->requires_grad = on;
  }
  bool requires_grad() const { return impl_->requires_grad; }

  Tensor clone() const;
  // Detached copy with no autograd history.
  Tensor detach() const { return clone(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl<T>* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}
  template <typename U>
  friend class GradTape;
  template <typename U>
  friend Tensor<U> make_result(Shape shape, std::vector<U> values);

  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Ordered record of differentiable operations executed while it is active.
///
/// backward() replays the record in reverse exactly once; afterwards the
/// record is cleared and any loss produced under it is stale.
template <typename T>
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;
  ~GradTape();

  std::size_t size() const { return entries_.size(); }
  std::uint64_t epoch() const { return epoch_; }

  // Registers a backward closure for an op whose output is `out`.
  void record(Tensor<T>& out, std::function<void()> backward);
  void backward(const Tensor<T>& loss);
  void clear();

  static GradTape* active();

 private:
  std::vector<std::function<void()>> entries_;
  std::vector<std::shared_ptr<TensorImpl<T>>> outputs_;
  std::uint64_t epoch_ = 1;
};

/// Installs a tape as the active recorder for the current thread.
template <typename T>
class ActiveTape {
 public:
  explicit ActiveTape(GradTape<T>& tape);
  ~ActiveTape();
  ActiveTape(const ActiveTape&) = delete;
  ActiveTape& operator=(const ActiveTape&) = delete;

 private:
  GradTape<T>* previous_;
};

template <typename T>
GradTape<T>*& active_tape_slot() {
  thread_local GradTape<T>* slot = nullptr;
  return slot;
}

template <typename T>
GradTape<T>* GradTape<T>::active() {
  return active_tape_slot<T>();
}

// Builds an op result; the op registers its backward rule separately.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor<T>(std::move(impl));
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;
extern template class ActiveTape<float>;
extern template class ActiveTape<double>;

}  // namespace mile
