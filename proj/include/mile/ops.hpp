// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mile/tensor.hpp"

// Differentiable kernels. Each op computes its result eagerly and, when a
// GradTape is active and some input requires a gradient, registers the
// matching backward rule on that tape. Unless stated otherwise the ops work
// on 2-D row-major tensors.
namespace mile {

using TokenId = std::int32_t;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// x[m×n] + bias[n] broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// x[m×n] * v[n] broadcast over rows.
template <typename T>
Tensor<T> scale_cols(const Tensor<T>& x, const Tensor<T>& v);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// Tanh approximation of GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

// Numerically stable softmax along `axis` of an N-D tensor.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Sets x[i][j] = -inf where j > i + offset, so query i only sees keys up to
// its own position (keys are offset by `offset` prepended entries).
template <typename T>
Tensor<T> causal_mask(const Tensor<T>& x, std::size_t offset);

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = static_cast<T>(kLayerNormEps));

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const TokenId> ids);

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& top, const Tensor<T>& bottom);

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t len);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Mean negative log-likelihood of `targets` over the positions whose
/// `ignore` flag is false (an empty mask ignores nothing).
template <typename T>
Tensor<T> lm_cross_entropy(const Tensor<T>& logits, std::span<const TokenId> targets,
                           const std::vector<bool>& ignore = {});

}  // namespace mile
