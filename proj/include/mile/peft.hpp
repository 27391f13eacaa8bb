// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

#include "mile/model.hpp"

// Attachable parameter-efficient units. Every attach_* call adds trainable
// tensors to one component and, except for P>0 prefixes, leaves the forward
// pass bit-identical until those tensors move.
namespace mile {

/// LoRA on W_q and W_k of every attention site (self, causal and cross) of
/// the component. A ~ N(0, 0.02), B = 0, scaling 1.
template <typename T>
void attach_lora(MileModel<T>& model, Component c, std::size_t rank, std::uint64_t seed);

/// Folds each LoRA update into its base weight (W += A·B) and removes the
/// units. Returns the number of units merged; 0 means nothing was attached.
template <typename T>
std::size_t merge_lora(MileModel<T>& model, Component c);

struct Ia3Sites {
  // Also rescale keys/values of the cross-attention sites in JTM and decoder.
  bool cross_attention = true;
};

/// IA3 vectors l_k, l_v on attention sites and l_ff after the FFN
/// nonlinearity; all ones at attach time.
template <typename T>
void attach_ia3(MileModel<T>& model, Component c, Ia3Sites sites = {});

/// Prefix-Tuning with `length` reparameterized key/value pairs on every
/// self-attention site. JTM and decoder only.
template <typename T>
void attach_prefix(MileModel<T>& model, Component c, std::size_t length, std::uint64_t seed);

/// P-Tuning v2: per-layer prefixes sliced from one trainable matrix.
template <typename T>
void attach_ptv2(MileModel<T>& model, Component c, std::size_t length, std::uint64_t seed);

// Removes a prefix or prompt unit, restoring the base forward pass.
template <typename T>
void detach_prefix(MileModel<T>& model, Component c);

}  // namespace mile
