// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstring>
#include <random>
#include <vector>

#include "mile/model.hpp"

namespace mile::testing {

template <typename T>
Tensor<T> random_pixels(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(cfg.image_size * cfg.image_size * cfg.channels);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from({cfg.image_size, cfg.image_size, cfg.channels}, std::move(v));
}

// Random non-special token ids.
inline std::vector<TokenId> random_tokens(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = static_cast<TokenId>(rng() % (cfg.vocab_size - 4));
  return ids;
}

template <typename T>
LmExample<T> random_example(const ModelConfig& cfg, std::uint64_t seed, std::size_t q_len = 5,
                            std::size_t a_len = 3) {
  LmExample<T> ex;
  ex.pixels = random_pixels<T>(cfg, seed);
  ex.question = random_tokens(cfg, q_len, seed + 1);
  ex.answer = random_tokens(cfg, a_len, seed + 2);
  ex.answer.push_back(cfg.eos_id());
  return ex;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double scale = 0, diff = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    scale = std::max(scale, std::abs(double(a.data()[i])));
    diff = std::max(diff, std::abs(double(a.data()[i]) - double(b.data()[i])));
  }
  return diff / std::max(scale, 1e-12);
}

}  // namespace mile::testing
