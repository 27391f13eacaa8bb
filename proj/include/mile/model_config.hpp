// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace mile {

/// Architecture of the three-component model.
///
/// Field names double as the keys of the `[model]` config section and of the
/// checkpoint header.
struct ModelConfig {
  std::size_t hidden_dim = 32;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 64;
  std::size_t vit_layers = 1;
  std::size_t jtm_layers = 1;
  std::size_t dec_layers = 1;
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t vocab_size = 260;
  std::size_t max_text_len = 256;
  bool tie_lm_head = false;
  bool use_cls_token = false;
  // Hidden width of the prefix reparameterization network.
  std::size_t prefix_hidden = 512;
  // Upper bound on prefix length + sequence length at any attention site.
  std::size_t attention_budget = 320;
  double init_std = 0.02;

  // d=768, 12 heads, ffn 3072, 12/12/12 layers, 480px images in 16px
  // patches, BERT-base vocabulary.
  static ModelConfig paper();
  // Desk-scale model that trains in minutes on one core.
  static ModelConfig toy();
  // d=16, one layer per component, V=32; for finite-difference checks.
  static ModelConfig micro();

  std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t head_dim() const { return hidden_dim / num_heads; }

  // The last four vocabulary ids are reserved: PAD, BOS, EOS, SEP.
  int pad_id() const { return static_cast<int>(vocab_size) - 4; }
  int bos_id() const { return static_cast<int>(vocab_size) - 3; }
  int eos_id() const { return static_cast<int>(vocab_size) - 2; }
  int sep_id() const { return static_cast<int>(vocab_size) - 1; }

  void validate() const;

  std::vector<std::pair<std::string, std::string>> to_fields() const;
  // Unspecified keys keep their value from `base`; unknown keys are errors.
  static ModelConfig from_fields(const std::map<std::string, std::string>& fields,
                                 ModelConfig base);
  static ModelConfig from_fields(const std::map<std::string, std::string>& fields);

  // Names of fields whose values differ.
  std::vector<std::string> diff(const ModelConfig& other) const;

  bool operator==(const ModelConfig&) const = default;
};

inline ModelConfig ModelConfig::from_fields(const std::map<std::string, std::string>& fields) {
  return from_fields(fields, ModelConfig{});
}

}  // namespace mile
