// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mile/model_config.hpp"
#include "mile/ops.hpp"
#include "mile/optim.hpp"
#include "mile/tensor.hpp"

namespace mile {

enum class Component { kVit = 0, kJtm = 1, kDecoder = 2 };

inline constexpr std::array<Component, 3> kComponents = {Component::kVit, Component::kJtm,
                                                         Component::kDecoder};

std::string_view component_name(Component c);

/// Creates parameter tensors: truncated-normal, zeros or ones, or shape-only
/// placeholders when the model is built for accounting.
template <typename T>
class ParamFactory {
 public:
  ParamFactory(bool shape_only, std::uint64_t seed) : shape_only_(shape_only), rng_(seed) {}

  // Normal(0, std) truncated at two standard deviations.
  Tensor<T> truncated_normal(Shape shape, double std);
  Tensor<T> normal(Shape shape, double std);
  Tensor<T> zeros(Shape shape);
  Tensor<T> ones(Shape shape);
  bool shape_only() const { return shape_only_; }

 private:
  Tensor<T> prepare(Tensor<T> t);

  bool shape_only_;
  std::mt19937_64 rng_;
};

// Row-vector convention: y = x·W + b with W stored [in × out].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Tensor<T> forward(const Tensor<T>& x) const { return add_bias(matmul(x, weight), bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

/// Low-rank update x·A·B added to a frozen projection; A is [d × r], B [r × d].
template <typename T>
struct LoraUnit {
  Tensor<T> a;
  Tensor<T> b;
  std::size_t rank = 0;

  Tensor<T> delta(const Tensor<T>& x) const { return matmul(matmul(x, a), b); }
};

// Key/value rescaling vectors for one attention site.
template <typename T>
struct Ia3AttentionUnit {
  Tensor<T> l_k;
  Tensor<T> l_v;
};

// Keys and values prepended at one attention site, each [P × d].
template <typename T>
struct KeyValuePrefix {
  Tensor<T> keys;
  Tensor<T> values;
};

enum class AttentionKind { kBidirectional, kCausal, kCross };

template <typename T>
struct Attention {
  AttentionKind kind = AttentionKind::kBidirectional;
  std::size_t num_heads = 1;
  Linear<T> query, key, value, output;
  std::optional<LoraUnit<T>> lora_query;
  std::optional<LoraUnit<T>> lora_key;
  std::optional<Ia3AttentionUnit<T>> ia3;

  /// Multi-head attention before the output projection. Queries come from
  /// `x`, keys and values from `context`. When `weights` is non-null the
  /// per-head attention matrices are appended to it.
  Tensor<T> attend(const Tensor<T>& x, const Tensor<T>& context, const KeyValuePrefix<T>* prefix,
                   std::vector<Tensor<T>>* weights = nullptr) const;

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& context, const KeyValuePrefix<T>* prefix,
                    std::vector<Tensor<T>>* weights = nullptr) const {
    return output.forward(attend(x, context, prefix, weights));
  }
};

template <typename T>
struct FeedForward {
  Linear<T> up;
  Linear<T> down;
  // IA3 scaling of the post-GELU activations.
  std::optional<Tensor<T>> l_ff;

  Tensor<T> forward(const Tensor<T>& x) const;
};

/// Pre-norm transformer layer: self-attention, optional cross-attention over
/// visual features, then the feed-forward sub-block, each with a residual.
template <typename T>
struct Block {
  LayerNorm<T> self_norm;
  Attention<T> self_attn;
  std::optional<LayerNorm<T>> cross_norm;
  std::optional<Attention<T>> cross_attn;
  LayerNorm<T> ffn_norm;
  FeedForward<T> ffn;

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>* visual, const KeyValuePrefix<T>* prefix,
                    std::vector<Tensor<T>>* self_weights = nullptr) const;
};

/// Prefix-Tuning source: a [P × d] embedding table pushed through a two-layer
/// tanh network that emits every layer's keys and values at once.
template <typename T>
struct PrefixReparam {
  Tensor<T> embedding;
  Linear<T> hidden;
  Linear<T> project;
};

/// P-Tuning v2 source: one [P × layers·2·d] matrix sliced per layer.
template <typename T>
struct PromptMatrix {
  Tensor<T> matrix;
};

enum class PrefixKind { kNone, kPrefix, kPTv2 };

template <typename T>
struct PrefixSlot {
  PrefixKind kind = PrefixKind::kNone;
  std::size_t length = 0;
  std::optional<PrefixReparam<T>> reparam;
  std::optional<PromptMatrix<T>> prompt;

  bool active() const { return kind != PrefixKind::kNone && length > 0; }
  // Per-layer key/value prefixes for a forward pass; empty when inactive.
  std::vector<KeyValuePrefix<T>> layer_prefixes(std::size_t num_layers, std::size_t d) const;
};

template <typename T>
struct ImageEncoder {
  Linear<T> patch_embed;
  std::optional<Tensor<T>> cls_token;
  Tensor<T> position;
  std::vector<Block<T>> blocks;
  LayerNorm<T> final_norm;
};

template <typename T>
struct JtmEncoder {
  Tensor<T> token_embedding;
  Tensor<T> position;
  std::vector<Block<T>> blocks;
  LayerNorm<T> final_norm;
  PrefixSlot<T> prefix;
};

// Embeds its inputs with the JTM token table; everything listed here is
// decoder-owned.
template <typename T>
struct TextDecoder {
  Tensor<T> position;
  std::vector<Block<T>> blocks;
  LayerNorm<T> final_norm;
  Linear<T> lm_head;
  PrefixSlot<T> prefix;
};

// One training or evaluation pair in token form.
template <typename T>
struct LmExample {
  Tensor<T> pixels;
  std::vector<TokenId> question;  // JTM input
  std::vector<TokenId> answer;    // decoder targets, EOS-terminated
};

/// Image encoder + joint text-multimodal encoder + causal text decoder.
template <typename T>
class MileModel {
 public:
  enum class Storage { kDense, kShapeOnly };

  explicit MileModel(const ModelConfig& config, std::uint64_t seed = 0,
                     Storage storage = Storage::kDense);

  const ModelConfig& config() const { return config_; }
  bool shape_only() const { return shape_only_; }

  ImageEncoder<T>& image_encoder() { return vit_; }
  const ImageEncoder<T>& image_encoder() const { return vit_; }
  JtmEncoder<T>& jtm_encoder() { return jtm_; }
  const JtmEncoder<T>& jtm_encoder() const { return jtm_; }
  TextDecoder<T>& text_decoder() { return dec_; }
  const TextDecoder<T>& text_decoder() const { return dec_; }

  std::vector<Block<T>>& blocks(Component c);
  const std::vector<Block<T>>& blocks(Component c) const;
  PrefixSlot<T>& prefix_slot(Component c);

  using Visitor = std::function<void(const std::string& name, Tensor<T>& tensor)>;
  // Visits every base parameter slot of a component.
  void visit_base(Component c, const Visitor& fn);
  // Visits every attached adapter tensor, named peft/<component>/<layer>/<unit>/<param>.
  void visit_peft(Component c, const Visitor& fn);

  std::vector<NamedTensor<T>> base_parameters(Component c) const;
  std::vector<NamedTensor<T>> peft_parameters(Component c) const;
  std::vector<NamedTensor<T>> component_parameters(Component c) const;
  std::vector<NamedTensor<T>> parameters() const;

  // pixels: [H × W × C]. Returns [patches (+1 with CLS) × d].
  Tensor<T> encode_image(const Tensor<T>& pixels) const;
  Tensor<T> encode_jtm(std::span<const TokenId> tokens, const Tensor<T>& visual) const;
  // Same as encode_jtm without the cross-attention sub-blocks.
  Tensor<T> encode_text_only(std::span<const TokenId> tokens) const;
  // Logits [T × V]; row t predicts targets[t] from BOS and targets[<t].
  Tensor<T> decode_text(const Tensor<T>& fused, std::span<const TokenId> targets) const;
  // Answer-only language-modelling loss; `answer` must already end in EOS.
  Tensor<T> forward_lm_loss(const Tensor<T>& pixels, std::span<const TokenId> question,
                            std::span<const TokenId> answer) const;
  // Greedy decoding; the returned sequence includes a terminating EOS when one
  // was produced within max_len.
  std::vector<TokenId> generate(const Tensor<T>& pixels, std::span<const TokenId> question,
                                std::size_t max_len) const;

  // Captures per-head self-attention weights of decoder layer 0 on the next
  // decode_text call (test hook).
  std::vector<Tensor<T>> decoder_self_attention(const Tensor<T>& fused,
                                                std::span<const TokenId> targets) const;

  // Deep copy with independent storage.
  MileModel clone() const;

  bool plan_applied() const { return plan_applied_; }
  void mark_plan_applied() { plan_applied_ = true; }

 private:
  Tensor<T> run_text_stack(const Tensor<T>& x, const std::vector<Block<T>>& blocks,
                           const PrefixSlot<T>& prefix, const Tensor<T>* visual,
                           std::size_t length, std::vector<Tensor<T>>* first_weights) const;
  Tensor<T> decode_impl(const Tensor<T>& fused, std::span<const TokenId> targets,
                        std::vector<Tensor<T>>* weights) const;

  ModelConfig config_;
  bool shape_only_ = false;
  bool plan_applied_ = false;
  ImageEncoder<T> vit_;
  JtmEncoder<T> jtm_;
  TextDecoder<T> dec_;
};

// Splits [H × W × C] pixels into non-overlapping patches, one flattened
// (row, column, channel) patch per output row.
template <typename T>
Tensor<T> patchify(const Tensor<T>& pixels, std::size_t patch_size);

extern template class ParamFactory<float>;
extern template class ParamFactory<double>;
extern template class MileModel<float>;
extern template class MileModel<double>;

}  // namespace mile
