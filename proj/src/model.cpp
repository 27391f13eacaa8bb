// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mile {

std::string_view component_name(Component c) {
  switch (c) {
    case Component::kVit:
      return "vit";
    case Component::kJtm:
      return "jtm";
    case Component::kDecoder:
      return "dec";
  }
  return "?";
}

template <typename T>
Tensor<T> ParamFactory<T>::prepare(Tensor<T> t) {
  t.set_trainable(true);
  return t;
}

template <typename T>
Tensor<T> ParamFactory<T>::truncated_normal(Shape shape, double std) {
  if (shape_only_) return prepare(Tensor<T>::meta(std::move(shape)));
  const auto n = shape_numel(shape);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> values(n);
  for (auto& v : values) {
    double z = dist(rng_);
    while (std::abs(z) > 2.0) z = dist(rng_);
    v = static_cast<T>(z * std);
  }
  return prepare(Tensor<T>::from(std::move(shape), std::move(values)));
}

template <typename T>
Tensor<T> ParamFactory<T>::normal(Shape shape, double std) {
  if (shape_only_) return prepare(Tensor<T>::meta(std::move(shape)));
  std::normal_distribution<double> dist(0.0, std);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng_));
  return prepare(Tensor<T>::from(std::move(shape), std::move(values)));
}

template <typename T>
Tensor<T> ParamFactory<T>::zeros(Shape shape) {
  if (shape_only_) return prepare(Tensor<T>::meta(std::move(shape)));
  return prepare(Tensor<T>::zeros(std::move(shape)));
}

template <typename T>
Tensor<T> ParamFactory<T>::ones(Shape shape) {
  if (shape_only_) return prepare(Tensor<T>::meta(std::move(shape)));
  return prepare(Tensor<T>::full(std::move(shape), T(1)));
}

template <typename T>
Tensor<T> Attention<T>::attend(const Tensor<T>& x, const Tensor<T>& context,
                               const KeyValuePrefix<T>* prefix,
                               std::vector<Tensor<T>>* weights) const {
  auto q = query.forward(x);
  if (lora_query) q = add(q, lora_query->delta(x));
  auto k = key.forward(context);
  if (lora_key) k = add(k, lora_key->delta(context));
  auto v = value.forward(context);
  if (ia3) {
    k = scale_cols(k, ia3->l_k);
    v = scale_cols(v, ia3->l_v);
  }
  std::size_t offset = 0;
  if (prefix != nullptr) {
    k = concat_rows(prefix->keys, k);
    v = concat_rows(prefix->values, v);
    offset = prefix->keys.dim(0);
  }
  const std::size_t d = q.dim(1);
  const std::size_t head_dim = d / num_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::vector<Tensor<T>> heads;
  heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    auto qh = num_heads == 1 ? q : slice_cols(q, h * head_dim, head_dim);
    auto kh = num_heads == 1 ? k : slice_cols(k, h * head_dim, head_dim);
    auto vh = num_heads == 1 ? v : slice_cols(v, h * head_dim, head_dim);
    auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (kind == AttentionKind::kCausal) scores = causal_mask(scores, offset);
    auto probs = softmax(scores, 1);
    if (weights != nullptr) weights->push_back(probs);
    heads.push_back(matmul(probs, vh));
  }
  return num_heads == 1 ? heads.front() : concat_cols(heads);
}

template <typename T>
Tensor<T> FeedForward<T>::forward(const Tensor<T>& x) const {
  auto h = gelu(up.forward(x));
  if (l_ff) h = scale_cols(h, *l_ff);
  return down.forward(h);
}

template <typename T>
Tensor<T> Block<T>::forward(const Tensor<T>& x, const Tensor<T>* visual,
                            const KeyValuePrefix<T>* prefix,
                            std::vector<Tensor<T>>* self_weights) const {
  auto h = self_norm.forward(x);
  auto out = add(x, self_attn.forward(h, h, prefix, self_weights));
  if (cross_attn && visual != nullptr) {
    auto c = cross_norm->forward(out);
    out = add(out, cross_attn->forward(c, *visual, nullptr));
  }
  return add(out, ffn.forward(ffn_norm.forward(out)));
}

template <typename T>
std::vector<KeyValuePrefix<T>> PrefixSlot<T>::layer_prefixes(std::size_t num_layers,
                                                             std::size_t d) const {
  std::vector<KeyValuePrefix<T>> out;
  if (!active()) return out;
  Tensor<T> all;
  if (kind == PrefixKind::kPrefix) {
    const auto& r = *reparam;
    all = r.project.forward(tanh(r.hidden.forward(r.embedding)));
  } else {
    all = prompt->matrix;
  }
  out.reserve(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    out.push_back({slice_cols(all, l * 2 * d, d), slice_cols(all, l * 2 * d + d, d)});
  }
  return out;
}

namespace {

template <typename T>
Linear<T> make_linear(ParamFactory<T>& f, std::size_t in, std::size_t out, double std) {
  return {f.truncated_normal({in, out}, std), f.zeros({out})};
}

template <typename T>
LayerNorm<T> make_norm(ParamFactory<T>& f, std::size_t d) {
  return {f.ones({d}), f.zeros({d})};
}

template <typename T>
Attention<T> make_attention(ParamFactory<T>& f, const ModelConfig& c, AttentionKind kind) {
  Attention<T> a;
  a.kind = kind;
  a.num_heads = c.num_heads;
  const auto d = c.hidden_dim;
  a.query = make_linear(f, d, d, c.init_std);
  a.key = make_linear(f, d, d, c.init_std);
  a.value = make_linear(f, d, d, c.init_std);
  a.output = make_linear(f, d, d, c.init_std);
  return a;
}

template <typename T>
Block<T> make_block(ParamFactory<T>& f, const ModelConfig& c, AttentionKind self_kind,
                    bool with_cross) {
  Block<T> b;
  b.self_norm = make_norm(f, c.hidden_dim);
  b.self_attn = make_attention(f, c, self_kind);
  if (with_cross) {
    b.cross_norm = make_norm(f, c.hidden_dim);
    b.cross_attn = make_attention(f, c, AttentionKind::kCross);
  }
  b.ffn_norm = make_norm(f, c.hidden_dim);
  b.ffn.up = make_linear(f, c.hidden_dim, c.ffn_dim, c.init_std);
  b.ffn.down = make_linear(f, c.ffn_dim, c.hidden_dim, c.init_std);
  return b;
}

template <typename T>
using Visitor = typename MileModel<T>::Visitor;

template <typename T>
void visit_linear(const std::string& prefix, Linear<T>& l, const Visitor<T>& fn) {
  fn(prefix + "/weight", l.weight);
  fn(prefix + "/bias", l.bias);
}

template <typename T>
void visit_norm(const std::string& prefix, LayerNorm<T>& n, const Visitor<T>& fn) {
  fn(prefix + "/gain", n.gain);
  fn(prefix + "/bias", n.bias);
}

template <typename T>
void visit_attention(const std::string& prefix, Attention<T>& a, const Visitor<T>& fn) {
  visit_linear(prefix + "/query", a.query, fn);
  visit_linear(prefix + "/key", a.key, fn);
  visit_linear(prefix + "/value", a.value, fn);
  visit_linear(prefix + "/output", a.output, fn);
}

template <typename T>
void visit_block(const std::string& prefix, Block<T>& b, const Visitor<T>& fn) {
  visit_norm(prefix + "/self_norm", b.self_norm, fn);
  visit_attention(prefix + "/self_attn", b.self_attn, fn);
  if (b.cross_attn) {
    visit_norm(prefix + "/cross_norm", *b.cross_norm, fn);
    visit_attention(prefix + "/cross_attn", *b.cross_attn, fn);
  }
  visit_norm(prefix + "/ffn_norm", b.ffn_norm, fn);
  visit_linear(prefix + "/ffn/up", b.ffn.up, fn);
  visit_linear(prefix + "/ffn/down", b.ffn.down, fn);
}

template <typename T>
void visit_attention_peft(const std::string& prefix, const std::string& site, Attention<T>& a,
                          const Visitor<T>& fn) {
  if (a.lora_query) {
    fn(prefix + site + ".lora_q/a", a.lora_query->a);
    fn(prefix + site + ".lora_q/b", a.lora_query->b);
  }
  if (a.lora_key) {
    fn(prefix + site + ".lora_k/a", a.lora_key->a);
    fn(prefix + site + ".lora_k/b", a.lora_key->b);
  }
  if (a.ia3) {
    fn(prefix + site + ".ia3/l_k", a.ia3->l_k);
    fn(prefix + site + ".ia3/l_v", a.ia3->l_v);
  }
}

std::vector<TokenId> iota_ids(std::size_t n) {
  std::vector<TokenId> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

template <typename T>
MileModel<T>::MileModel(const ModelConfig& config, std::uint64_t seed, Storage storage)
    : config_(config), shape_only_(storage == Storage::kShapeOnly) {
  config_.validate();
  ParamFactory<T> f(shape_only_, seed);
  const auto& c = config_;
  const auto d = c.hidden_dim;

  vit_.patch_embed = make_linear(f, c.patch_size * c.patch_size * c.channels, d, c.init_std);
  if (c.use_cls_token) vit_.cls_token = f.truncated_normal({1, d}, c.init_std);
  vit_.position = f.truncated_normal({c.num_patches() + (c.use_cls_token ? 1 : 0), d}, c.init_std);
  for (std::size_t i = 0; i < c.vit_layers; ++i) {
    vit_.blocks.push_back(make_block(f, c, AttentionKind::kBidirectional, false));
  }
  vit_.final_norm = make_norm(f, d);

  jtm_.token_embedding = f.truncated_normal({c.vocab_size, d}, c.init_std);
  jtm_.position = f.truncated_normal({c.max_text_len, d}, c.init_std);
  for (std::size_t i = 0; i < c.jtm_layers; ++i) {
    jtm_.blocks.push_back(make_block(f, c, AttentionKind::kBidirectional, true));
  }
  jtm_.final_norm = make_norm(f, d);

  dec_.position = f.truncated_normal({c.max_text_len, d}, c.init_std);
  for (std::size_t i = 0; i < c.dec_layers; ++i) {
    dec_.blocks.push_back(make_block(f, c, AttentionKind::kCausal, true));
  }
  dec_.final_norm = make_norm(f, d);
  dec_.lm_head = make_linear(f, d, c.vocab_size, c.init_std);
}

template <typename T>
std::vector<Block<T>>& MileModel<T>::blocks(Component c) {
  switch (c) {
    case Component::kVit:
      return vit_.blocks;
    case Component::kJtm:
      return jtm_.blocks;
    case Component::kDecoder:
      break;
  }
  return dec_.blocks;
}

template <typename T>
const std::vector<Block<T>>& MileModel<T>::blocks(Component c) const {
  return const_cast<MileModel*>(this)->blocks(c);
}

template <typename T>
PrefixSlot<T>& MileModel<T>::prefix_slot(Component c) {
  if (c == Component::kJtm) return jtm_.prefix;
  if (c == Component::kDecoder) return dec_.prefix;
  throw ConfigError("the image encoder has no prefix slot");
}

template <typename T>
void MileModel<T>::visit_base(Component c, const Visitor& fn) {
  const std::string root(component_name(c));
  switch (c) {
    case Component::kVit:
      visit_linear(root + "/patch_embed", vit_.patch_embed, fn);
      if (vit_.cls_token) fn(root + "/cls_token", *vit_.cls_token);
      fn(root + "/position", vit_.position);
      break;
    case Component::kJtm:
      fn(root + "/token_embedding", jtm_.token_embedding);
      fn(root + "/position", jtm_.position);
      break;
    case Component::kDecoder:
      fn(root + "/position", dec_.position);
      break;
  }
  auto& bs = blocks(c);
  for (std::size_t i = 0; i < bs.size(); ++i) {
    visit_block(root + "/layers/" + std::to_string(i), bs[i], fn);
  }
  switch (c) {
    case Component::kVit:
      visit_norm(root + "/final_norm", vit_.final_norm, fn);
      break;
    case Component::kJtm:
      visit_norm(root + "/final_norm", jtm_.final_norm, fn);
      break;
    case Component::kDecoder:
      visit_norm(root + "/final_norm", dec_.final_norm, fn);
      visit_linear(root + "/lm_head", dec_.lm_head, fn);
      break;
  }
}

template <typename T>
void MileModel<T>::visit_peft(Component c, const Visitor& fn) {
  const std::string root = "peft/" + std::string(component_name(c)) + "/";
  auto& bs = blocks(c);
  for (std::size_t i = 0; i < bs.size(); ++i) {
    const std::string layer = root + std::to_string(i) + "/";
    visit_attention_peft(layer, "self_attn", bs[i].self_attn, fn);
    if (bs[i].cross_attn) visit_attention_peft(layer, "cross_attn", *bs[i].cross_attn, fn);
    if (bs[i].ffn.l_ff) fn(layer + "ffn.ia3/l_ff", *bs[i].ffn.l_ff);
  }
  if (c == Component::kVit) return;
  auto& slot = prefix_slot(c);
  if (slot.reparam) {
    const std::string unit = root + "shared/prefix/";
    fn(unit + "embedding", slot.reparam->embedding);
    visit_linear(unit + "hidden", slot.reparam->hidden, fn);
    visit_linear(unit + "project", slot.reparam->project, fn);
  }
  if (slot.prompt) fn(root + "shared/ptv2/matrix", slot.prompt->matrix);
}

template <typename T>
std::vector<NamedTensor<T>> MileModel<T>::base_parameters(Component c) const {
  std::vector<NamedTensor<T>> out;
  const_cast<MileModel*>(this)->visit_base(
      c, [&](const std::string& name, Tensor<T>& t) { out.push_back({name, t}); });
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> MileModel<T>::peft_parameters(Component c) const {
  std::vector<NamedTensor<T>> out;
  const_cast<MileModel*>(this)->visit_peft(
      c, [&](const std::string& name, Tensor<T>& t) { out.push_back({name, t}); });
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> MileModel<T>::component_parameters(Component c) const {
  auto out = base_parameters(c);
  auto peft = peft_parameters(c);
  out.insert(out.end(), peft.begin(), peft.end());
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> MileModel<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  for (auto c : kComponents) {
    auto part = component_parameters(c);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& pixels, std::size_t patch_size) {
  if (pixels.ndim() != 3) {
    throw DimensionError("image must be [H x W x C], got " + shape_str(pixels.shape()));
  }
  const std::size_t h = pixels.dim(0), w = pixels.dim(1), ch = pixels.dim(2);
  if (h % patch_size != 0 || w % patch_size != 0) {
    throw DimensionError("image " + shape_str(pixels.shape()) + " is not divisible into " +
                         std::to_string(patch_size) + "px patches");
  }
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  const std::size_t width = patch_size * patch_size * ch;
  auto src = pixels.data();
  std::vector<T> out(gh * gw * width);
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      T* dst = out.data() + (py * gw + px) * width;
      for (std::size_t y = 0; y < patch_size; ++y) {
        const T* row = src.data() + ((py * patch_size + y) * w + px * patch_size) * ch;
        std::copy_n(row, patch_size * ch, dst + y * patch_size * ch);
      }
    }
  }
  return Tensor<T>::from({gh * gw, width}, std::move(out));
}

template <typename T>
Tensor<T> MileModel<T>::encode_image(const Tensor<T>& pixels) const {
  const auto& c = config_;
  if (pixels.ndim() != 3 || pixels.dim(0) != c.image_size || pixels.dim(1) != c.image_size ||
      pixels.dim(2) != c.channels) {
    throw DimensionError("expected image [" + std::to_string(c.image_size) + "x" +
                         std::to_string(c.image_size) + "x" + std::to_string(c.channels) +
                         "], got " + shape_str(pixels.shape()));
  }
  auto x = vit_.patch_embed.forward(patchify(pixels, c.patch_size));
  if (vit_.cls_token) x = concat_rows(*vit_.cls_token, x);
  x = add(x, vit_.position);
  for (const auto& b : vit_.blocks) x = b.forward(x, nullptr, nullptr);
  return vit_.final_norm.forward(x);
}

template <typename T>
Tensor<T> MileModel<T>::run_text_stack(const Tensor<T>& x_in, const std::vector<Block<T>>& bs,
                                       const PrefixSlot<T>& prefix, const Tensor<T>* visual,
                                       std::size_t length,
                                       std::vector<Tensor<T>>* first_weights) const {
  if (prefix.active() && prefix.length + length > config_.attention_budget) {
    throw ConfigError("prefix length " + std::to_string(prefix.length) + " + sequence length " +
                      std::to_string(length) + " exceeds attention_budget " +
                      std::to_string(config_.attention_budget));
  }
  const auto prefixes = prefix.layer_prefixes(bs.size(), config_.hidden_dim);
  auto x = x_in;
  for (std::size_t i = 0; i < bs.size(); ++i) {
    const KeyValuePrefix<T>* p = prefixes.empty() ? nullptr : &prefixes[i];
    x = bs[i].forward(x, visual, p, i == 0 ? first_weights : nullptr);
  }
  return x;
}

template <typename T>
Tensor<T> MileModel<T>::encode_jtm(std::span<const TokenId> tokens, const Tensor<T>& visual) const {
  if (tokens.empty()) throw InputError("encode_jtm: empty token sequence");
  if (tokens.size() > config_.max_text_len) {
    throw InputError("encode_jtm: " + std::to_string(tokens.size()) + " tokens exceed max_text_len " +
                     std::to_string(config_.max_text_len));
  }
  const auto positions = iota_ids(tokens.size());
  auto x = add(embedding_lookup(jtm_.token_embedding, tokens),
               embedding_lookup(jtm_.position, std::span<const TokenId>(positions)));
  x = run_text_stack(x, jtm_.blocks, jtm_.prefix, &visual, tokens.size(), nullptr);
  return jtm_.final_norm.forward(x);
}

template <typename T>
Tensor<T> MileModel<T>::encode_text_only(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw InputError("encode_text_only: empty token sequence");
  if (tokens.size() > config_.max_text_len) {
    throw InputError("encode_text_only: sequence exceeds max_text_len");
  }
  const auto positions = iota_ids(tokens.size());
  auto x = add(embedding_lookup(jtm_.token_embedding, tokens),
               embedding_lookup(jtm_.position, std::span<const TokenId>(positions)));
  x = run_text_stack(x, jtm_.blocks, jtm_.prefix, nullptr, tokens.size(), nullptr);
  return jtm_.final_norm.forward(x);
}

template <typename T>
Tensor<T> MileModel<T>::decode_impl(const Tensor<T>& fused, std::span<const TokenId> targets,
                                    std::vector<Tensor<T>>* weights) const {
  if (targets.empty()) throw InputError("decode_text: needs at least one target position");
  if (targets.size() > config_.max_text_len) {
    throw InputError("decode_text: " + std::to_string(targets.size()) +
                     " targets exceed max_text_len " + std::to_string(config_.max_text_len));
  }
  std::vector<TokenId> inputs;
  inputs.reserve(targets.size());
  inputs.push_back(config_.bos_id());
  inputs.insert(inputs.end(), targets.begin(), targets.end() - 1);
  const auto positions = iota_ids(inputs.size());
  auto x = add(embedding_lookup(jtm_.token_embedding, std::span<const TokenId>(inputs)),
               embedding_lookup(dec_.position, std::span<const TokenId>(positions)));
  x = run_text_stack(x, dec_.blocks, dec_.prefix, &fused, inputs.size(), weights);
  return dec_.lm_head.forward(dec_.final_norm.forward(x));
}

template <typename T>
Tensor<T> MileModel<T>::decode_text(const Tensor<T>& fused, std::span<const TokenId> targets) const {
  return decode_impl(fused, targets, nullptr);
}

template <typename T>
std::vector<Tensor<T>> MileModel<T>::decoder_self_attention(const Tensor<T>& fused,
                                                            std::span<const TokenId> targets) const {
  std::vector<Tensor<T>> weights;
  decode_impl(fused, targets, &weights);
  return weights;
}

template <typename T>
Tensor<T> MileModel<T>::forward_lm_loss(const Tensor<T>& pixels, std::span<const TokenId> question,
                                        std::span<const TokenId> answer) const {
  const auto visual = encode_image(pixels);
  const auto fused = encode_jtm(question, visual);
  const auto logits = decode_text(fused, answer);
  return lm_cross_entropy(logits, answer);
}

template <typename T>
std::vector<TokenId> MileModel<T>::generate(const Tensor<T>& pixels,
                                            std::span<const TokenId> question,
                                            std::size_t max_len) const {
  if (max_len == 0) throw InputError("generate: max_len must be at least 1");
  const auto visual = encode_image(pixels);
  const auto fused = encode_jtm(question, visual);
  const std::size_t limit = std::min(max_len, config_.max_text_len);
  std::vector<TokenId> out;
  std::vector<TokenId> probe;
  while (out.size() < limit) {
    probe = out;
    probe.push_back(config_.pad_id());  // placeholder; row n never reads it
    const auto logits = decode_text(fused, probe);
    const auto v = logits.cols();
    auto row = logits.data().subspan((probe.size() - 1) * v, v);
    const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    out.push_back(best);
    if (best == config_.eos_id()) break;
  }
  return out;
}

template <typename T>
MileModel<T> MileModel<T>::clone() const {
  MileModel copy = *this;
  auto deep = [](const std::string&, Tensor<T>& t) { t = t.clone(); };
  for (auto c : kComponents) {
    copy.visit_base(c, deep);
    copy.visit_peft(c, deep);
  }
  return copy;
}

template class ParamFactory<float>;
template class ParamFactory<double>;
template class MileModel<float>;
template class MileModel<double>;
template Tensor<float> patchify(const Tensor<float>&, std::size_t);
template Tensor<double> patchify(const Tensor<double>&, std::size_t);

}  // namespace mile
