// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/peft.hpp"

#include <iostream>

namespace mile {
namespace {

constexpr double kLoraInitStd = 0.02;

template <typename T>
std::vector<Attention<T>*> attention_sites(MileModel<T>& model, Component c, bool with_cross) {
  std::vector<Attention<T>*> sites;
  for (auto& b : model.blocks(c)) {
    sites.push_back(&b.self_attn);
    if (with_cross && b.cross_attn) sites.push_back(&*b.cross_attn);
  }
  return sites;
}

std::string already(std::string_view what, Component c) {
  return std::string(what) + " is already attached to " + std::string(component_name(c));
}

}  // namespace

template <typename T>
void attach_lora(MileModel<T>& model, Component c, std::size_t rank, std::uint64_t seed) {
  if (rank == 0) throw ConfigError("LoRA rank must be at least 1");
  auto sites = attention_sites(model, c, true);
  for (auto* a : sites) {
    if (a->lora_query || a->lora_key) throw ContractError(already("LoRA", c));
  }
  ParamFactory<T> f(model.shape_only(), seed);
  const auto d = model.config().hidden_dim;
  for (auto* a : sites) {
    a->lora_query = LoraUnit<T>{f.normal({d, rank}, kLoraInitStd), f.zeros({rank, d}), rank};
    a->lora_key = LoraUnit<T>{f.normal({d, rank}, kLoraInitStd), f.zeros({rank, d}), rank};
  }
}

template <typename T>
std::size_t merge_lora(MileModel<T>& model, Component c) {
  std::size_t merged = 0;
  auto fold = [&merged](Linear<T>& proj, std::optional<LoraUnit<T>>& unit) {
    if (!unit) return;
    const auto delta = matmul(unit->a.detach(), unit->b.detach());
    auto w = proj.weight.data();
    auto dd = delta.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += dd[i];
    unit.reset();
    ++merged;
  };
  for (auto* a : attention_sites(model, c, true)) {
    fold(a->query, a->lora_query);
    fold(a->key, a->lora_key);
  }
  if (merged == 0) {
    std::cerr << "warning: merge_lora: no LoRA units attached to " << component_name(c) << "\n";
  }
  return merged;
}

template <typename T>
void attach_ia3(MileModel<T>& model, Component c, Ia3Sites sites) {
  auto attn = attention_sites(model, c, sites.cross_attention);
  for (auto* a : attn) {
    if (a->ia3) throw ContractError(already("IA3", c));
  }
  for (auto& b : model.blocks(c)) {
    if (b.ffn.l_ff) throw ContractError(already("IA3", c));
  }
  ParamFactory<T> f(model.shape_only(), 0);
  const auto& cfg = model.config();
  for (auto* a : attn) a->ia3 = Ia3AttentionUnit<T>{f.ones({cfg.hidden_dim}), f.ones({cfg.hidden_dim})};
  for (auto& b : model.blocks(c)) b.ffn.l_ff = f.ones({cfg.ffn_dim});
}

template <typename T>
void attach_prefix(MileModel<T>& model, Component c, std::size_t length, std::uint64_t seed) {
  auto& slot = model.prefix_slot(c);
  if (slot.kind != PrefixKind::kNone) throw ContractError(already("a prefix unit", c));
  const auto& cfg = model.config();
  if (length > cfg.attention_budget) {
    throw ConfigError("prefix length " + std::to_string(length) + " exceeds attention_budget " +
                      std::to_string(cfg.attention_budget));
  }
  slot.kind = PrefixKind::kPrefix;
  slot.length = length;
  if (length == 0) return;
  ParamFactory<T> f(model.shape_only(), seed);
  const auto d = cfg.hidden_dim;
  const auto out = model.blocks(c).size() * 2 * d;
  PrefixReparam<T> r;
  r.embedding = f.truncated_normal({length, d}, cfg.init_std);
  r.hidden = {f.truncated_normal({d, cfg.prefix_hidden}, cfg.init_std), f.zeros({cfg.prefix_hidden})};
  r.project = {f.truncated_normal({cfg.prefix_hidden, out}, cfg.init_std), f.zeros({out})};
  slot.reparam = std::move(r);
}

template <typename T>
void attach_ptv2(MileModel<T>& model, Component c, std::size_t length, std::uint64_t seed) {
  auto& slot = model.prefix_slot(c);
  if (slot.kind != PrefixKind::kNone) throw ContractError(already("a prefix unit", c));
  const auto& cfg = model.config();
  if (length > cfg.attention_budget) {
    throw ConfigError("prompt length " + std::to_string(length) + " exceeds attention_budget " +
                      std::to_string(cfg.attention_budget));
  }
  slot.kind = PrefixKind::kPTv2;
  slot.length = length;
  if (length == 0) return;
  ParamFactory<T> f(model.shape_only(), seed);
  const auto out = model.blocks(c).size() * 2 * cfg.hidden_dim;
  slot.prompt = PromptMatrix<T>{f.truncated_normal({length, out}, cfg.init_std)};
}

template <typename T>
void detach_prefix(MileModel<T>& model, Component c) {
  model.prefix_slot(c) = PrefixSlot<T>{};
}

#define MILE_INSTANTIATE_PEFT(T)                                                     \
  template void attach_lora(MileModel<T>&, Component, std::size_t, std::uint64_t);   \
  template std::size_t merge_lora(MileModel<T>&, Component);                         \
  template void attach_ia3(MileModel<T>&, Component, Ia3Sites);                      \
  template void attach_prefix(MileModel<T>&, Component, std::size_t, std::uint64_t); \
  template void attach_ptv2(MileModel<T>&, Component, std::size_t, std::uint64_t);   \
  template void detach_prefix(MileModel<T>&, Component);

MILE_INSTANTIATE_PEFT(float)
MILE_INSTANTIATE_PEFT(double)

#undef MILE_INSTANTIATE_PEFT

}  // namespace mile
