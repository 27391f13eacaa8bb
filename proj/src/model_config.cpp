// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/model_config.hpp"

#include <charconv>
#include <sstream>

#include "mile/errors.hpp"

namespace mile {

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.hidden_dim = 768;
  c.num_heads = 12;
  c.ffn_dim = 3072;
  c.vit_layers = 12;
  c.jtm_layers = 12;
  c.dec_layers = 12;
  c.image_size = 480;
  c.patch_size = 16;
  c.vocab_size = 30522;
  c.max_text_len = 512;
  c.use_cls_token = true;
  c.prefix_hidden = 766;
  c.attention_budget = 1024;
  return c;
}

ModelConfig ModelConfig::toy() {
  return ModelConfig{};
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.hidden_dim = 16;
  c.num_heads = 2;
  c.ffn_dim = 32;
  c.image_size = 8;
  c.patch_size = 4;
  c.vocab_size = 32;
  c.max_text_len = 16;
  c.use_cls_token = true;
  c.prefix_hidden = 8;
  c.attention_budget = 32;
  c.init_std = 0.3;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (hidden_dim == 0 || num_heads == 0 || ffn_dim == 0) fail("dimensions must be positive");
  if (hidden_dim % num_heads != 0) fail("hidden_dim must be divisible by num_heads");
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    fail("image_size must be a positive multiple of patch_size");
  }
  if (channels == 0) fail("channels must be positive");
  if (vit_layers == 0 || jtm_layers == 0 || dec_layers == 0) fail("every component needs a layer");
  if (vocab_size < 5) fail("vocab_size must leave room for the four special ids");
  if (max_text_len == 0) fail("max_text_len must be positive");
  if (tie_lm_head) fail("tie_lm_head=true is not supported; the LM head is a decoder parameter");
  if (prefix_hidden == 0) fail("prefix_hidden must be positive");
  if (attention_budget < max_text_len) fail("attention_budget must be at least max_text_len");
  if (!(init_std > 0)) fail("init_std must be positive");
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_fields() const {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::ostringstream std_text;
  std_text.precision(17);
  std_text << init_std;
  return {
      {"hidden_dim", std::to_string(hidden_dim)},
      {"num_heads", std::to_string(num_heads)},
      {"ffn_dim", std::to_string(ffn_dim)},
      {"vit_layers", std::to_string(vit_layers)},
      {"jtm_layers", std::to_string(jtm_layers)},
      {"dec_layers", std::to_string(dec_layers)},
      {"image_size", std::to_string(image_size)},
      {"patch_size", std::to_string(patch_size)},
      {"channels", std::to_string(channels)},
      {"vocab_size", std::to_string(vocab_size)},
      {"max_text_len", std::to_string(max_text_len)},
      {"tie_lm_head", b(tie_lm_head)},
      {"use_cls_token", b(use_cls_token)},
      {"prefix_hidden", std::to_string(prefix_hidden)},
      {"attention_budget", std::to_string(attention_budget)},
      {"init_std", std_text.str()},
  };
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("model config: '" + key + "' expects a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("model config: '" + key + "' expects true/false, got '" + text + "'");
}

}  // namespace

ModelConfig ModelConfig::from_fields(const std::map<std::string, std::string>& fields,
                                     ModelConfig base) {
  ModelConfig c = base;
  const std::map<std::string, std::size_t ModelConfig::*> sizes = {
      {"hidden_dim", &ModelConfig::hidden_dim},   {"num_heads", &ModelConfig::num_heads},
      {"ffn_dim", &ModelConfig::ffn_dim},         {"vit_layers", &ModelConfig::vit_layers},
      {"jtm_layers", &ModelConfig::jtm_layers},   {"dec_layers", &ModelConfig::dec_layers},
      {"image_size", &ModelConfig::image_size},   {"patch_size", &ModelConfig::patch_size},
      {"channels", &ModelConfig::channels},       {"vocab_size", &ModelConfig::vocab_size},
      {"max_text_len", &ModelConfig::max_text_len}, {"prefix_hidden", &ModelConfig::prefix_hidden},
      {"attention_budget", &ModelConfig::attention_budget},
  };
  for (const auto& [key, value] : fields) {
    if (auto it = sizes.find(key); it != sizes.end()) {
      c.*(it->second) = parse_size(key, value);
    } else if (key == "tie_lm_head") {
      c.tie_lm_head = parse_bool(key, value);
    } else if (key == "use_cls_token") {
      c.use_cls_token = parse_bool(key, value);
    } else if (key == "init_std") {
      try {
        std::size_t used = 0;
        c.init_std = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw ConfigError("model config: 'init_std' expects a number, got '" + value + "'");
      }
    } else {
      throw ConfigError("model config: unknown field '" + key + "'");
    }
  }
  return c;
}

std::vector<std::string> ModelConfig::diff(const ModelConfig& other) const {
  std::vector<std::string> out;
  const auto mine = to_fields();
  const auto theirs = other.to_fields();
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].second != theirs[i].second) out.push_back(mine[i].first);
  }
  return out;
}

}  // namespace mile
