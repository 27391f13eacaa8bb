// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "mile/model.hpp"
#include "mile/tokenizer.hpp"
#include "test_support.hpp"

namespace mile {
namespace {

using testing::random_example;
using testing::random_pixels;
using testing::random_tokens;

TEST(ModelConfig, PresetsValidate) {
  EXPECT_NO_THROW(ModelConfig::paper().validate());
  EXPECT_NO_THROW(ModelConfig::toy().validate());
  EXPECT_NO_THROW(ModelConfig::micro().validate());
  EXPECT_EQ(ModelConfig::paper().num_patches(), 900u);
}

TEST(ModelConfig, TiedHeadIsRejected) {
  auto cfg = ModelConfig::toy();
  cfg.tie_lm_head = true;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ModelConfig, FieldsRoundTripAndDiff) {
  const auto paper = ModelConfig::paper();
  std::map<std::string, std::string> fields;
  for (const auto& [k, v] : paper.to_fields()) fields[k] = v;
  EXPECT_EQ(ModelConfig::from_fields(fields), paper);
  auto other = paper;
  other.hidden_dim = 512;
  other.dec_layers = 6;
  EXPECT_EQ(paper.diff(other), (std::vector<std::string>{"hidden_dim", "dec_layers"}));
  EXPECT_THROW(ModelConfig::from_fields({{"hidden_dims", "3"}}), ConfigError);
  EXPECT_THROW(ModelConfig::from_fields({{"hidden_dim", "abc"}}), ConfigError);
}

TEST(Tokenizer, RoundTripAndSpecials) {
  ByteTokenizer tok;
  auto q = tok.encode_question("is it ct?");
  EXPECT_EQ(q.front(), ByteTokenizer::kBos);
  EXPECT_EQ(q.back(), ByteTokenizer::kSep);
  auto a = tok.encode_answer("yes");
  EXPECT_EQ(a.back(), ByteTokenizer::kEos);
  EXPECT_EQ(tok.decode(a), "yes");
  EXPECT_EQ(tok.decode(q), "is it ct?");
  const auto toy = ModelConfig::toy();
  EXPECT_EQ(toy.eos_id(), ByteTokenizer::kEos);
  EXPECT_EQ(toy.pad_id(), ByteTokenizer::kPad);
}

TEST(Patchify, OrderIsRowColumnChannel) {
  std::vector<double> px(4 * 4 * 1);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = double(i);
  auto p = patchify(Tensor<double>::from({4, 4, 1}, px), 2);
  EXPECT_EQ(p.shape(), (Shape{4, 4}));
  // Second patch is the top-right 2x2 block.
  EXPECT_EQ(p.at(1, 0), 2.0);
  EXPECT_EQ(p.at(1, 1), 3.0);
  EXPECT_EQ(p.at(1, 2), 6.0);
  EXPECT_EQ(p.at(1, 3), 7.0);
}

TEST(Model, ShapesThroughThePipeline) {
  const auto cfg = ModelConfig::toy();
  MileModel<float> model(cfg, 3);
  auto visual = model.encode_image(random_pixels<float>(cfg, 1));
  EXPECT_EQ(visual.shape(), (Shape{cfg.num_patches(), cfg.hidden_dim}));
  auto fused = model.encode_jtm(random_tokens(cfg, 7, 2), visual);
  EXPECT_EQ(fused.shape(), (Shape{7, cfg.hidden_dim}));
  auto logits = model.decode_text(fused, random_tokens(cfg, 4, 3));
  EXPECT_EQ(logits.shape(), (Shape{4, cfg.vocab_size}));
  EXPECT_EQ(model.encode_text_only(random_tokens(cfg, 5, 4)).shape(), (Shape{5, cfg.hidden_dim}));
}

TEST(Model, ClsTokenAddsOneVisualRow) {
  auto cfg = ModelConfig::micro();
  MileModel<double> model(cfg, 1);
  EXPECT_EQ(model.encode_image(random_pixels<double>(cfg, 1)).dim(0), cfg.num_patches() + 1);
}

TEST(Model, InputErrors) {
  const auto cfg = ModelConfig::toy();
  MileModel<float> model(cfg, 3);
  auto bad = Tensor<float>::zeros({cfg.image_size + 1, cfg.image_size, cfg.channels});
  EXPECT_THROW(model.encode_image(bad), DimensionError);
  auto visual = model.encode_image(random_pixels<float>(cfg, 1));
  EXPECT_THROW(model.encode_jtm(std::vector<TokenId>{}, visual), InputError);
  EXPECT_THROW(model.encode_jtm(random_tokens(cfg, cfg.max_text_len + 1, 1), visual), InputError);
  EXPECT_THROW(model.encode_jtm(std::vector<TokenId>{TokenId(cfg.vocab_size)}, visual), IndexError);
}

TEST(Model, DecoderIsCausal) {
  const auto cfg = ModelConfig::toy();
  MileModel<double> model(cfg, 5);
  auto fused = model.encode_jtm(random_tokens(cfg, 6, 1), model.encode_image(random_pixels<double>(cfg, 2)));
  auto targets = random_tokens(cfg, 6, 3);
  auto base = model.decode_text(fused, targets);
  auto changed = targets;
  changed[4] = (changed[4] + 17) % 200;
  auto after = model.decode_text(fused, changed);
  // Row t sees targets[<t], so rows 0..4 cannot change.
  for (std::size_t t = 0; t <= 4; ++t)
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) EXPECT_EQ(base.at(t, v), after.at(t, v));
  bool row5_changed = false;
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) row5_changed |= base.at(5, v) != after.at(5, v);
  EXPECT_TRUE(row5_changed);
}

TEST(Model, SelfAttentionWeightsAreLowerTriangular) {
  const auto cfg = ModelConfig::toy();
  MileModel<float> model(cfg, 9);
  auto fused = model.encode_jtm(random_tokens(cfg, 4, 1), model.encode_image(random_pixels<float>(cfg, 2)));
  auto weights = model.decoder_self_attention(fused, random_tokens(cfg, 5, 3));
  ASSERT_EQ(weights.size(), cfg.num_heads);
  for (const auto& w : weights) {
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double row = 0;
      for (std::size_t j = 0; j < w.cols(); ++j) {
        if (j > i) EXPECT_EQ(w.at(i, j), 0.0f);
        row += w.at(i, j);
      }
      EXPECT_NEAR(row, 1.0, 1e-5);
    }
  }
}

TEST(Model, LossIsFiniteAndNearUniformAtInit) {
  const auto cfg = ModelConfig::toy();
  MileModel<double> model(cfg, 2);
  auto ex = random_example<double>(cfg, 4);
  const double loss = model.forward_lm_loss(ex.pixels, ex.question, ex.answer).item();
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, std::log(double(cfg.vocab_size)), 0.2);
}

TEST(Model, GenerateStopsAtMaxLen) {
  const auto cfg = ModelConfig::toy();
  MileModel<float> model(cfg, 2);
  auto px = random_pixels<float>(cfg, 1);
  auto q = random_tokens(cfg, 4, 2);
  EXPECT_EQ(model.generate(px, q, 1).size(), 1u);
  EXPECT_LE(model.generate(px, q, 6).size(), 6u);
  EXPECT_THROW(model.generate(px, q, 0), InputError);
}

TEST(Model, SameSeedSameWeights) {
  const auto cfg = ModelConfig::toy();
  MileModel<float> a(cfg, 42), b(cfg, 42), c(cfg, 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(testing::bitwise_equal(pa[i].tensor, pb[i].tensor)) << pa[i].name;
    any_diff |= !testing::bitwise_equal(pa[i].tensor, pc[i].tensor);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, CloneIsIndependent) {
  const auto cfg = ModelConfig::micro();
  MileModel<double> a(cfg, 1);
  auto b = a.clone();
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_FALSE(pa[i].tensor.same_storage(pb[i].tensor));
  pb[0].tensor.data()[0] += 1;
  EXPECT_NE(pa[0].tensor.data()[0], pb[0].tensor.data()[0]);
}

TEST(Model, NamesAreUniqueAndPrefixed) {
  MileModel<float> model(ModelConfig::toy(), 1);
  std::set<std::string> seen;
  for (auto c : kComponents) {
    for (const auto& p : model.base_parameters(c)) {
      EXPECT_EQ(p.name.rfind(std::string(component_name(c)) + "/", 0), 0u) << p.name;
      EXPECT_TRUE(seen.insert(p.name).second) << p.name;
    }
  }
  EXPECT_TRUE(seen.count("jtm/token_embedding"));
  EXPECT_TRUE(seen.count("dec/lm_head/weight"));
}

TEST(Model, ShapeOnlyModelCountsWithoutStorage) {
  MileModel<float> model(ModelConfig::paper(), 0, MileModel<float>::Storage::kShapeOnly);
  std::uint64_t total = 0;
  for (const auto& p : model.parameters()) {
    EXPECT_TRUE(p.tensor.is_meta());
    total += p.tensor.numel();
  }
  EXPECT_EQ(total, 360883770u);
}

TEST(Model, ZeroCrossProjectionMatchesTextOnlyPath) {
  const auto cfg = ModelConfig::toy();
  MileModel<float> model(cfg, 6);
  for (auto& b : model.blocks(Component::kJtm)) {
    for (auto& v : b.cross_attn->output.weight.data()) v = 0;
    for (auto& v : b.cross_attn->output.bias.data()) v = 0;
  }
  auto tokens = random_tokens(cfg, 6, 1);
  auto fused = model.encode_jtm(tokens, model.encode_image(random_pixels<float>(cfg, 2)));
  EXPECT_TRUE(testing::bitwise_equal(fused, model.encode_text_only(tokens)));
}

TEST(Model, ZeroValueScalingZeroesAttention) {
  const auto cfg = ModelConfig::toy();
  MileModel<float> model(cfg, 6);
  auto& attn = model.blocks(Component::kDecoder)[0].self_attn;
  const auto d = cfg.hidden_dim;
  attn.ia3 = Ia3AttentionUnit<float>{Tensor<float>::full({d}, 1), Tensor<float>::zeros({d})};
  auto x = random_pixels<float>(cfg, 3);
  auto rows = Tensor<float>::from({4, d}, std::vector<float>(x.data().begin(), x.data().begin() + 4 * d));
  const auto out = attn.attend(rows, rows, nullptr);
  for (float v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Model, ComponentsPartitionParameters) {
  MileModel<float> model(ModelConfig::toy(), 1);
  std::size_t sum = 0;
  for (auto c : kComponents) sum += model.component_parameters(c).size();
  EXPECT_EQ(sum, model.parameters().size());
}

TEST(Model, GenerationIsDeterministic) {
  const auto cfg = ModelConfig::toy();
  MileModel<float> model(cfg, 2);
  auto px = random_pixels<float>(cfg, 1);
  auto q = random_tokens(cfg, 4, 2);
  EXPECT_EQ(model.generate(px, q, 8), model.generate(px, q, 8));
}

}  // namespace
}  // namespace mile
