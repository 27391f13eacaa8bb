// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <random>

#include "mile/ops.hpp"
#include "mile/optim.hpp"
#include "mile/tensor.hpp"

namespace mile {
namespace {

using TD = Tensor<double>;
using TF = Tensor<float>;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

// Central differences of a scalar function of one tensor's entries.
std::vector<double> finite_difference(TD& x, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double saved = d[i];
    d[i] = saved + h;
    const double up = f();
    d[i] = saved - h;
    const double down = f();
    d[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Backpropagates `build` (scalar) and compares every input's gradient with
// central differences.
void check_gradients(std::vector<TD> inputs, const std::function<TD(const std::vector<TD>&)>& build) {
  for (auto& t : inputs) t.set_trainable(true);
  GradTape<double> tape;
  {
    ActiveTape<double> scope(tape);
    auto loss = build(inputs);
    tape.backward(loss);
  }
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto numeric = finite_difference(t, [&] { return build(inputs).item(); });
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      EXPECT_LT(rel_err(analytic[i], numeric[i]), 1e-4) << "entry " << i << ": " << analytic[i]
                                                        << " vs " << numeric[i];
    }
  }
}

// Weighted sum so every output entry has a distinct upstream gradient.
TD weighted(const TD& y, std::uint64_t seed = 99) {
  return sum(mul(y, random_tensor<double>(y.shape(), seed)));
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(TF::from({2, 3}, std::vector<float>(5)), DimensionError);
  EXPECT_THROW(TF::zeros({0, 3}), DimensionError);
  auto t = TF::zeros({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, ShapeOnlyTensorsHaveNoData) {
  auto t = TF::meta({768, 768});
  EXPECT_EQ(t.numel(), 589824u);
  EXPECT_THROW(t.data(), ContractError);
}

TEST(Matmul, IdentityAndHandArithmetic) {
  auto eye = TD::from({2, 2}, {1, 0, 0, 1});
  auto m = TD::from({2, 2}, {1.5, -2, 3, 4.25});
  auto out = matmul(eye, m);
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()),
            std::vector<double>(m.data().begin(), m.data().end()));
  auto r = matmul(TD::from({1, 2}, {1, 2}), TD::from({2, 1}, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r.item(), 11.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  auto a = random_tensor<float>({4, 5}, 1);
  auto b = random_tensor<float>({5, 3}, 2);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0;
      for (std::size_t p = 0; p < 5; ++p) ref += double(a.at(i, p)) * double(b.at(p, j));
      EXPECT_LE(std::abs(c.at(i, j) - ref), 1e-6 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(TF::zeros({2, 3}), TF::zeros({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos);
  }
}

TEST(Softmax, UniformAndStable) {
  auto u = softmax(TF::from({3}, {0, 0, 0}), 0);
  for (float v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
  auto s = softmax(TF::from({2}, {1000, 0}), 0);
  EXPECT_NEAR(s.data()[0], 1.0, 1e-6);
  EXPECT_NEAR(s.data()[1], 0.0, 1e-6);
}

TEST(Softmax, MatchesDoublePrecisionReference) {
  auto s = softmax(TF::from({3}, {1, 2, 3}), 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s.data()[i], std::exp(i + 1.0) / z, 1e-7);
}

TEST(Softmax, AlongFirstAxis) {
  auto x = random_tensor<double>({3, 4}, 5, 10.0);
  auto s = softmax(x, 0);
  for (std::size_t j = 0; j < 4; ++j) {
    double total = 0;
    for (std::size_t i = 0; i < 3; ++i) total += s.at(i, j);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Softmax, RowsSumToOneProperty) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> mag(0.1, 80.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + rng() % 6, cols = 1 + rng() % 40;
    auto x = random_tensor<float>({rows, cols}, rng(), mag(rng));
    auto s = softmax(x, 1);
    for (std::size_t i = 0; i < rows; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < cols; ++j) {
        EXPECT_GE(s.at(i, j), 0.0f);
        total += s.at(i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, NonFiniteInputIsNumericError) {
  EXPECT_THROW(softmax(TF::from({2}, {NAN, 0}), 0), NumericError);
}

TEST(LayerNorm, ConstantRowAndZeroGain) {
  auto ones = TF::full({4}, 1), zeros = TF::zeros({4});
  auto out = layer_norm(TF::full({1, 4}, 3.5f), ones, zeros);
  for (float v : out.data()) EXPECT_EQ(v, 0.0f);
  auto bias = TF::from({4}, {1, 2, 3, 4});
  auto out2 = layer_norm(random_tensor<float>({2, 4}, 3), zeros, bias);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out2.at(i, j), bias.data()[j]);
}

TEST(Gradients, LayerNorm) {
  check_gradients({random_tensor<double>({3, 6}, 11), random_tensor<double>({6}, 12),
                   random_tensor<double>({6}, 13)},
                  [](const std::vector<TD>& in) { return weighted(layer_norm(in[0], in[1], in[2])); });
}

TEST(Gradients, MatmulTransposeBias) {
  check_gradients({random_tensor<double>({3, 4}, 1), random_tensor<double>({5, 4}, 2),
                   random_tensor<double>({5}, 3)},
                  [](const std::vector<TD>& in) {
                    return weighted(add_bias(matmul(in[0], transpose(in[1])), in[2]));
                  });
}

TEST(Gradients, ElementwiseOps) {
  check_gradients({random_tensor<double>({3, 4}, 4), random_tensor<double>({3, 4}, 5),
                   random_tensor<double>({4}, 6)},
                  [](const std::vector<TD>& in) {
                    auto y = gelu(add(mul(in[0], in[1]), scale(in[0], 0.5)));
                    return weighted(tanh(scale_cols(y, in[2])));
                  });
}

TEST(Gradients, SoftmaxWithCausalMask) {
  check_gradients({random_tensor<double>({4, 6}, 8, 2.0)}, [](const std::vector<TD>& in) {
    return weighted(softmax(causal_mask(in[0], 2), 1));
  });
}

TEST(Gradients, ConcatAndSlice) {
  check_gradients({random_tensor<double>({2, 6}, 9), random_tensor<double>({3, 6}, 10)},
                  [](const std::vector<TD>& in) {
                    auto x = concat_rows(in[0], in[1]);
                    return weighted(concat_cols<double>({slice_cols(x, 4, 2), slice_cols(x, 0, 3)}));
                  });
}

TEST(Gradients, CrossEntropy) {
  const std::vector<TokenId> targets = {2, 0, 6};
  check_gradients({random_tensor<double>({3, 7}, 21, 3.0)}, [&](const std::vector<TD>& in) {
    return lm_cross_entropy(in[0], targets, {false, true, false});
  });
}

TEST(Gelu, ZeroIsZero) { EXPECT_EQ(gelu(TF::from({1}, {0})).item(), 0.0f); }

TEST(Embedding, LookupAndDuplicateGradient) {
  auto table = random_tensor<double>({5, 3}, 4);
  table.set_trainable(true);
  const std::vector<TokenId> ids = {2, 4, 2};
  GradTape<double> tape;
  TD upstream = random_tensor<double>({3, 3}, 77);
  {
    ActiveTape<double> scope(tape);
    auto rows = embedding_lookup(table, ids);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(rows.at(0, j), table.at(2, j));
    tape.backward(sum(mul(rows, upstream)));
  }
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(table.grad()[2 * 3 + j], upstream.at(0, j) + upstream.at(2, j));
    EXPECT_DOUBLE_EQ(table.grad()[4 * 3 + j], upstream.at(1, j));
    EXPECT_EQ(table.grad()[0 * 3 + j], 0.0);
  }
  EXPECT_THROW(embedding_lookup(table, std::vector<TokenId>{5}), IndexError);
}

TEST(CrossEntropy, OracleCases) {
  // Confident logits on every target.
  auto sure = TD::from({2, 3}, {0, 200, 0, 200, 0, 0});
  EXPECT_NEAR(lm_cross_entropy(sure, std::vector<TokenId>{1, 0}).item(), 0.0, 1e-12);
  auto flat = TD::zeros({4, 7});
  EXPECT_NEAR(lm_cross_entropy(flat, std::vector<TokenId>{0, 1, 2, 6}).item(), std::log(7.0), 1e-12);

  auto logits = random_tensor<float>({3, 7}, 31, 4.0);
  const std::vector<TokenId> t = {3, 6, 0};
  double ref = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < 7; ++j) z += std::exp(double(logits.at(i, j)));
    ref += std::log(z) - double(logits.at(i, t[i]));
  }
  EXPECT_NEAR(lm_cross_entropy(logits, t).item(), ref / 3, 1e-6);
}

TEST(CrossEntropy, AllMaskedIsDegenerate) {
  EXPECT_THROW(lm_cross_entropy(TF::zeros({2, 3}), std::vector<TokenId>{0, 1}, {true, true}),
               InputError);
}

TEST(Backward, LinearCaseAndStaleTape) {
  auto w = TD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  w.set_trainable(true);
  auto x = TD::from({3, 1}, {0.5, -1, 2});
  GradTape<double> tape;
  TD loss;
  {
    ActiveTape<double> scope(tape);
    loss = sum(matmul(w, x));
  }
  tape.backward(loss);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(w.grad()[i * 3 + j], x.data()[j]);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_THROW(tape.backward(loss), ContractError);
}

TEST(Backward, FrozenTensorGetsNoGradient) {
  auto frozen = TD::from({2, 2}, {1, 2, 3, 4});
  auto live = TD::from({2, 2}, {1, 0, 0, 1});
  live.set_trainable(true);
  GradTape<double> tape;
  {
    ActiveTape<double> scope(tape);
    tape.backward(sum(matmul(frozen, live)));
  }
  EXPECT_FALSE(frozen.has_grad());
  EXPECT_TRUE(live.has_grad());
}

TEST(Cosine, Schedule) {
  EXPECT_DOUBLE_EQ(cosine_lr_at(0, 100, 2e-5, 0), 2e-5);
  EXPECT_NEAR(cosine_lr_at(100, 100, 2e-5, 0), 0.0, 1e-20);
  EXPECT_NEAR(cosine_lr_at(50, 100, 2e-5, 1e-6), (2e-5 + 1e-6) / 2, 1e-18);
  EXPECT_THROW(cosine_lr_at(0, 0, 2e-5, 0), ConfigError);
  EXPECT_THROW(cosine_lr_at(101, 100, 2e-5, 0), ConfigError);
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParameters) {
  auto p = TF::from({3}, {1.0f, -2.0f, 0.5f});
  p.set_trainable(true);
  const auto before = std::vector<float>(p.data().begin(), p.data().end());
  AdamW<float> opt({{"p", p}}, {.base_lr = 1e-3, .weight_decay = 0.0, .total_steps = 10});
  p.ensure_grad();
  opt.step();
  EXPECT_EQ(std::memcmp(before.data(), p.data().data(), 3 * sizeof(float)), 0);
}

TEST(AdamW, SingleScalarStepMatchesHandCalculation) {
  auto p = TD::from({1}, {0.5});
  p.set_trainable(true);
  AdamW<double> opt({{"p", p}}, {.base_lr = 0.1, .weight_decay = 0.01, .total_steps = 4});
  p.ensure_grad()[0] = 0.2;
  const double lr = opt.step();
  // m = 0.02, v = 4e-5; bias-corrected mhat = 0.2, vhat = 0.04.
  const double expected = 0.5 * (1 - 0.1 * 0.01) - 0.1 * 0.2 / (0.2 + 1e-8);
  EXPECT_DOUBLE_EQ(lr, 0.1);
  EXPECT_NEAR(p.item(), expected, 1e-15);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(AdamW, DecoupledDecayOnly) {
  auto p = TD::from({2}, {2.0, -4.0});
  p.set_trainable(true);
  AdamW<double> opt({{"p", p}}, {.base_lr = 0.01, .weight_decay = 0.05, .total_steps = 10});
  p.ensure_grad();
  opt.step();
  EXPECT_NEAR(p.data()[0], 2.0 - 0.01 * 0.05 * 2.0, 1e-15);
  EXPECT_NEAR(p.data()[1], -4.0 + 0.01 * 0.05 * 4.0, 1e-15);
}

TEST(AdamW, MissingGradientIsContractError) {
  auto p = TF::zeros({2});
  p.set_trainable(true);
  AdamW<float> opt({{"p", p}}, {.total_steps = 2});
  EXPECT_THROW(opt.step(), ContractError);
}

TEST(AdamW, FrozenTensorsAreNotTracked) {
  auto frozen = TF::zeros({2});
  auto live = TF::zeros({2});
  live.set_trainable(true);
  AdamW<float> opt({{"frozen", frozen}, {"live", live}}, {.total_steps = 2});
  EXPECT_EQ(opt.params().size(), 1u);
  EXPECT_EQ(opt.state().first_moment.count("frozen"), 0u);
}

}  // namespace
}  // namespace mile
