// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#include "mile/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace mile {
namespace {

template <typename T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T, typename... Ts>
GradTape<T>* recorder(const Ts&... inputs) {
  auto* tape = GradTape<T>::active();
  if (tape == nullptr) return nullptr;
  return (inputs.requires_grad() || ...) ? tape : nullptr;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ad[i * k + p];
      const T* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto result = make_result<T>({m, n}, std::move(out));
  if (auto* tape = recorder<T>(a, b)) {
    tape->record(result, [a, b, result, m, k, n]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      if (a.requires_grad()) {
        auto da = a.ensure_grad();
        auto bd = b.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            T acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += dc[i * n + j] * bd[p * n + j];
            da[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        auto db = b.ensure_grad();
        auto ad = a.data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const T av = ad[i * k + p];
            for (std::size_t j = 0; j < n; ++j) db[p * n + j] += av * dc[i * n + j];
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  auto ad = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  auto result = make_result<T>({n, m}, std::move(out));
  if (auto* tape = recorder<T>(a)) {
    tape->record(result, [a, result, m, n]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      auto da = a.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) da[i * n + j] += dc[j * m + i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "add");
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto result = make_result<T>(a.shape(), std::move(out));
  if (auto* tape = recorder<T>(a, b)) {
    tape->record(result, [a, b, result]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      for (auto* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_2d(x, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  auto xd = x.data();
  auto bd = bias.data();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] + bd[j];
  auto result = make_result<T>({m, n}, std::move(out));
  if (auto* tape = recorder<T>(x, bias)) {
    tape->record(result, [x, bias, result, m, n]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      if (x.requires_grad()) {
        auto g = x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[i];
      }
      if (bias.requires_grad()) {
        auto g = bias.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += dc[i * n + j];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "mul");
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto result = make_result<T>(a.shape(), std::move(out));
  if (auto* tape = recorder<T>(a, b)) {
    tape->record(result, [a, b, result]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      if (a.requires_grad()) {
        auto g = a.ensure_grad();
        auto bd = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto g = b.ensure_grad();
        auto ad = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[i] * ad[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale_cols(const Tensor<T>& x, const Tensor<T>& v) {
  require_2d(x, "scale_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (v.numel() != n) {
    throw DimensionError("scale_cols: vector " + shape_str(v.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  auto xd = x.data();
  auto vd = v.data();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] * vd[j];
  auto result = make_result<T>({m, n}, std::move(out));
  if (auto* tape = recorder<T>(x, v)) {
    tape->record(result, [x, v, result, m, n]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      if (x.requires_grad()) {
        auto g = x.ensure_grad();
        auto vd = v.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += dc[i * n + j] * vd[j];
      }
      if (v.requires_grad()) {
        auto g = v.ensure_grad();
        auto xd = x.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += dc[i * n + j] * xd[i * n + j];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor;
  auto result = make_result<T>(x.shape(), std::move(out));
  if (auto* tape = recorder<T>(x)) {
    tape->record(result, [x, result, factor]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      auto g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[i] * factor;
    });
  }
  return result;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = static_cast<T>(0.044715);
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xd[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  auto result = make_result<T>(x.shape(), std::move(out));
  if (auto* tape = recorder<T>(x)) {
    tape->record(result, [x, result]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      auto g = x.ensure_grad();
      auto xd = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xd[i];
        const T t = std::tanh(kC * (v + kA * v * v * v));
        const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
        g[i] += dc[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
  auto result = make_result<T>(x.shape(), std::move(out));
  if (auto* tape = recorder<T>(x)) {
    tape->record(result, [x, result]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      auto y = result.data();
      auto g = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[i] * (T(1) - y[i] * y[i]);
    });
  }
  return result;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        const T v = xd[base + j * inner];
        if (std::isnan(v) || v == std::numeric_limits<T>::infinity()) {
          throw NumericError("softmax: non-finite input");
        }
        mx = std::max(mx, v);
      }
      if (!std::isfinite(mx)) throw NumericError("softmax: every entry of a slice is -inf");
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  auto result = make_result<T>(shape, std::move(out));
  if (auto* tape = recorder<T>(x)) {
    tape->record(result, [x, result, outer, inner, n]() mutable {
      if (!result.has_grad()) return;
      auto dy = result.grad();
      auto y = result.data();
      auto g = x.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += dy[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            g[idx] += y[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> causal_mask(const Tensor<T>& x, std::size_t offset) {
  require_2d(x, "causal_mask");
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto xd = x.data();
  std::vector<T> out(xd.begin(), xd.end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + offset + 1; j < n; ++j)
      out[i * n + j] = -std::numeric_limits<T>::infinity();
  auto result = make_result<T>({m, n}, std::move(out));
  if (auto* tape = recorder<T>(x)) {
    tape->record(result, [x, result, m, n, offset]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      auto g = x.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < std::min(n, i + offset + 1); ++j) g[i * n + j] += dc[i * n + j];
    });
  }
  return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_2d(x, "layer_norm");
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  }
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  std::vector<T> out(m * d), xhat(m * d), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xd.data() + i * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gd[j] + bd[j];
    }
  }
  auto result = make_result<T>({m, d}, std::move(out));
  if (auto* tape = recorder<T>(x, gain, bias)) {
    tape->record(result, [x, gain, bias, result, xhat = std::move(xhat),
                          inv_std = std::move(inv_std), m, d]() mutable {
      if (!result.has_grad()) return;
      auto dy = result.grad();
      if (gain.requires_grad()) {
        auto g = gain.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) g[j] += dy[i * d + j] * xhat[i * d + j];
      }
      if (bias.requires_grad()) {
        auto g = bias.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) g[j] += dy[i * d + j];
      }
      if (x.requires_grad()) {
        auto g = x.ensure_grad();
        auto gd = gain.data();
        for (std::size_t i = 0; i < m; ++i) {
          T mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = dy[i * d + j] * gd[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[i * d + j];
          }
          mean_dxhat /= static_cast<T>(d);
          mean_dxhat_xhat /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = dy[i * d + j] * gd[j];
            g[i * d + j] += inv_std[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const TokenId> ids) {
  require_2d(table, "embedding_lookup");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw InputError("embedding_lookup: empty id sequence");
  std::vector<TokenId> idx(ids.begin(), ids.end());
  for (auto id : idx) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  auto td = table.data();
  std::vector<T> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(td.data() + static_cast<std::size_t>(idx[r]) * d, d, out.data() + r * d);
  auto result = make_result<T>({idx.size(), d}, std::move(out));
  if (auto* tape = recorder<T>(table)) {
    tape->record(result, [table, result, idx = std::move(idx), d]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      auto g = table.ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        T* row = g.data() + static_cast<std::size_t>(idx[r]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += dc[r * d + j];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& top, const Tensor<T>& bottom) {
  require_2d(top, "concat_rows");
  require_2d(bottom, "concat_rows");
  if (top.dim(1) != bottom.dim(1)) {
    throw DimensionError("concat_rows: column mismatch " + shape_str(top.shape()) + " vs " +
                         shape_str(bottom.shape()));
  }
  const std::size_t split = top.numel();
  std::vector<T> out;
  out.reserve(split + bottom.numel());
  auto td = top.data();
  auto bd = bottom.data();
  out.insert(out.end(), td.begin(), td.end());
  out.insert(out.end(), bd.begin(), bd.end());
  auto result = make_result<T>({top.dim(0) + bottom.dim(0), top.dim(1)}, std::move(out));
  if (auto* tape = recorder<T>(top, bottom)) {
    tape->record(result, [top, bottom, result, split]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      if (top.requires_grad()) {
        auto g = top.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[i];
      }
      if (bottom.requires_grad()) {
        auto g = bottom.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dc[split + i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.dim(0) != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    n += p.dim(1);
  }
  std::vector<T> out(m * n);
  std::size_t offset = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    auto pd = p.data();
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(pd.data() + i * w, w, out.data() + i * n + offset);
    offset += w;
    any_grad = any_grad || p.requires_grad();
  }
  auto result = make_result<T>({m, n}, std::move(out));
  auto* tape = GradTape<T>::active();
  if (tape != nullptr && any_grad) {
    tape->record(result, [parts, result, m, n]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          auto g = p.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * w + j] += dc[i * n + offset + j];
        }
        offset += w;
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t len) {
  require_2d(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (len == 0 || start + len > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") outside " + shape_str(x.shape()));
  }
  auto xd = x.data();
  std::vector<T> out(m * len);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(xd.data() + i * n + start, len, out.data() + i * len);
  auto result = make_result<T>({m, len}, std::move(out));
  if (auto* tape = recorder<T>(x)) {
    tape->record(result, [x, result, m, n, start, len]() mutable {
      if (!result.has_grad()) return;
      auto dc = result.grad();
      auto g = x.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) g[i * n + start + j] += dc[i * len + j];
    });
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  auto result = make_result<T>({1}, {total});
  if (auto* tape = recorder<T>(x)) {
    tape->record(result, [x, result]() mutable {
      if (!result.has_grad()) return;
      const T dc = result.grad()[0];
      for (auto& g : x.ensure_grad()) g += dc;
    });
  }
  return result;
}

template <typename T>
Tensor<T> lm_cross_entropy(const Tensor<T>& logits, std::span<const TokenId> targets,
                           const std::vector<bool>& ignore) {
  require_2d(logits, "lm_cross_entropy");
  const std::size_t len = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != len) {
    throw DimensionError("lm_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  if (!ignore.empty() && ignore.size() != len) {
    throw DimensionError("lm_cross_entropy: ignore mask length " + std::to_string(ignore.size()) +
                         " != " + std::to_string(len));
  }
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  std::vector<bool> scored(len, true);
  std::size_t count = 0;
  for (std::size_t t = 0; t < len; ++t) {
    if (!ignore.empty() && ignore[t]) scored[t] = false;
    if (!scored[t]) continue;
    if (tgt[t] < 0 || static_cast<std::size_t>(tgt[t]) >= vocab) {
      throw IndexError("target id " + std::to_string(tgt[t]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    ++count;
  }
  if (count == 0) throw InputError("lm_cross_entropy: every position is masked (degenerate batch)");

  auto ld = logits.data();
  std::vector<T> probs(len * vocab, T(0));
  T total = 0;
  for (std::size_t t = 0; t < len; ++t) {
    if (!scored[t]) continue;
    const T* row = ld.data() + t * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T z = 0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    total += lse - row[tgt[t]];
    for (std::size_t j = 0; j < vocab; ++j) probs[t * vocab + j] = std::exp(row[j] - lse);
  }
  const T inv = T(1) / static_cast<T>(count);
  auto result = make_result<T>({1}, {total * inv});
  if (auto* tape = recorder<T>(logits)) {
    tape->record(result, [logits, result, probs = std::move(probs), tgt = std::move(tgt),
                          scored = std::move(scored), inv, len, vocab]() mutable {
      if (!result.has_grad()) return;
      const T dc = result.grad()[0] * inv;
      auto g = logits.ensure_grad();
      for (std::size_t t = 0; t < len; ++t) {
        if (!scored[t]) continue;
        for (std::size_t j = 0; j < vocab; ++j) g[t * vocab + j] += dc * probs[t * vocab + j];
        g[t * vocab + static_cast<std::size_t>(tgt[t])] -= dc;
      }
    });
  }
  return result;
}

#define MILE_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> transpose(const Tensor<T>&);                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale_cols(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> gelu(const Tensor<T>&);                                                 \
  template Tensor<T> tanh(const Tensor<T>&);                                                 \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> causal_mask(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const TokenId>);           \
  template Tensor<T> concat_rows(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                             \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> lm_cross_entropy(const Tensor<T>&, std::span<const TokenId>,            \
                                      const std::vector<bool>&);

MILE_INSTANTIATE_OPS(float)
MILE_INSTANTIATE_OPS(double)

#undef MILE_INSTANTIATE_OPS

}  // namespace mile
