/* Copyright 2026 The PRTR Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Differentiable primitives. Every op here has a finite-difference test in
// tests/ops_test.cpp and in the acceptance gradient suite.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "prtr/tensor.hpp"

namespace prtr {

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Elementwise unary op with derivative expressed through (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D dfdx) {
  auto x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  std::vector<T> saved_x(x.begin(), x.end());
  std::vector<T> saved_y = y;
  return make_op<T>(op, a.shape(), std::move(y), {a},
                    [sx = std::move(saved_x), sy = std::move(saved_y), dfdx](Node<T>& n) {
                      T* ga = input_grad(n, 0);
                      for (std::size_t i = 0; i < sx.size(); ++i) ga[i] += n.grad[i] * dfdx(sx[i], sy[i]);
                    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_op<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (T* g = detail::input_grad(n, k)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_op<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& n) {
    if (T* g = detail::input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
    if (T* g = detail::input_grad(n, 1)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  std::vector<T> sx(x.begin(), x.end()), sy(y.begin(), y.end());
  return detail::make_op<T>("mul", a.shape(), std::move(out), {a, b},
                            [sx = std::move(sx), sy = std::move(sy)](Node<T>& n) {
                              if (T* g = detail::input_grad(n, 0)) {
                                for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * sy[i];
                              }
                              if (T* g = detail::input_grad(n, 1)) {
                                for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * sx[i];
                              }
                            });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("div", a, b);
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / y[i];
  std::vector<T> sy(y.begin(), y.end()), so = out;
  return detail::make_op<T>("div", a.shape(), std::move(out), {a, b},
                            [sy = std::move(sy), so = std::move(so)](Node<T>& n) {
                              if (T* g = detail::input_grad(n, 0)) {
                                for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] / sy[i];
                              }
                              if (T* g = detail::input_grad(n, 1)) {
                                for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i] * so[i] / sy[i];
                              }
                            });
}

// Gradient goes to `a` on ties.
template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("minimum", a, b);
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  std::vector<unsigned char> pick_a(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    pick_a[i] = x[i] <= y[i];
    out[i] = pick_a[i] ? x[i] : y[i];
  }
  return detail::make_op<T>("minimum", a.shape(), std::move(out), {a, b},
                            [pick_a = std::move(pick_a)](Node<T>& n) {
                              T* ga = detail::input_grad(n, 0);
                              T* gb = detail::input_grad(n, 1);
                              for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                if (pick_a[i]) {
                                  if (ga) ga[i] += n.grad[i];
                                } else if (gb) {
                                  gb[i] += n.grad[i];
                                }
                              }
                            });
}

template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("maximum", a, b);
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  std::vector<unsigned char> pick_a(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    pick_a[i] = x[i] >= y[i];
    out[i] = pick_a[i] ? x[i] : y[i];
  }
  return detail::make_op<T>("maximum", a.shape(), std::move(out), {a, b},
                            [pick_a = std::move(pick_a)](Node<T>& n) {
                              T* ga = detail::input_grad(n, 0);
                              T* gb = detail::input_grad(n, 1);
                              for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                if (pick_a[i]) {
                                  if (ga) ga[i] += n.grad[i];
                                } else if (gb) {
                                  gb[i] += n.grad[i];
                                }
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary<T>("scale", a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary<T>("add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T{-1});
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>("relu", a, [](T x) { return x > T{0} ? x : T{0}; },
                          [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary<T>("abs", a, [](T x) { return std::abs(x); },
                          [](T x, T) { return x > T{0} ? T{1} : (x < T{0} ? T{-1} : T{0}); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary<T>("clamp", a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
                          [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s{0};
  for (T v : a.data()) s += v;
  return detail::make_op<T>("sum", {}, {s}, {a}, [](Node<T>& n) {
    T* g = detail::input_grad(n, 0);
    const std::size_t count = n.inputs[0]->value.size();
    for (std::size_t i = 0; i < count; ++i) g[i] += n.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const std::size_t count = a.numel();
  if (count == 0) throw DimensionError("mean of an empty tensor");
  T s{0};
  for (T v : a.data()) s += v;
  return detail::make_op<T>("mean", {}, {s / static_cast<T>(count)}, {a}, [count](Node<T>& n) {
    T* g = detail::input_grad(n, 0);
    const T share = n.grad[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) g[i] += share;
  });
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  return sum(mul(a, b));
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto x = a.data(), y = b.data();
  std::vector<T> out(m * n, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = x[i * k + p];
      const T* brow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return detail::make_op<T>(
      "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& node) {
        const T* dout = node.grad.data();
        const T* x = node.inputs[0]->value.data();
        const T* y = node.inputs[1]->value.data();
        if (T* ga = detail::input_grad(node, 0)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              T acc{0};
              const T* brow = y + p * n;
              const T* drow = dout + i * n;
              for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (T* gb = detail::input_grad(node, 1)) {
          for (std::size_t i = 0; i < m; ++i) {
            const T* drow = dout + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const T av = x[i * k + p];
              T* grow = gb + p * n;
              for (std::size_t j = 0; j < n; ++j) grow[j] += av * drow[j];
            }
          }
        }
      });
}

/// x [n x d] + bias [d], broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_rank("add_bias", x, 2);
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto xv = x.data(), bv = bias.data();
  std::vector<T> out(xv.begin(), xv.end());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  }
  return detail::make_op<T>("add_bias", x.shape(), std::move(out), {x, bias},
                            [rows, cols](Node<T>& n) {
                              if (T* g = detail::input_grad(n, 0)) {
                                for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
                              }
                              if (T* g = detail::input_grad(n, 1)) {
                                for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t c = 0; c < cols; ++c) g[c] += n.grad[r * cols + c];
                                }
                              }
                            });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  return detail::make_op<T>("transpose", {c, r}, std::move(out), {a}, [r, c](Node<T>& n) {
    T* g = detail::input_grad(n, 0);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j * r + i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto x = a.data();
  return detail::make_op<T>("reshape", std::move(shape), std::vector<T>(x.begin(), x.end()), {a},
                            [](Node<T>& n) {
                              T* g = detail::input_grad(n, 0);
                              for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
                            });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw DimensionError("concat: axis out of range for " + shape_str(shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) {
      throw DimensionError("concat: rank mismatch " + shape_str(shape) + " vs " + shape_str(s));
    }
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != shape[d]) {
        throw DimensionError("concat: shape mismatch " + shape_str(shape) + " vs " + shape_str(s));
      }
    }
    total += s[axis];
  }
  shape[axis] = total;
  const auto split = detail::split_at(shape, axis);
  std::vector<T> out(numel(shape));
  std::vector<std::size_t> lens, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    auto x = p.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(x.begin() + o * len * split.inner, len * split.inner,
                  out.begin() + (o * total + off) * split.inner);
    }
    lens.push_back(len);
    offsets.push_back(off);
    off += len;
  }
  return detail::make_op<T>("concat", std::move(shape), std::move(out), parts,
                            [split, total, lens = std::move(lens), offsets = std::move(offsets)](Node<T>& n) {
                              for (std::size_t k = 0; k < lens.size(); ++k) {
                                T* g = detail::input_grad(n, k);
                                if (!g) continue;
                                const std::size_t block = lens[k] * split.inner;
                                for (std::size_t o = 0; o < split.outer; ++o) {
                                  const T* src = n.grad.data() + (o * total + offsets[k]) * split.inner;
                                  T* dst = g + o * block;
                                  for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                                }
                              }
                            });
}

/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto split = detail::split_at(a.shape(), axis);
  if (begin > end || end > split.len) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t len = end - begin;
  auto x = a.data();
  std::vector<T> out(split.outer * len * split.inner);
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(x.begin() + (o * split.len + begin) * split.inner, len * split.inner,
                out.begin() + o * len * split.inner);
  }
  return detail::make_op<T>("slice", std::move(shape), std::move(out), {a},
                            [split, begin, len](Node<T>& n) {
                              T* g = detail::input_grad(n, 0);
                              const std::size_t block = len * split.inner;
                              for (std::size_t o = 0; o < split.outer; ++o) {
                                T* dst = g + (o * split.len + begin) * split.inner;
                                const T* src = n.grad.data() + o * block;
                                for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                              }
                            });
}

/// Selects sub-tensors along axis 0; indices may repeat.
template <typename T>
Tensor<T> gather(const Tensor<T>& a, const std::vector<std::size_t>& indices) {
  if (a.rank() == 0) throw DimensionError("gather on a scalar");
  const std::size_t rows = a.dim(0);
  const std::size_t width = rows ? a.numel() / rows : 0;
  for (std::size_t idx : indices) {
    if (idx >= rows) {
      throw DimensionError("gather: index " + std::to_string(idx) + " out of range for " +
                           shape_str(a.shape()));
    }
  }
  Shape shape = a.shape();
  shape[0] = indices.size();
  auto x = a.data();
  std::vector<T> out(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(x.begin() + indices[r] * width, width, out.begin() + r * width);
  }
  return detail::make_op<T>("gather", std::move(shape), std::move(out), {a},
                            [indices, width](Node<T>& n) {
                              T* g = detail::input_grad(n, 0);
                              for (std::size_t r = 0; r < indices.size(); ++r) {
                                for (std::size_t i = 0; i < width; ++i) {
                                  g[indices[r] * width + i] += n.grad[r * width + i];
                                }
                              }
                            });
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const auto s = detail::split_at(a.shape(), axis);
  auto x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) {
        const T v = x[base + k * s.inner];
        if (std::isnan(v)) throw NumericError("softmax: NaN input");
        mx = std::max(mx, v);
      }
      T total{0};
      for (std::size_t k = 0; k < s.len; ++k) {
        const T e = std::exp(x[base + k * s.inner] - mx);
        y[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) y[base + k * s.inner] /= total;
    }
  }
  std::vector<T> saved = y;
  return detail::make_op<T>("softmax", a.shape(), std::move(y), {a},
                            [s, sy = std::move(saved)](Node<T>& n) {
                              T* g = detail::input_grad(n, 0);
                              for (std::size_t o = 0; o < s.outer; ++o) {
                                for (std::size_t in = 0; in < s.inner; ++in) {
                                  const std::size_t base = o * s.len * s.inner + in;
                                  T inner{0};
                                  for (std::size_t k = 0; k < s.len; ++k) {
                                    inner += n.grad[base + k * s.inner] * sy[base + k * s.inner];
                                  }
                                  for (std::size_t k = 0; k < s.len; ++k) {
                                    const std::size_t i = base + k * s.inner;
                                    g[i] += sy[i] * (n.grad[i] - inner);
                                  }
                                }
                              }
                            });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis) {
  const auto s = detail::split_at(a.shape(), axis);
  auto x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) {
        const T v = x[base + k * s.inner];
        if (std::isnan(v)) throw NumericError("log_softmax: NaN input");
        mx = std::max(mx, v);
      }
      T total{0};
      for (std::size_t k = 0; k < s.len; ++k) total += std::exp(x[base + k * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t k = 0; k < s.len; ++k) y[base + k * s.inner] = x[base + k * s.inner] - lse;
    }
  }
  std::vector<T> saved = y;
  return detail::make_op<T>("log_softmax", a.shape(), std::move(y), {a},
                            [s, sy = std::move(saved)](Node<T>& n) {
                              T* g = detail::input_grad(n, 0);
                              for (std::size_t o = 0; o < s.outer; ++o) {
                                for (std::size_t in = 0; in < s.inner; ++in) {
                                  const std::size_t base = o * s.len * s.inner + in;
                                  T total{0};
                                  for (std::size_t k = 0; k < s.len; ++k) total += n.grad[base + k * s.inner];
                                  for (std::size_t k = 0; k < s.len; ++k) {
                                    const std::size_t i = base + k * s.inner;
                                    g[i] += n.grad[i] - std::exp(sy[i]) * total;
                                  }
                                }
                              }
                            });
}

/// Normalizes over the last axis, then applies gamma * x + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-7)) {
  if (a.rank() == 0) throw DimensionError("layer_norm on a scalar");
  const std::size_t d = a.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not fit " + shape_str(a.shape()));
  }
  const std::size_t rows = a.numel() / d;
  auto x = a.data();
  auto gv = gamma.data(), bv = beta.data();
  std::vector<T> y(x.size()), xhat(x.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * d;
    T mu{0};
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (row[i] - mu) * rstd[r];
      y[r * d + i] = gv[i] * xhat[r * d + i] + bv[i];
    }
  }
  return detail::make_op<T>(
      "layer_norm", a.shape(), std::move(y), {a, gamma, beta},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& n) {
        const T* gv = n.inputs[1]->value.data();
        T* gx = detail::input_grad(n, 0);
        T* gg = detail::input_grad(n, 1);
        T* gb = detail::input_grad(n, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dy = n.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          T mean_dxh{0}, mean_dxh_xh{0};
          for (std::size_t i = 0; i < d; ++i) {
            const T dxh = dy[i] * gv[i];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[i];
            if (gg) gg[i] += dy[i] * xh[i];
            if (gb) gb[i] += dy[i];
          }
          if (!gx) continue;
          mean_dxh /= static_cast<T>(d);
          mean_dxh_xh /= static_cast<T>(d);
          for (std::size_t i = 0; i < d; ++i) {
            gx[r * d + i] += rstd[r] * (dy[i] * gv[i] - mean_dxh - xh[i] * mean_dxh_xh);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution and sampling

/// x [C x H x W], weight [O x C x K x K], bias [O]. No dilation, no groups.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  detail::require_rank("conv2d input", x, 3);
  detail::require_rank("conv2d weight", weight, 4);
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = weight.dim(0), K = weight.dim(2);
  if (weight.dim(1) != C || weight.dim(3) != K || bias.shape() != Shape{O}) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " / bias " +
                         shape_str(bias.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (H + 2 * pad < K || W + 2 * pad < K) {
    throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  }
  const std::size_t OH = (H + 2 * pad - K) / stride + 1;
  const std::size_t OW = (W + 2 * pad - K) / stride + 1;
  const std::size_t P = OH * OW, CKK = C * K * K;

  // im2col: cols[(c,ky,kx), (oy,ox)]
  auto xv = x.data();
  std::vector<T> cols(CKK * P, T{0});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < K; ++ky) {
      for (std::size_t kx = 0; kx < K; ++kx) {
        T* dst = cols.data() + ((c * K + ky) * K + kx) * P;
        for (std::size_t oy = 0; oy < OH; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t ox = 0; ox < OW; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            dst[oy * OW + ox] = xv[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
  auto wv = weight.data(), bv = bias.data();
  std::vector<T> out(O * P);
  for (std::size_t o = 0; o < O; ++o) {
    T* row = out.data() + o * P;
    std::fill_n(row, P, bv[o]);
    for (std::size_t q = 0; q < CKK; ++q) {
      const T w = wv[o * CKK + q];
      const T* col = cols.data() + q * P;
      for (std::size_t p = 0; p < P; ++p) row[p] += w * col[p];
    }
  }
  return detail::make_op<T>(
      "conv2d", {O, OH, OW}, std::move(out), {x, weight, bias},
      [C, H, W, O, K, OH, OW, P, CKK, stride, pad, cols = std::move(cols)](Node<T>& n) {
        const T* dout = n.grad.data();
        if (T* gw = detail::input_grad(n, 1)) {
          for (std::size_t o = 0; o < O; ++o) {
            for (std::size_t q = 0; q < CKK; ++q) {
              const T* col = cols.data() + q * P;
              const T* drow = dout + o * P;
              T acc{0};
              for (std::size_t p = 0; p < P; ++p) acc += drow[p] * col[p];
              gw[o * CKK + q] += acc;
            }
          }
        }
        if (T* gb = detail::input_grad(n, 2)) {
          for (std::size_t o = 0; o < O; ++o) {
            T acc{0};
            for (std::size_t p = 0; p < P; ++p) acc += dout[o * P + p];
            gb[o] += acc;
          }
        }
        if (T* gx = detail::input_grad(n, 0)) {
          const T* wv = n.inputs[1]->value.data();
          std::vector<T> dcols(CKK * P, T{0});
          for (std::size_t o = 0; o < O; ++o) {
            const T* drow = dout + o * P;
            for (std::size_t q = 0; q < CKK; ++q) {
              const T w = wv[o * CKK + q];
              T* dc = dcols.data() + q * P;
              for (std::size_t p = 0; p < P; ++p) dc[p] += w * drow[p];
            }
          }
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t ky = 0; ky < K; ++ky) {
              for (std::size_t kx = 0; kx < K; ++kx) {
                const T* src = dcols.data() + ((c * K + ky) * K + kx) * P;
                for (std::size_t oy = 0; oy < OH; ++oy) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                  for (std::size_t ox = 0; ox < OW; ++ox) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                    gx[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] += src[oy * OW + ox];
                  }
                }
              }
            }
          }
        }
      });
}

namespace detail {

// Bilinear taps for one coordinate: neighbours floor(x) and floor(x)+1 with
// weights max(0, 1 - |x - m|).
template <typename T>
struct Taps {
  std::ptrdiff_t m0;
  T w0, w1;
};

template <typename T>
Taps<T> taps(T x) {
  const T f = std::floor(x);
  const T frac = x - f;
  return {static_cast<std::ptrdiff_t>(f), T{1} - frac, frac};
}

}  // namespace detail

/// Bilinear sampling of U [C x H x W] at pixel-space points (xs[p], ys[p]),
/// p = j * out_w + i. Neighbours outside U contribute zero. Differentiable
/// with respect to U and to the sample coordinates.
template <typename T>
Tensor<T> grid_sample(const Tensor<T>& U, const Tensor<T>& xs, const Tensor<T>& ys,
                      std::size_t out_h, std::size_t out_w) {
  detail::require_rank("grid_sample input", U, 3);
  const std::size_t P = out_h * out_w;
  if (xs.numel() != P || ys.numel() != P) {
    throw DimensionError("grid_sample: grid " + shape_str(xs.shape()) + "/" + shape_str(ys.shape()) +
                         " does not hold " + std::to_string(out_h) + "x" + std::to_string(out_w) + " points");
  }
  const std::size_t C = U.dim(0), H = U.dim(1), W = U.dim(2);
  auto u = U.data(), gx = xs.data(), gy = ys.data();
  std::vector<T> out(C * P, T{0});
  const auto inside = [&](std::ptrdiff_t m, std::ptrdiff_t n) {
    return m >= 0 && n >= 0 && m < static_cast<std::ptrdiff_t>(W) && n < static_cast<std::ptrdiff_t>(H);
  };
  for (std::size_t p = 0; p < P; ++p) {
    const auto tx = detail::taps(gx[p]);
    const auto ty = detail::taps(gy[p]);
    for (int dy = 0; dy < 2; ++dy) {
      const std::ptrdiff_t n = ty.m0 + dy;
      const T wy = dy ? ty.w1 : ty.w0;
      for (int dx = 0; dx < 2; ++dx) {
        const std::ptrdiff_t m = tx.m0 + dx;
        if (!inside(m, n)) continue;
        const T w = wy * (dx ? tx.w1 : tx.w0);
        const std::size_t off = static_cast<std::size_t>(n) * W + static_cast<std::size_t>(m);
        for (std::size_t c = 0; c < C; ++c) out[c * P + p] += w * u[c * H * W + off];
      }
    }
  }
  return detail::make_op<T>(
      "grid_sample", {C, out_h, out_w}, std::move(out), {U, xs, ys}, [C, H, W, P](Node<T>& node) {
        const T* u = node.inputs[0]->value.data();
        const T* gxv = node.inputs[1]->value.data();
        const T* gyv = node.inputs[2]->value.data();
        T* gu = detail::input_grad(node, 0);
        T* ggx = detail::input_grad(node, 1);
        T* ggy = detail::input_grad(node, 2);
        const T* dout = node.grad.data();
        for (std::size_t p = 0; p < P; ++p) {
          const auto tx = detail::taps(gxv[p]);
          const auto ty = detail::taps(gyv[p]);
          for (int dy = 0; dy < 2; ++dy) {
            const std::ptrdiff_t n = ty.m0 + dy;
            const T wy = dy ? ty.w1 : ty.w0;
            const T dwy = dy ? T{1} : T{-1};
            for (int dx = 0; dx < 2; ++dx) {
              const std::ptrdiff_t m = tx.m0 + dx;
              if (m < 0 || n < 0 || m >= static_cast<std::ptrdiff_t>(W) || n >= static_cast<std::ptrdiff_t>(H)) continue;
              const T wx = dx ? tx.w1 : tx.w0;
              const T dwx = dx ? T{1} : T{-1};
              const std::size_t off = static_cast<std::size_t>(n) * W + static_cast<std::size_t>(m);
              T acc{0};
              for (std::size_t c = 0; c < C; ++c) {
                const T d = dout[c * P + p];
                if (gu) gu[c * H * W + off] += d * wx * wy;
                acc += d * u[c * H * W + off];
              }
              if (ggx) ggx[p] += acc * dwx * wy;
              if (ggy) ggy[p] += acc * wx * dwy;
            }
          }
        }
      });
}

}  // namespace prtr
