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

// Central finite-difference gradient checker and the randomized primitive
// catalog shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "prtr/cascade.hpp"
#include "prtr/loss.hpp"
#include "prtr/ops.hpp"

namespace prtr::testing {

using Td = Tensor<double>;

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;  // description of the worst coordinate
};

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares backward() against central differences of `f` with step h for
/// every coordinate of every input (or `max_coords` random ones per input).
inline GradCheckResult grad_check(const std::function<Td()>& f, std::vector<Td> inputs, double h = 1e-5,
                                  std::size_t max_coords = 0, std::uint64_t seed = 0) {
  for (auto& x : inputs) x.zero_grad();
  const Td root = f();
  backward(root);
  GradCheckResult res;
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Td& x = inputs[t];
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    std::vector<std::size_t> coords(x.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    auto data = x.mutable_data();
    for (std::size_t i : coords) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = f().item();
      data[i] = saved - h;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(analytic[i], numeric);
      ++res.checked;
      if (res.checked == 1 || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = "input " + std::to_string(t) + " coord " + std::to_string(i) + ": analytic " +
                    std::to_string(analytic[i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return res;
}

/// Random values in [lo, hi).
inline std::vector<double> uniform_values(std::mt19937_64& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline Td random_param(std::mt19937_64& rng, Shape shape, double lo = -1, double hi = 1) {
  const auto n = numel(shape);
  return Td::parameter(std::move(shape), uniform_values(rng, n, lo, hi));
}

/// Random values kept at least `gap` away from every kink in `kinks`
/// (the piecewise-linear primitives are not differentiable there).
inline Td random_param_away_from(std::mt19937_64& rng, Shape shape, const std::vector<double>& kinks,
                                 double lo = -1, double hi = 1, double gap = 1e-3) {
  auto v = uniform_values(rng, numel(shape), lo, hi);
  for (auto& x : v) {
    for (double k : kinks) {
      if (std::abs(x - k) < gap) x = k + (x < k ? -2 * gap : 2 * gap);
    }
  }
  return Td::parameter(std::move(shape), std::move(v));
}

inline std::size_t extent(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// A scalar reduction with random weights so every output coordinate
/// receives a distinct upstream gradient.
inline Td weighted_sum(const Td& y, std::mt19937_64& rng) {
  const Td w = Td::constant(y.shape(), uniform_values(rng, y.numel()));
  return sum(y * w);
}

/// One randomized configuration of a primitive: the scalar function and its
/// differentiable inputs.
struct GradCase {
  std::function<Td()> f;
  std::vector<Td> inputs;
};

using CaseFactory = std::function<GradCase(std::mt19937_64&)>;

struct PrimitiveSpec {
  std::string name;
  CaseFactory make;
};

inline bool near_integer(double v, double gap) { return std::abs(v - std::round(v)) < gap; }

/// Every differentiable primitive of the engine.
inline std::vector<PrimitiveSpec> primitive_catalog() {
  std::vector<PrimitiveSpec> cat;
  auto binary = [&](std::string name, std::function<Td(const Td&, const Td&)> op, double lo, double hi) {
    cat.push_back({std::move(name), [op, lo, hi](std::mt19937_64& rng) {
                     const Shape s{extent(rng, 1, 4), extent(rng, 1, 4)};
                     Td a = random_param(rng, s, lo, hi), b = random_param(rng, s, lo, hi);
                     const Td w = Td::constant(s, uniform_values(rng, numel(s)));
                     return GradCase{[=] { return sum(op(a, b) * w); }, {a, b}};
                   }});
  };
  auto unary = [&](std::string name, std::function<Td(const Td&)> op, std::vector<double> kinks, double lo,
                   double hi) {
    cat.push_back({std::move(name), [op, kinks, lo, hi](std::mt19937_64& rng) {
                     const Shape s{extent(rng, 1, 5), extent(rng, 1, 5)};
                     Td a = random_param_away_from(rng, s, kinks, lo, hi);
                     const Td w = Td::constant(s, uniform_values(rng, numel(s)));
                     return GradCase{[=] { return sum(op(a) * w); }, {a}};
                   }});
  };
  binary("add", [](const Td& a, const Td& b) { return a + b; }, -1, 1);
  binary("sub", [](const Td& a, const Td& b) { return a - b; }, -1, 1);
  binary("mul", [](const Td& a, const Td& b) { return a * b; }, -1, 1);
  binary("div", [](const Td& a, const Td& b) { return div(a, b); }, 0.5, 2);
  // Ties between the operands are the kink; shift b well off a.
  cat.push_back({"minimum", [](std::mt19937_64& rng) {
                   const Shape s{extent(rng, 1, 4), extent(rng, 1, 4)};
                   Td a = random_param(rng, s);
                   auto bv = uniform_values(rng, numel(s));
                   for (std::size_t i = 0; i < bv.size(); ++i) {
                     if (std::abs(bv[i] - a.at(i)) < 1e-2) bv[i] = a.at(i) + 0.1;
                   }
                   Td b = Td::parameter(s, bv);
                   const Td w = Td::constant(s, uniform_values(rng, numel(s)));
                   return GradCase{[=] { return sum(minimum(a, b) * w); }, {a, b}};
                 }});
  cat.push_back({"maximum", [](std::mt19937_64& rng) {
                   const Shape s{extent(rng, 1, 4), extent(rng, 1, 4)};
                   Td a = random_param(rng, s);
                   auto bv = uniform_values(rng, numel(s));
                   for (std::size_t i = 0; i < bv.size(); ++i) {
                     if (std::abs(bv[i] - a.at(i)) < 1e-2) bv[i] = a.at(i) - 0.1;
                   }
                   Td b = Td::parameter(s, bv);
                   const Td w = Td::constant(s, uniform_values(rng, numel(s)));
                   return GradCase{[=] { return sum(maximum(a, b) * w); }, {a, b}};
                 }});
  unary("scale", [](const Td& a) { return scale(a, 2.5); }, {}, -1, 1);
  unary("add_scalar", [](const Td& a) { return add_scalar(a, -0.75); }, {}, -1, 1);
  unary("neg", [](const Td& a) { return neg(a); }, {}, -1, 1);
  unary("relu", [](const Td& a) { return relu(a); }, {0.0}, -1, 1);
  unary("sigmoid", [](const Td& a) { return sigmoid(a); }, {}, -3, 3);
  unary("exp", [](const Td& a) { return exp(a); }, {}, -2, 2);
  unary("log", [](const Td& a) { return log(a); }, {}, 0.2, 3);
  unary("abs", [](const Td& a) { return abs(a); }, {0.0}, -1, 1);
  unary("clamp", [](const Td& a) { return clamp(a, -0.5, 0.5); }, {-0.5, 0.5}, -1, 1);
  // Reductions already yield a scalar; square it so the gradient varies.
  auto reduction = [&](std::string name, std::function<Td(const Td&)> op) {
    cat.push_back({std::move(name), [op](std::mt19937_64& rng) {
                     Td a = random_param(rng, {extent(rng, 1, 5), extent(rng, 1, 5)});
                     return GradCase{[=] {
                                       const Td r = op(a);
                                       return r * r;
                                     },
                                     {a}};
                   }});
  };
  reduction("sum", [](const Td& a) { return sum(a); });
  reduction("mean", [](const Td& a) { return mean(a); });
  cat.push_back({"transpose", [](std::mt19937_64& rng) {
                   const std::size_t m = extent(rng, 1, 4), n = extent(rng, 1, 4);
                   Td a = random_param(rng, {m, n});
                   const Td w = Td::constant({n, m}, uniform_values(rng, m * n));
                   return GradCase{[=] { return sum(transpose(a) * w); }, {a}};
                 }});
  cat.push_back({"reshape", [](std::mt19937_64& rng) {
                   const std::size_t m = extent(rng, 1, 4), n = extent(rng, 1, 4);
                   Td a = random_param(rng, {m, n});
                   const Td w = Td::constant({n * m}, uniform_values(rng, m * n));
                   return GradCase{[=] { return sum(reshape(a, {n * m}) * w); }, {a}};
                 }});
  cat.push_back({"dot", [](std::mt19937_64& rng) {
                   const std::size_t n = extent(rng, 1, 8);
                   Td a = random_param(rng, {n}), b = random_param(rng, {n});
                   return GradCase{[=] { return dot(a, b); }, {a, b}};
                 }});
  cat.push_back({"matmul", [](std::mt19937_64& rng) {
                   const std::size_t m = extent(rng, 1, 4), k = extent(rng, 1, 4), n = extent(rng, 1, 4);
                   Td a = random_param(rng, {m, k}), b = random_param(rng, {k, n});
                   const Td w = Td::constant({m, n}, uniform_values(rng, m * n));
                   return GradCase{[=] { return sum(matmul(a, b) * w); }, {a, b}};
                 }});
  cat.push_back({"add_bias", [](std::mt19937_64& rng) {
                   const std::size_t m = extent(rng, 1, 4), n = extent(rng, 1, 4);
                   Td x = random_param(rng, {m, n}), b = random_param(rng, {n});
                   const Td w = Td::constant({m, n}, uniform_values(rng, m * n));
                   return GradCase{[=] { return sum(add_bias(x, b) * w); }, {x, b}};
                 }});
  cat.push_back({"concat", [](std::mt19937_64& rng) {
                   const std::size_t axis = extent(rng, 0, 1);
                   const std::size_t m = extent(rng, 1, 3), n = extent(rng, 1, 3), k = extent(rng, 1, 3);
                   Td a = random_param(rng, axis == 0 ? Shape{m, n} : Shape{n, m});
                   Td b = random_param(rng, axis == 0 ? Shape{k, n} : Shape{n, k});
                   const std::size_t total = (m + k) * n;
                   const Td w = Td::constant(axis == 0 ? Shape{m + k, n} : Shape{n, m + k}, uniform_values(rng, total));
                   return GradCase{[=] { return sum(concat<double>({a, b}, axis) * w); }, {a, b}};
                 }});
  cat.push_back({"slice", [](std::mt19937_64& rng) {
                   const std::size_t m = extent(rng, 2, 5), n = extent(rng, 2, 5);
                   const std::size_t axis = extent(rng, 0, 1);
                   const std::size_t len = axis == 0 ? m : n;
                   const std::size_t b0 = extent(rng, 0, len - 1), b1 = extent(rng, b0 + 1, len);
                   Td a = random_param(rng, {m, n});
                   const Shape os = axis == 0 ? Shape{b1 - b0, n} : Shape{m, b1 - b0};
                   const Td w = Td::constant(os, uniform_values(rng, numel(os)));
                   return GradCase{[=] { return sum(slice(a, axis, b0, b1) * w); }, {a}};
                 }});
  cat.push_back({"gather", [](std::mt19937_64& rng) {
                   const std::size_t m = extent(rng, 1, 4), n = extent(rng, 1, 3), r = extent(rng, 1, 6);
                   Td a = random_param(rng, {m, n});
                   std::vector<std::size_t> idx(r);
                   for (auto& i : idx) i = extent(rng, 0, m - 1);  // repeats allowed
                   const Td w = Td::constant({r, n}, uniform_values(rng, r * n));
                   return GradCase{[=] { return sum(gather(a, idx) * w); }, {a}};
                 }});
  cat.push_back({"softmax", [](std::mt19937_64& rng) {
                   const std::size_t m = extent(rng, 1, 4), n = extent(rng, 2, 5), axis = extent(rng, 0, 1);
                   Td a = random_param(rng, {m, n}, -2, 2);
                   const Td w = Td::constant({m, n}, uniform_values(rng, m * n));
                   return GradCase{[=] { return sum(softmax(a, axis) * w); }, {a}};
                 }});
  cat.push_back({"log_softmax", [](std::mt19937_64& rng) {
                   const std::size_t m = extent(rng, 1, 4), n = extent(rng, 2, 5), axis = extent(rng, 0, 1);
                   Td a = random_param(rng, {m, n}, -2, 2);
                   const Td w = Td::constant({m, n}, uniform_values(rng, m * n));
                   return GradCase{[=] { return sum(log_softmax(a, axis) * w); }, {a}};
                 }});
  cat.push_back({"layer_norm", [](std::mt19937_64& rng) {
                   const std::size_t m = extent(rng, 1, 4), d = extent(rng, 2, 6);
                   Td a = random_param(rng, {m, d}, -2, 2);
                   Td g = random_param(rng, {d}, 0.5, 1.5), b = random_param(rng, {d});
                   const Td w = Td::constant({m, d}, uniform_values(rng, m * d));
                   return GradCase{[=] { return sum(layer_norm(a, g, b) * w); }, {a, g, b}};
                 }});
  cat.push_back({"conv2d", [](std::mt19937_64& rng) {
                   const std::size_t c = extent(rng, 1, 2), o = extent(rng, 1, 3), k = extent(rng, 1, 3);
                   const std::size_t stride = extent(rng, 1, 2), pad = extent(rng, 0, 1);
                   const std::size_t h = extent(rng, k, 6), w = extent(rng, k, 6);
                   Td x = random_param(rng, {c, h, w}), wt = random_param(rng, {o, c, k, k}), b = random_param(rng, {o});
                   const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
                   const Td wsum = Td::constant({o, oh, ow}, uniform_values(rng, o * oh * ow));
                   return GradCase{[=] { return sum(conv2d(x, wt, b, stride, pad) * wsum); }, {x, wt, b}};
                 }});
  cat.push_back({"grid_sample", [](std::mt19937_64& rng) {
                   const std::size_t c = extent(rng, 1, 3), H = extent(rng, 2, 5), W = extent(rng, 2, 5);
                   const std::size_t oh = extent(rng, 1, 3), ow = extent(rng, 1, 3);
                   Td U = random_param(rng, {c, H, W});
                   // Include points past the border to exercise zero padding.
                   auto xs = uniform_values(rng, oh * ow, -0.8, static_cast<double>(W) - 0.2);
                   auto ys = uniform_values(rng, oh * ow, -0.8, static_cast<double>(H) - 0.2);
                   for (auto* v : {&xs, &ys}) {
                     for (auto& x : *v) {
                       if (near_integer(x, 1e-3)) x += 0.01;
                     }
                   }
                   Td gx = Td::parameter({oh * ow}, xs), gy = Td::parameter({oh * ow}, ys);
                   const Td w = Td::constant({c, oh, ow}, uniform_values(rng, c * oh * ow));
                   return GradCase{[=] { return sum(grid_sample(U, gx, gy, oh, ow) * w); }, {U, gx, gy}};
                 }});
  return cat;
}

/// A tiny keypoint transformer configuration for the composite check.
inline ModelConfig composite_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.ffn_dim = 8;
  c.n_keypoint_queries = 4;
  c.n_joints = 3;
  c.backbone_channels = {2, 2, 2, 2, 3};
  c.crop_w = 3;
  c.crop_h = 4;
  return c;
}

/// Set loss of the keypoint transformer on a box crop from a random
/// three-level pyramid; the box is parameterized as (cx, cy, w, h).
/// Differentiable inputs: the box and the stride-8 feature map.
inline GradCase composite_stn_case(std::mt19937_64& rng) {
  const ModelConfig c = composite_config();
  Initializer init(rng());
  const DetectionTransformer<double> kp(c, HeadKind::keypoint, static_cast<std::size_t>(c.crop_channels()),
                                        static_cast<std::size_t>(c.n_keypoint_queries), init);
  const auto cw = static_cast<std::size_t>(c.crop_w), ch = static_cast<std::size_t>(c.crop_h);
  const Td pos = reshape(positional_encoding_2d<double>(ch, cw, static_cast<std::size_t>(c.d_model),
                                                        PositionFrame::absolute()),
                         {ch * cw, static_cast<std::size_t>(c.d_model)});
  FeaturePyramid<double> maps;
  maps.stride4 = random_param(rng, {2, 16, 16});
  maps.stride8 = random_param(rng, {2, 8, 8});
  maps.stride16 = random_param(rng, {3, 4, 4});
  // Box inside the image after 25% enlargement, no grid point on the lattice.
  std::vector<double> box;
  for (int attempt = 0;; ++attempt) {
    std::uniform_real_distribution<double> u(0, 1);
    const double w = 0.2 + 0.3 * u(rng), h = 0.2 + 0.3 * u(rng);
    const double cx = 0.35 + 0.3 * u(rng), cy = 0.35 + 0.3 * u(rng);
    box = {cx, cy, w, h};
    const auto e = BoundingBox::from_cxcywh(cx, cy, w, h).enlarged(c.enlarge_factor);
    bool ok = e.x_left > 0.01 && e.x_right < 0.99 && e.y_top > 0.01 && e.y_down < 0.99;
    for (double extent : {16.0, 8.0, 4.0}) {
      for (std::size_t i = 0; i < cw && ok; ++i) {
        const double x = ((cw - i) * e.x_left + i * e.x_right) / cw * extent;
        ok = !near_integer(x, 1e-3);
      }
      for (std::size_t j = 0; j < ch && ok; ++j) {
        const double y = ((ch - j) * e.y_top + j * e.y_down) / ch * extent;
        ok = !near_integer(y, 1e-3);
      }
    }
    if (ok || attempt > 1000) break;
  }
  Td box_param = Td::parameter({4}, box);
  std::vector<MatchTarget> targets;
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (std::size_t j = 0; j < 3; ++j) targets.push_back({j, {u(rng), u(rng)}});
  const std::vector<std::size_t> sigma{2, 0, 3};
  const SetLossOptions opt{0.1, 1.0, 0.0};
  Td stride8 = maps.stride8;
  auto f = [=] {
    const Td crop = crop_features_multiscale(maps, box_from_cxcywh(box_param), c.enlarge_factor, cw, ch);
    const auto out = kp(flatten_tokens(crop), pos);
    return set_loss<double>(targets, out.layers.back(), sigma, opt).total;
  };
  return {f, {box_param, stride8}};
}

}  // namespace prtr::testing
