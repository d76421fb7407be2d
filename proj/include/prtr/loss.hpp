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

// Set-prediction loss: matched queries pay NLL of their target class plus the
// L1 coordinate deviation; unmatched queries pay only the background NLL,
// down-weighted. The class term is averaged over all queries, coordinate
// terms over matched targets.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "prtr/matcher.hpp"
#include "prtr/nn.hpp"
#include "prtr/ops.hpp"

namespace prtr {

struct LossBreakdown {
  double total = 0;
  double class_term = 0;
  double coord_term = 0;
  double giou_term = 0;
  std::vector<double> per_layer;
};

struct SetLossOptions {
  double background_weight = 0.1;
  double coord_weight = 1.0;
  double giou_weight = 0.0;  // person boxes only
};

template <typename T>
struct SetLoss {
  Tensor<T> total;
  LossBreakdown parts;
};

/// Detached copy of one layer's predictions for the matcher.
template <typename T>
PredictionSet detach_predictions(const QueryPrediction<T>& pred) {
  PredictionSet out;
  out.n_queries = pred.logits.dim(0);
  out.n_classes = pred.logits.dim(1);
  out.coord_dim = pred.coords.dim(1);
  const auto logits = pred.logits.data();
  out.probs.resize(logits.size());
  for (std::size_t q = 0; q < out.n_queries; ++q) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < out.n_classes; ++c) mx = std::max(mx, static_cast<double>(logits[q * out.n_classes + c]));
    double total = 0;
    for (std::size_t c = 0; c < out.n_classes; ++c) {
      const double e = std::exp(static_cast<double>(logits[q * out.n_classes + c]) - mx);
      out.probs[q * out.n_classes + c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < out.n_classes; ++c) out.probs[q * out.n_classes + c] /= total;
  }
  const auto coords = pred.coords.data();
  out.coords.assign(coords.begin(), coords.end());
  return out;
}

namespace detail {

// Mean of (1 - GIoU) between predicted [n x 4] (cx, cy, w, h) rows and constant targets.
template <typename T>
Tensor<T> giou_loss(const Tensor<T>& boxes, std::span<const MatchTarget> targets) {
  const std::size_t n = targets.size();
  auto column = [&](std::size_t k) { return slice(boxes, 1, k, k + 1); };
  auto target_column = [&](auto f) {
    std::vector<T> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<T>(f(targets[i].coords));
    return Tensor<T>::constant({n, 1}, std::move(v));
  };
  const Tensor<T> cx = column(0), cy = column(1), w = column(2), h = column(3);
  const Tensor<T> x1 = cx - scale(w, T(0.5)), x2 = cx + scale(w, T(0.5));
  const Tensor<T> y1 = cy - scale(h, T(0.5)), y2 = cy + scale(h, T(0.5));
  const Tensor<T> tx1 = target_column([](const auto& c) { return c[0] - 0.5 * c[2]; });
  const Tensor<T> tx2 = target_column([](const auto& c) { return c[0] + 0.5 * c[2]; });
  const Tensor<T> ty1 = target_column([](const auto& c) { return c[1] - 0.5 * c[3]; });
  const Tensor<T> ty2 = target_column([](const auto& c) { return c[1] + 0.5 * c[3]; });
  const Tensor<T> tarea = target_column([](const auto& c) { return c[2] * c[3]; });
  const Tensor<T> iw = relu(minimum(x2, tx2) - maximum(x1, tx1));
  const Tensor<T> ih = relu(minimum(y2, ty2) - maximum(y1, ty1));
  const Tensor<T> inter = iw * ih;
  const Tensor<T> uni = w * h + tarea - inter;
  const Tensor<T> hull = (maximum(x2, tx2) - minimum(x1, tx1)) * (maximum(y2, ty2) - minimum(y1, ty1));
  const Tensor<T> giou = div(inter, uni) - div(hull - uni, hull);
  return scale(sum(add_scalar(neg(giou), T{1})), static_cast<T>(1.0 / static_cast<double>(n)));
}

}  // namespace detail

/// Loss of one layer's predictions under assignment `sigma` (target i -> query
/// sigma[i]). The assignment is a constant of the differentiation.
template <typename T>
SetLoss<T> set_loss(std::span<const MatchTarget> targets, const QueryPrediction<T>& pred,
                    std::span<const std::size_t> sigma, const SetLossOptions& opt) {
  const std::size_t Q = pred.logits.dim(0), C = pred.logits.dim(1), K = pred.coords.dim(1);
  if (sigma.size() != targets.size()) throw ContractError("set_loss: one assignment per target required");
  if (!is_injective(sigma, Q)) throw ContractError("set_loss: assignment is not injective");
  const std::size_t background = C - 1;

  std::vector<T> weights(Q * C, T{0});
  std::vector<char> matched(Q, 0);
  const T per_query = static_cast<T>(1.0 / static_cast<double>(Q));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].label >= background) throw ContractError("set_loss: target label out of range");
    if (targets[i].coords.size() != K) throw ContractError("set_loss: target coordinate arity mismatch");
    matched[sigma[i]] = 1;
    weights[sigma[i] * C + targets[i].label] = per_query;
  }
  for (std::size_t q = 0; q < Q; ++q) {
    if (!matched[q]) weights[q * C + background] = static_cast<T>(opt.background_weight) * per_query;
  }
  const Tensor<T> logp = log_softmax(pred.logits, 1);
  const Tensor<T> class_term = neg(sum(logp * Tensor<T>::constant({Q, C}, std::move(weights))));

  SetLoss<T> out;
  out.parts.class_term = static_cast<double>(class_term.item());
  Tensor<T> total = class_term;
  if (!targets.empty()) {
    const std::vector<std::size_t> rows(sigma.begin(), sigma.end());
    const Tensor<T> chosen = gather(pred.coords, rows);
    std::vector<T> tc;
    tc.reserve(targets.size() * K);
    for (const auto& t : targets) {
      for (double v : t.coords) tc.push_back(static_cast<T>(v));
    }
    const Tensor<T> coord_term =
        scale(sum(abs(chosen - Tensor<T>::constant({targets.size(), K}, std::move(tc)))),
              static_cast<T>(1.0 / static_cast<double>(targets.size())));
    out.parts.coord_term = static_cast<double>(coord_term.item());
    total = total + scale(coord_term, static_cast<T>(opt.coord_weight));
    if (opt.giou_weight != 0) {
      if (K != 4) throw ContractError("set_loss: GIoU term needs 4-d boxes");
      const Tensor<T> g = detail::giou_loss(chosen, targets);
      out.parts.giou_term = static_cast<double>(g.item());
      total = total + scale(g, static_cast<T>(opt.giou_weight));
    }
  }
  out.total = total;
  out.parts.total = static_cast<double>(total.item());
  out.parts.per_layer = {out.parts.total};
  return out;
}

/// Target i -> query of its class. Used with class-specific queries.
inline std::vector<std::size_t> fixed_assignment(std::span<const MatchTarget> targets) {
  std::vector<std::size_t> sigma;
  sigma.reserve(targets.size());
  for (const auto& t : targets) sigma.push_back(t.label);
  return sigma;
}

/// Picks the assignment for one layer's predictions.
using AssignmentFn = std::function<std::vector<std::size_t>(std::span<const MatchTarget>, const PredictionSet&)>;

inline AssignmentFn hungarian_assignment(TrainCostWeights w) {
  return [w](std::span<const MatchTarget> targets, const PredictionSet& preds) {
    return hungarian_solve(cost_train(targets, preds, w)).assignment;
  };
}

/// Same loss on every decoder layer, matching recomputed per layer, averaged.
template <typename T>
SetLoss<T> deep_supervised_loss(std::span<const MatchTarget> targets, const std::vector<QueryPrediction<T>>& layers,
                                const AssignmentFn& assign, const SetLossOptions& opt) {
  if (layers.empty()) throw ContractError("deep_supervised_loss: no decoder layers");
  SetLoss<T> out;
  const double inv = 1.0 / static_cast<double>(layers.size());
  std::vector<Tensor<T>> totals;
  for (const auto& layer : layers) {
    const auto sigma = assign(targets, detach_predictions(layer));
    SetLoss<T> l = set_loss(targets, layer, sigma, opt);
    totals.push_back(l.total);
    out.parts.class_term += inv * l.parts.class_term;
    out.parts.coord_term += inv * l.parts.coord_term;
    out.parts.giou_term += inv * l.parts.giou_term;
    out.parts.per_layer.push_back(l.parts.total);
  }
  Tensor<T> total = totals[0];
  for (std::size_t i = 1; i < totals.size(); ++i) total = total + totals[i];
  out.total = scale(total, static_cast<T>(inv));
  out.parts.total = static_cast<double>(out.total.item());
  return out;
}

}  // namespace prtr
