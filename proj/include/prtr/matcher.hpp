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

// Optimal bipartite matching between ground-truth items and query predictions.
//
// Training cost:  C(i, q) = -p_q(c_i) + ||b_i - b_q||_1   (+ box GIoU term for persons)
// Inference cost: C(j, q) = -p_q(c_j)
// The assignment minimizing the summed cost is found with the Hungarian
// (shortest augmenting path) algorithm; a brute-force enumerator serves as
// an oracle for small instances.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "prtr/error.hpp"
#include "prtr/geometry.hpp"

namespace prtr {

enum class CostMode { train, infer };

struct CostMatrix {
  std::size_t rows = 0;  // targets
  std::size_t cols = 0;  // queries
  std::vector<double> values;
  CostMode mode = CostMode::train;

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, CostMode m = CostMode::train)
      : rows(r), cols(c), values(r * c, 0.0), mode(m) {}
  CostMatrix(std::size_t r, std::size_t c, std::vector<double> v, CostMode m = CostMode::train)
      : rows(r), cols(c), values(std::move(v)), mode(m) {
    if (values.size() != r * c) throw DimensionError("cost matrix data does not match its extents");
  }

  [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
};

/// assignment[i] is the query matched to target i.
struct Matching {
  std::vector<std::size_t> assignment;
  double total_cost = 0;
};

/// Sum of the selected entries, accumulated in target order.
inline double assignment_cost(const CostMatrix& cost, std::span<const std::size_t> assignment) {
  double total = 0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += cost(i, assignment[i]);
  return total;
}

inline bool is_injective(std::span<const std::size_t> assignment, std::size_t n_queries) {
  std::vector<char> used(n_queries, 0);
  for (std::size_t q : assignment) {
    if (q >= n_queries || used[q]) return false;
    used[q] = 1;
  }
  return true;
}

/// A ground-truth item: class label and coordinates in the prediction frame.
struct MatchTarget {
  std::size_t label = 0;
  std::vector<double> coords;
};

/// Detached per-query predictions: row-major [Q x n_classes] probabilities
/// and [Q x coord_dim] coordinates.
struct PredictionSet {
  std::size_t n_queries = 0;
  std::size_t n_classes = 0;
  std::size_t coord_dim = 0;
  std::vector<double> probs;
  std::vector<double> coords;

  [[nodiscard]] double prob(std::size_t q, std::size_t c) const { return probs[q * n_classes + c]; }
  [[nodiscard]] double coord(std::size_t q, std::size_t k) const { return coords[q * coord_dim + k]; }
};

struct TrainCostWeights {
  double class_weight = 1.0;
  double coord_weight = 1.0;
  double giou_weight = 0.0;  // only meaningful for (cx, cy, w, h) boxes
};

inline CostMatrix cost_train(std::span<const MatchTarget> targets, const PredictionSet& preds,
                             const TrainCostWeights& w = {}) {
  if (preds.probs.size() != preds.n_queries * preds.n_classes ||
      preds.coords.size() != preds.n_queries * preds.coord_dim) {
    throw ContractError("cost_train: prediction arrays do not match their extents");
  }
  if (w.giou_weight != 0 && preds.coord_dim != 4) throw ContractError("cost_train: GIoU term needs 4-d boxes");
  CostMatrix cost(targets.size(), preds.n_queries, CostMode::train);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& t = targets[i];
    if (t.coords.size() != preds.coord_dim) {
      throw ContractError("cost_train: target " + std::to_string(i) + " has " + std::to_string(t.coords.size()) +
                          " coords, predictions have " + std::to_string(preds.coord_dim));
    }
    if (t.label >= preds.n_classes) throw ContractError("cost_train: target label out of range");
    for (std::size_t q = 0; q < preds.n_queries; ++q) {
      double l1 = 0;
      for (std::size_t k = 0; k < preds.coord_dim; ++k) l1 += std::abs(t.coords[k] - preds.coord(q, k));
      double c = -w.class_weight * preds.prob(q, t.label) + w.coord_weight * l1;
      if (w.giou_weight != 0) {
        const auto a = BoundingBox::from_cxcywh(t.coords[0], t.coords[1], t.coords[2], t.coords[3]);
        const auto b = BoundingBox::from_cxcywh(preds.coord(q, 0), preds.coord(q, 1), preds.coord(q, 2),
                                                preds.coord(q, 3));
        c -= w.giou_weight * generalized_iou(a, b);
      }
      cost(i, q) = c;
    }
  }
  return cost;
}

/// Class-probability-only cost. With `exclude_background`, the last class is
/// dropped and the remaining probabilities renormalized per query.
inline CostMatrix cost_infer(std::span<const std::size_t> classes, const PredictionSet& preds,
                             bool exclude_background) {
  CostMatrix cost(classes.size(), preds.n_queries, CostMode::infer);
  const std::size_t n_fg = preds.n_classes - 1;
  for (std::size_t q = 0; q < preds.n_queries; ++q) {
    double norm = 1.0;
    if (exclude_background) {
      norm = 0;
      for (std::size_t c = 0; c < n_fg; ++c) norm += preds.prob(q, c);
    }
    for (std::size_t j = 0; j < classes.size(); ++j) {
      if (classes[j] >= preds.n_classes) throw ContractError("cost_infer: class label out of range");
      cost(j, q) = -preds.prob(q, classes[j]) / norm;
    }
  }
  return cost;
}

/// Globally optimal assignment of every row to a distinct column.
///
/// Rows are padded with zero-cost virtual targets up to a square matrix; the
/// padded rows are dropped from the result. Ties are broken deterministically:
/// each augmenting search scans columns in ascending index and only replaces
/// its best candidate on a strictly smaller reduced cost, so among equal-cost
/// optima the lowest column index is taken first.
inline Matching hungarian_solve(const CostMatrix& cost) {
  const std::size_t n = cost.rows, m = cost.cols;
  if (n > m) {
    throw ContractError("hungarian_solve: " + std::to_string(n) + " targets exceed " + std::to_string(m) + " queries");
  }
  for (double v : cost.values) {
    if (!std::isfinite(v)) throw NumericError("hungarian_solve: non-finite cost entry");
  }
  Matching result;
  if (n == 0) return result;
  const auto a = [&](std::size_t i, std::size_t j) { return i <= n ? cost(i - 1, j - 1) : 0.0; };
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] is the row matched to column j (0 = none).
  std::vector<double> u(m + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  result.assignment.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0 && p[j] <= n) result.assignment[p[j] - 1] = j - 1;
  }
  result.total_cost = assignment_cost(cost, result.assignment);
  return result;
}

/// Exhaustive search over all injections, first optimum in lexicographic order.
inline Matching brute_force_match(const CostMatrix& cost) {
  constexpr std::size_t kMaxTargets = 7;
  if (cost.rows > kMaxTargets) {
    throw ContractError("brute_force_match: " + std::to_string(cost.rows) + " targets exceed the limit of " +
                        std::to_string(kMaxTargets));
  }
  if (cost.rows > cost.cols) throw ContractError("brute_force_match: more targets than queries");
  Matching best;
  best.total_cost = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> current(cost.rows);
  std::vector<char> used(cost.cols, 0);
  auto recurse = [&](auto&& self, std::size_t row) -> void {
    if (row == cost.rows) {
      const double total = assignment_cost(cost, current);
      if (total < best.total_cost) {
        best.total_cost = total;
        best.assignment = current;
      }
      return;
    }
    for (std::size_t q = 0; q < cost.cols; ++q) {
      if (used[q]) continue;
      used[q] = 1;
      current[row] = q;
      self(self, row + 1);
      used[q] = 0;
    }
  };
  recurse(recurse, 0);
  if (cost.rows == 0) best.total_cost = 0;
  return best;
}

}  // namespace prtr
