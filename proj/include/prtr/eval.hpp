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

// Keypoint metrics: OKS, COCO-protocol AP/AR and PCK.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "prtr/data.hpp"
#include "prtr/error.hpp"

namespace prtr {

/// Official COCO per-keypoint sigmas (nose, eyes, ears, shoulders, elbows,
/// wrists, hips, knees, ankles). The OKS falloff constant is k = 2 * sigma.
inline constexpr std::array<double, 17> kCocoSigmas = {0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
                                                       0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089};

/// Falloff constants k_j for a catalog: COCO's for 17 joints, else uniform 0.1.
inline std::vector<double> oks_constants(std::size_t n_joints) {
  if (n_joints == kCocoSigmas.size()) {
    std::vector<double> k;
    for (double s : kCocoSigmas) k.push_back(2 * s);
    return k;
  }
  return std::vector<double>(n_joints, 0.1);
}

/// mean over visible gt joints of exp(-d^2 / (2 s^2 k^2)), s^2 = gt area.
/// Empty when the gt has no visible joint.
inline std::optional<double> oks(const PoseInstance& pred, const PoseInstance& gt, std::span<const double> k) {
  if (gt.area <= 0) throw ContractError("oks: object scale must be positive");
  if (k.size() != gt.keypoints.size() || pred.keypoints.size() != gt.keypoints.size()) {
    throw DimensionError("oks: joint counts differ");
  }
  double total = 0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < gt.keypoints.size(); ++j) {
    const Keypoint& g = gt.keypoints[j];
    if (!g.visible) continue;
    if (k[j] <= 0) throw ContractError("oks: falloff constants must be positive");
    ++n;
    const Keypoint& p = pred.keypoints[j];
    if (!p.visible) continue;
    const double d2 = (p.x - g.x) * (p.x - g.x) + (p.y - g.y) * (p.y - g.y);
    total += std::exp(-d2 / (2 * gt.area * k[j] * k[j]));
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

struct PckCount {
  std::size_t correct = 0;
  std::size_t total = 0;
  [[nodiscard]] double fraction() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Visible gt joints within alpha * reference_length of the prediction.
inline PckCount pck_count(const PoseInstance& pred, const PoseInstance& gt, double alpha, double reference_length) {
  if (!(reference_length > 0)) throw ContractError("pck: reference length must be positive");
  PckCount c;
  const double thr = alpha * reference_length;
  for (std::size_t j = 0; j < gt.keypoints.size(); ++j) {
    const Keypoint& g = gt.keypoints[j];
    if (!g.visible) continue;
    ++c.total;
    const Keypoint& p = pred.keypoints.at(j);
    if (p.visible && std::hypot(p.x - g.x, p.y - g.y) <= thr) ++c.correct;
  }
  return c;
}

inline double pck(const PoseInstance& pred, const PoseInstance& gt, double alpha, double reference_length) {
  const PckCount c = pck_count(pred, gt, alpha, reference_length);
  if (c.total == 0) throw ContractError("pck: no visible ground-truth joints");
  return c.fraction();
}

/// One image's ground truth and predictions. Boxes are normalized by
/// width/height; keypoints are in pixels.
struct EvalImage {
  int width = 0;
  int height = 0;
  std::vector<PoseInstance> gt;
  std::vector<PoseInstance> pred;
};

inline double box_diagonal_px(const BoundingBox& b, int width, int height) {
  return std::hypot(b.width() * width, b.height() * height);
}

/// Predictions in descending score order (stable), each claiming the unmatched
/// gt with the highest OKS, provided it reaches min_oks. Gt without a partner
/// count all joints as wrong. The reference length is the gt box diagonal.
inline PckCount dataset_pck(std::span<const EvalImage> images, double alpha, std::span<const double> k,
                            double min_oks = 0.5) {
  PckCount total;
  for (const auto& im : images) {
    std::vector<std::size_t> order(im.pred.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return im.pred[a].score > im.pred[b].score; });
    std::vector<std::optional<std::size_t>> partner(im.gt.size());
    for (std::size_t p : order) {
      double best = min_oks;
      std::optional<std::size_t> arg;
      for (std::size_t g = 0; g < im.gt.size(); ++g) {
        if (partner[g]) continue;
        const auto o = oks(im.pred[p], im.gt[g], k);
        if (o && *o >= best) {
          best = *o;
          arg = g;
        }
      }
      if (arg) partner[*arg] = p;
    }
    for (std::size_t g = 0; g < im.gt.size(); ++g) {
      const PoseInstance& gt = im.gt[g];
      if (partner[g]) {
        const PckCount c = pck_count(im.pred[*partner[g]], gt, alpha, box_diagonal_px(gt.box, im.width, im.height));
        total.correct += c.correct;
        total.total += c.total;
      } else {
        total.total += gt.n_visible();
      }
    }
  }
  return total;
}

struct ApReport {
  double ap = 0, ap50 = 0, ap75 = 0, ap_m = 0, ap_l = 0, ar = 0;  // -1 when no gt in range
  std::size_t n_gt = 0;
};

struct ApOptions {
  std::size_t max_dets = 20;
  double medium_min = 32.0 * 32.0;
  double large_min = 96.0 * 96.0;
};

namespace detail {

struct ApCurve {
  double ap = -1;
  double recall = -1;
};

// COCO accumulation for one OKS threshold and one gt area range.
inline ApCurve evaluate_threshold(std::span<const EvalImage> images, std::span<const double> k, double thr,
                                  double area_lo, double area_hi, std::size_t max_dets) {
  struct Det {
    double score;
    bool tp;
    bool ignore;
  };
  std::vector<Det> dets;
  std::size_t n_positive = 0;
  for (const auto& im : images) {
    // Gt with no visible joint or outside the area range are ignored.
    std::vector<std::size_t> gorder;
    std::vector<char> gignore(im.gt.size());
    for (std::size_t g = 0; g < im.gt.size(); ++g) {
      const auto& gt = im.gt[g];
      gignore[g] = gt.n_visible() == 0 || gt.area < area_lo || gt.area > area_hi;
      if (!gignore[g]) ++n_positive;
    }
    for (std::size_t g = 0; g < im.gt.size(); ++g) {
      if (!gignore[g]) gorder.push_back(g);
    }
    for (std::size_t g = 0; g < im.gt.size(); ++g) {
      if (gignore[g]) gorder.push_back(g);
    }
    std::vector<std::size_t> porder(im.pred.size());
    std::iota(porder.begin(), porder.end(), 0);
    std::stable_sort(porder.begin(), porder.end(),
                     [&](std::size_t a, std::size_t b) { return im.pred[a].score > im.pred[b].score; });
    if (porder.size() > max_dets) porder.resize(max_dets);
    std::vector<char> gmatched(im.gt.size(), 0);
    for (std::size_t p : porder) {
      const PoseInstance& pred = im.pred[p];
      double best = std::min(thr, 1 - 1e-10);
      std::optional<std::size_t> m;
      for (std::size_t g : gorder) {
        if (gmatched[g]) continue;
        if (m && !gignore[*m] && gignore[g]) break;
        const auto o = im.gt[g].n_visible() ? oks(pred, im.gt[g], k) : std::optional<double>(0.0);
        if (!o || *o < best) continue;
        best = *o;
        m = g;
      }
      Det d{pred.score, false, false};
      if (m) {
        gmatched[*m] = 1;
        d.tp = true;
        d.ignore = gignore[*m];
      } else {
        const double area = pred.area;
        d.ignore = area < area_lo || area > area_hi;
      }
      dets.push_back(d);
    }
  }
  ApCurve out;
  if (n_positive == 0) return out;
  std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });
  std::vector<double> precision, recall;
  double tp = 0, fp = 0;
  for (const auto& d : dets) {
    if (d.ignore) continue;
    (d.tp ? tp : fp) += 1;
    recall.push_back(tp / static_cast<double>(n_positive));
    precision.push_back(tp / (tp + fp));
  }
  out.recall = recall.empty() ? 0.0 : recall.back();
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  out.ap = sum / 101.0;
  return out;
}

}  // namespace detail

/// AP averaged over OKS thresholds 0.50:0.05:0.95 with 101-point
/// interpolated precision, AP at 0.5 / 0.75, medium / large splits by gt
/// area, and AR at max_dets.
inline ApReport coco_ap(std::span<const EvalImage> images, std::span<const double> k, const ApOptions& opt = {}) {
  ApReport rep;
  for (const auto& im : images) {
    for (const auto& g : im.gt) rep.n_gt += g.n_visible() > 0;
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  auto mean_over = [&](double lo, double hi, bool recall) {
    double total = 0;
    int n = 0;
    for (int t = 0; t < 10; ++t) {
      const auto c = detail::evaluate_threshold(images, k, 0.5 + 0.05 * t, lo, hi, opt.max_dets);
      const double v = recall ? c.recall : c.ap;
      if (v < 0) return -1.0;
      total += v;
      ++n;
    }
    return total / n;
  };
  rep.ap = mean_over(0, inf, false);
  rep.ap50 = detail::evaluate_threshold(images, k, 0.5, 0, inf, opt.max_dets).ap;
  rep.ap75 = detail::evaluate_threshold(images, k, 0.75, 0, inf, opt.max_dets).ap;
  rep.ap_m = mean_over(opt.medium_min, opt.large_min, false);
  rep.ap_l = mean_over(opt.large_min, inf, false);
  rep.ar = mean_over(0, inf, true);
  return rep;
}

}  // namespace prtr
