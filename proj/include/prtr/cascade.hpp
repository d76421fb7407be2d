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

// The cascade: person transformer -> box crop -> keypoint transformer ->
// Hungarian readout, for both the two-stage and the end-to-end variant.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prtr/config.hpp"
#include "prtr/data.hpp"
#include "prtr/geometry.hpp"
#include "prtr/image.hpp"
#include "prtr/matcher.hpp"
#include "prtr/nn.hpp"
#include "prtr/ops.hpp"
#include "prtr/optim.hpp"

namespace prtr {

// ---------------------------------------------------------------------------
// Grids and crops. A box tensor holds (x_left, x_right, y_top, y_down),
// normalized to the image.

/// Sample points p = j * w + i in normalized source coordinates.
template <typename T>
struct CropGrid {
  std::size_t w = 0;
  std::size_t h = 0;
  Tensor<T> xs;  // [h * w]
  Tensor<T> ys;  // [h * w]
};

namespace detail {

inline void check_box_values(double xl, double xr, double yt, double yd, const char* where) {
  if (!(xl < xr) || !(yt < yd)) {
    throw ContractError(std::string(where) + ": degenerate box [" + std::to_string(xl) + "," + std::to_string(xr) +
                        "]x[" + std::to_string(yt) + "," + std::to_string(yd) + "]");
  }
}

template <typename T>
void check_box_tensor(const Tensor<T>& box, const char* where) {
  if (box.numel() != 4) throw DimensionError(std::string(where) + ": box needs 4 values, got " + shape_str(box.shape()));
  const auto b = box.data();
  check_box_values(static_cast<double>(b[0]), static_cast<double>(b[1]), static_cast<double>(b[2]),
                   static_cast<double>(b[3]), where);
}

template <typename T>
Tensor<T> linear_map_4(const Tensor<T>& box, const std::vector<double>& m) {
  std::vector<T> mv(m.begin(), m.end());
  return reshape(matmul(Tensor<T>::constant({4, 4}, std::move(mv)), reshape(box, {4, 1})), {4});
}

}  // namespace detail

template <typename T>
Tensor<T> box_tensor(const BoundingBox& b) {
  return Tensor<T>::constant({4}, {static_cast<T>(b.x_left), static_cast<T>(b.x_right), static_cast<T>(b.y_top),
                                   static_cast<T>(b.y_down)});
}

template <typename T>
BoundingBox to_box(const Tensor<T>& box) {
  const auto b = box.data();
  return {static_cast<double>(b[0]), static_cast<double>(b[1]), static_cast<double>(b[2]), static_cast<double>(b[3])};
}

/// (cx, cy, w, h) -> (x_left, x_right, y_top, y_down).
template <typename T>
Tensor<T> box_from_cxcywh(const Tensor<T>& cxcywh) {
  if (cxcywh.numel() != 4) throw DimensionError("box_from_cxcywh: need 4 values");
  return detail::linear_map_4(cxcywh, {1, 0, -0.5, 0,  //
                                       1, 0, 0.5, 0,   //
                                       0, 1, 0, -0.5,  //
                                       0, 1, 0, 0.5});
}

/// Grows the box by `factor` of its extent about its center, then clamps it
/// to the image.
template <typename T>
Tensor<T> enlarge_and_clamp(const Tensor<T>& box, double factor) {
  const double a = 1 + 0.5 * factor, b = -0.5 * factor;
  Tensor<T> out = clamp(detail::linear_map_4(box, {a, b, 0, 0,  //
                                                   b, a, 0, 0,  //
                                                   0, 0, a, b,  //
                                                   0, 0, b, a}),
                        T{0}, T{1});
  detail::check_box_tensor(out, "enlarge_and_clamp (box outside image?)");
  return out;
}

/// w x h lattice x_i = ((w - i) / w) x_left + (i / w) x_right, likewise for y.
/// With `align_corners` the denominators become w - 1 and h - 1 so the
/// lattice reaches the far edges.
template <typename T>
CropGrid<T> make_grid(const Tensor<T>& box, std::size_t w, std::size_t h, bool align_corners = false) {
  if (w < 1 || h < 1) throw ContractError("make_grid: w and h must be >= 1");
  detail::check_box_tensor(box, "make_grid");
  const double dw = align_corners && w > 1 ? static_cast<double>(w - 1) : static_cast<double>(w);
  const double dh = align_corners && h > 1 ? static_cast<double>(h - 1) : static_cast<double>(h);
  std::vector<T> mx(w * h * 4, T{0}), my(w * h * 4, T{0});
  for (std::size_t j = 0; j < h; ++j) {
    for (std::size_t i = 0; i < w; ++i) {
      const std::size_t p = j * w + i;
      const double fi = static_cast<double>(i), fj = static_cast<double>(j);
      mx[p * 4 + 0] = static_cast<T>((dw - fi) / dw);
      mx[p * 4 + 1] = static_cast<T>(fi / dw);
      my[p * 4 + 2] = static_cast<T>((dh - fj) / dh);
      my[p * 4 + 3] = static_cast<T>(fj / dh);
    }
  }
  const Tensor<T> col = reshape(box, {4, 1});
  CropGrid<T> g;
  g.w = w;
  g.h = h;
  g.xs = reshape(matmul(Tensor<T>::constant({w * h, 4}, std::move(mx)), col), {w * h});
  g.ys = reshape(matmul(Tensor<T>::constant({w * h, 4}, std::move(my)), col), {w * h});
  return g;
}

template <typename T>
CropGrid<T> make_grid(const BoundingBox& box, std::size_t w, std::size_t h, bool align_corners = false) {
  return make_grid(box_tensor<T>(box), w, h, align_corners);
}

/// Normalized coordinate -> pixel coordinate on an axis of `extent` pixels.
inline double pixel_scale(std::size_t extent, bool align_corners) {
  return align_corners ? static_cast<double>(extent) - 1.0 : static_cast<double>(extent);
}

/// Bilinear sample of U [C x H x W] on the grid; returns [C x h x w].
template <typename T>
Tensor<T> sample_grid(const Tensor<T>& U, const CropGrid<T>& grid, bool align_corners = false) {
  const T sx = static_cast<T>(pixel_scale(U.dim(2), align_corners));
  const T sy = static_cast<T>(pixel_scale(U.dim(1), align_corners));
  return grid_sample(U, scale(grid.xs, sx), scale(grid.ys, sy), grid.h, grid.w);
}

/// Enlarges and clamps `box`, samples the same normalized grid from every
/// pyramid level and concatenates the results along channels.
template <typename T>
Tensor<T> crop_features_multiscale(const FeaturePyramid<T>& maps, const Tensor<T>& box, double enlarge_factor,
                                   std::size_t w, std::size_t h, bool align_corners = false) {
  const CropGrid<T> grid = make_grid(enlarge_and_clamp(box, enlarge_factor), w, h, align_corners);
  return concat(std::vector<Tensor<T>>{sample_grid(maps.stride4, grid, align_corners),
                                       sample_grid(maps.stride8, grid, align_corners),
                                       sample_grid(maps.stride16, grid, align_corners)},
                0);
}

struct TwoStageCrop {
  Image patch;
  Affine2D patch_to_image;  // patch pixel -> image pixel
  BoundingBox extended;     // normalized
};

/// Extends `box` symmetrically along one axis until height:width equals
/// patch_h:patch_w, then resamples that region to a patch_w x patch_h image.
inline TwoStageCrop crop_image_twostage(const Image& image, const BoundingBox& box, int patch_w, int patch_h) {
  detail::check_box_values(box.x_left, box.x_right, box.y_top, box.y_down, "crop_image_twostage");
  if (patch_w < 1 || patch_h < 1) throw ContractError("crop_image_twostage: empty patch");
  const double W = image.width, H = image.height;
  const double aspect = static_cast<double>(patch_h) / patch_w;
  double bw = box.width() * W, bh = box.height() * H;
  if (bh < aspect * bw) bh = aspect * bw;
  else bw = bh / aspect;
  const double x0 = box.cx() * W - 0.5 * bw, y0 = box.cy() * H - 0.5 * bh;
  TwoStageCrop out;
  out.patch_to_image = Affine2D::translation(x0, y0) * Affine2D::scaling(bw / patch_w, bh / patch_h);
  out.extended = {x0 / W, (x0 + bw) / W, y0 / H, (y0 + bh) / H};
  out.patch = resample_affine(image, out.patch_to_image, patch_w, patch_h);
  return out;
}

// ---------------------------------------------------------------------------
// Model

/// Per-layer predictions for one crop.
template <typename T>
using KeypointLayers = std::vector<QueryPrediction<T>>;

template <typename T>
class PrtrModel {
 public:
  PrtrModel() = default;
  PrtrModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Initializer init(seed);
    backbone_ = Backbone<T>(cfg_.backbone_channels, init);
    person_ = DetectionTransformer<T>(cfg_, HeadKind::person, static_cast<std::size_t>(person_channels()),
                                      static_cast<std::size_t>(cfg_.n_person_queries), init);
    if (cfg_.variant == Variant::two_stage) keypoint_backbone_ = Backbone<T>(cfg_.backbone_channels, init);
    keypoint_ = DetectionTransformer<T>(cfg_, HeadKind::keypoint, static_cast<std::size_t>(cfg_.crop_channels()),
                                        static_cast<std::size_t>(cfg_.n_keypoint_queries), init);
    keypoint_pos_ = reshape(positional_encoding_2d<T>(static_cast<std::size_t>(cfg_.crop_h),
                                                      static_cast<std::size_t>(cfg_.crop_w),
                                                      static_cast<std::size_t>(cfg_.d_model), PositionFrame::absolute()),
                            {static_cast<std::size_t>(cfg_.crop_h * cfg_.crop_w), static_cast<std::size_t>(cfg_.d_model)});
  }

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }

  /// Every trainable tensor with its stable name, in a fixed order.
  [[nodiscard]] ParamList<T> parameters() const {
    ParamList<T> out;
    backbone_.collect(out, "backbone");
    person_.collect(out, "person");
    if (cfg_.variant == Variant::two_stage) keypoint_backbone_.collect(out, "keypoint_backbone");
    keypoint_.collect(out, "keypoint");
    return out;
  }

  struct PersonStage {
    FeaturePyramid<T> features;
    typename DetectionTransformer<T>::Output out;
  };

  /// Backbone plus person transformer on a [3 x H x W] image.
  [[nodiscard]] PersonStage run_person_stage(const Tensor<T>& image) const {
    PersonStage st;
    st.features = backbone_(image);
    const Tensor<T>& map = st.features.at_stride(cfg_.person_stride);
    const Tensor<T> pos = reshape(
        positional_encoding_2d<T>(map.dim(1), map.dim(2), static_cast<std::size_t>(cfg_.d_model), PositionFrame::absolute()),
        {map.dim(1) * map.dim(2), static_cast<std::size_t>(cfg_.d_model)});
    st.out = person_(flatten_tokens(map), pos);
    return st;
  }

  /// Keypoint-backbone pyramid of a two-stage patch.
  [[nodiscard]] FeaturePyramid<T> patch_features(const Tensor<T>& patch) const {
    if (cfg_.variant != Variant::two_stage) throw ContractError("patch_features: model is not two-stage");
    return keypoint_backbone_(patch);
  }

  /// Runs the keypoint transformer on k crops [crop_channels x crop_h x crop_w]
  /// in one batched pass; returns per-crop, per-layer predictions.
  [[nodiscard]] std::vector<KeypointLayers<T>> run_keypoint_stage(const std::vector<Tensor<T>>& crops) const {
    std::vector<KeypointLayers<T>> out(crops.size());
    if (crops.empty()) return out;
    std::vector<Tensor<T>> tokens;
    for (const auto& c : crops) {
      if (c.rank() != 3 || c.dim(0) != static_cast<std::size_t>(cfg_.crop_channels()) ||
          c.dim(1) != static_cast<std::size_t>(cfg_.crop_h) || c.dim(2) != static_cast<std::size_t>(cfg_.crop_w)) {
        throw DimensionError("run_keypoint_stage: crop has shape " + shape_str(c.shape()));
      }
      tokens.push_back(flatten_tokens(c));
    }
    const std::size_t k = crops.size();
    const auto res = keypoint_(k == 1 ? tokens[0] : concat(tokens, 0), keypoint_pos_, k);
    const std::size_t Q = keypoint_.n_queries();
    for (std::size_t i = 0; i < k; ++i) {
      for (const auto& layer : res.layers) {
        if (k == 1) {
          out[i].push_back(layer);
        } else {
          out[i].push_back({slice(layer.logits, 0, i * Q, (i + 1) * Q), slice(layer.coords, 0, i * Q, (i + 1) * Q)});
        }
      }
    }
    return out;
  }

  [[nodiscard]] const Backbone<T>& backbone() const { return backbone_; }
  [[nodiscard]] const DetectionTransformer<T>& person_transformer() const { return person_; }
  [[nodiscard]] const DetectionTransformer<T>& keypoint_transformer() const { return keypoint_; }
  [[nodiscard]] const Tensor<T>& keypoint_positions() const { return keypoint_pos_; }

 private:
  [[nodiscard]] int person_channels() const {
    return cfg_.backbone_channels[cfg_.person_stride == 4 ? 2 : cfg_.person_stride == 8 ? 3 : 4];
  }

  ModelConfig cfg_;
  Backbone<T> backbone_, keypoint_backbone_;
  DetectionTransformer<T> person_, keypoint_;
  Tensor<T> keypoint_pos_;
};

// ---------------------------------------------------------------------------
// Readout

struct PersonCandidate {
  BoundingBox box;  // clamped to the image
  double score = 0;
  std::size_t query = 0;
};

/// All person queries of one layer, unfiltered, in query order.
template <typename T>
std::vector<PersonCandidate> person_candidates(const QueryPrediction<T>& pred) {
  const auto ps = [&] {
    NoGradGuard g;
    return softmax(pred.logits.detach(), 1);
  }();
  const auto p = ps.data();
  const auto c = pred.coords.data();
  std::vector<PersonCandidate> out;
  for (std::size_t q = 0; q < pred.logits.dim(0); ++q) {
    const auto b = BoundingBox::from_cxcywh(c[q * 4], c[q * 4 + 1], c[q * 4 + 2], c[q * 4 + 3]).clamped();
    out.push_back({b, static_cast<double>(p[q * 2]), q});
  }
  return out;
}

template <typename T>
std::vector<PersonCandidate> filter_persons(const QueryPrediction<T>& pred, double threshold) {
  std::vector<PersonCandidate> out;
  for (const auto& c : person_candidates(pred)) {
    if (c.score >= threshold && c.box.valid()) out.push_back(c);
  }
  return out;
}

/// Crop-frame keypoints: coordinates in [0,1]^2 of the crop, score = the
/// matched class probability.
struct CropReadout {
  std::vector<Point> coords;
  std::vector<double> scores;
  std::vector<std::size_t> queries;
};

/// One query per joint class: Hungarian assignment on the probability-only
/// cost, or the fixed class -> query map for class-specific queries.
template <typename T>
CropReadout readout_keypoints(const QueryPrediction<T>& pred, std::size_t n_joints, bool exclude_background,
                              bool class_specific = false) {
  PredictionSet ps;
  {
    NoGradGuard g;
    const auto probs = softmax(pred.logits.detach(), 1);
    ps.n_queries = pred.logits.dim(0);
    ps.n_classes = pred.logits.dim(1);
    ps.coord_dim = pred.coords.dim(1);
    for (T v : probs.data()) ps.probs.push_back(static_cast<double>(v));
    for (T v : pred.coords.data()) ps.coords.push_back(static_cast<double>(v));
  }
  if (ps.n_classes != n_joints + 1) throw DimensionError("readout_keypoints: class count does not match joints");
  std::vector<std::size_t> classes(n_joints);
  for (std::size_t j = 0; j < n_joints; ++j) classes[j] = j;
  const CostMatrix cost = cost_infer(classes, ps, exclude_background);
  CropReadout out;
  if (class_specific) {
    out.queries = classes;
  } else {
    out.queries = hungarian_solve(cost).assignment;
  }
  for (std::size_t j = 0; j < n_joints; ++j) {
    const std::size_t q = out.queries[j];
    out.coords.push_back({ps.coord(q, 0), ps.coord(q, 1)});
    out.scores.push_back(-cost(j, q));
  }
  return out;
}

/// Maps crop-frame (u, v) in [0,1]^2 to image pixels.
struct CropFrame {
  Affine2D to_image;

  /// End-to-end crop of a normalized box sampled from feature maps.
  static CropFrame from_box(const BoundingBox& b, int image_w, int image_h, bool align_corners) {
    const double sx = pixel_scale(static_cast<std::size_t>(image_w), align_corners);
    const double sy = pixel_scale(static_cast<std::size_t>(image_h), align_corners);
    return {Affine2D::scaling(sx, sy) * Affine2D::translation(b.x_left, b.y_top) *
            Affine2D::scaling(b.width(), b.height())};
  }

  /// Two-stage patch: crop frame -> patch pixel -> image pixel.
  static CropFrame from_patch(const TwoStageCrop& crop, int patch_w, int patch_h, bool align_corners) {
    return {crop.patch_to_image * Affine2D::scaling(pixel_scale(static_cast<std::size_t>(patch_w), align_corners),
                                                    pixel_scale(static_cast<std::size_t>(patch_h), align_corners))};
  }
};

inline PoseInstance to_instance(const CropReadout& r, const CropFrame& frame, const BoundingBox& box, double score,
                                int image_w, int image_h) {
  PoseInstance inst;
  inst.box = box;
  inst.score = score;
  inst.area = box.area() * image_w * image_h;
  for (std::size_t j = 0; j < r.coords.size(); ++j) {
    const Point p = frame.to_image.apply(r.coords[j]);
    inst.keypoints.push_back({p.x, p.y, true, r.scores[j]});
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Inference

struct InferenceOptions {
  double person_threshold = 0.5;
  bool exclude_background = true;
  bool flip_test = false;
  std::optional<std::vector<BoundingBox>> gt_boxes;  // bypasses person detection
};

inline BoundingBox mirror_box(const BoundingBox& b, int width) {
  const double s = static_cast<double>(width - 1) / width;
  return {s - b.x_right, s - b.x_left, b.y_top, b.y_down};
}

inline PoseInstance mirror_instance(const PoseInstance& inst, int width, std::span<const std::size_t> swap) {
  PoseInstance out = inst;
  out.box = mirror_box(inst.box, width);
  for (std::size_t j = 0; j < inst.keypoints.size(); ++j) {
    Keypoint k = inst.keypoints[j];
    if (k.visible) k.x = mirror_x(k.x, width);
    out.keypoints[swap[j]] = k;
  }
  return out;
}

/// Runs `pipeline` on the image and on its mirror, maps the mirrored result
/// back (x mirrored, joint slots swapped) and averages instances that are each
/// other's best box match. Unpaired instances of either branch are kept.
inline std::vector<PoseInstance> flip_test_average(
    const Image& image, const std::function<std::vector<PoseInstance>(const Image&, bool mirrored)>& pipeline,
    std::span<const std::size_t> swap) {
  for (std::size_t j = 0; j < swap.size(); ++j) {
    if (swap[j] >= swap.size() || swap[swap[j]] != j) throw ConfigError("flip test: swap permutation is not an involution");
  }
  const auto a = pipeline(image, false);
  std::vector<PoseInstance> b;
  for (const auto& inst : pipeline(mirror_horizontal(image), true)) b.push_back(mirror_instance(inst, image.width, swap));

  auto best = [](const PoseInstance& x, const std::vector<PoseInstance>& ys) -> std::optional<std::size_t> {
    std::optional<std::size_t> arg;
    double top = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      const double v = iou(x.box, ys[i].box);
      if (v > top) {
        top = v;
        arg = i;
      }
    }
    return arg;
  };
  std::vector<char> used_b(b.size(), 0);
  std::vector<PoseInstance> out;
  std::vector<PoseInstance> lone;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto j = best(a[i], b);
    if (j && best(b[*j], a) == i) {
      used_b[*j] = 1;
      const PoseInstance &x = a[i], &y = b[*j];
      PoseInstance m = x;
      m.box = {0.5 * (x.box.x_left + y.box.x_left), 0.5 * (x.box.x_right + y.box.x_right),
               0.5 * (x.box.y_top + y.box.y_top), 0.5 * (x.box.y_down + y.box.y_down)};
      m.score = 0.5 * (x.score + y.score);
      m.area = 0.5 * (x.area + y.area);
      for (std::size_t k = 0; k < m.keypoints.size(); ++k) {
        const Keypoint &p = x.keypoints[k], &q = y.keypoints[k];
        if (p.visible && q.visible) m.keypoints[k] = {0.5 * (p.x + q.x), 0.5 * (p.y + q.y), true, 0.5 * (p.score + q.score)};
        else m.keypoints[k] = p.visible ? p : q;
      }
      out.push_back(m);
    } else {
      lone.push_back(a[i]);
    }
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (!used_b[j]) lone.push_back(b[j]);
  }
  out.insert(out.end(), lone.begin(), lone.end());
  return out;
}

/// Persons located in one image and their keypoint-stage inputs.
template <typename T>
struct LocatedPersons {
  std::vector<PersonCandidate> persons;
  std::vector<Tensor<T>> crops;  // [crop_channels x crop_h x crop_w]
  std::vector<CropFrame> frames;
};

/// Person boxes (detected above threshold, or the given ones) with the
/// variant's crop for each. Call under NoGradGuard for inference.
template <typename T>
LocatedPersons<T> locate_persons(const PrtrModel<T>& model, const Image& image, const InferenceOptions& opt) {
  const ModelConfig& cfg = model.config();
  if (image.width != cfg.image_w || image.height != cfg.image_h) {
    throw DimensionError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         ", model expects " + std::to_string(cfg.image_w) + "x" + std::to_string(cfg.image_h));
  }
  const Tensor<T> img = to_tensor<T>(image);
  std::vector<PersonCandidate> persons;
  FeaturePyramid<T> features;
  if (opt.gt_boxes) {
    for (const auto& b : *opt.gt_boxes) persons.push_back({b.clamped(), 1.0, 0});
    if (cfg.variant == Variant::end_to_end && !persons.empty()) features = model.backbone()(img);
  } else {
    auto st = model.run_person_stage(img);
    persons = filter_persons(st.out.layers.back(), opt.person_threshold);
    features = st.features;
  }
  const auto cw = static_cast<std::size_t>(cfg.crop_w), ch = static_cast<std::size_t>(cfg.crop_h);
  LocatedPersons<T> out;
  for (const auto& p : persons) {
    if (!p.box.valid()) continue;
    if (cfg.variant == Variant::end_to_end) {
      const BoundingBox crop_box = p.box.enlarged(cfg.enlarge_factor).clamped();
      if (!crop_box.valid()) continue;
      out.crops.push_back(
          crop_features_multiscale(features, box_tensor<T>(p.box), cfg.enlarge_factor, cw, ch, cfg.align_corners));
      out.frames.push_back(CropFrame::from_box(crop_box, cfg.image_w, cfg.image_h, cfg.align_corners));
    } else {
      const TwoStageCrop tc = crop_image_twostage(image, p.box, cfg.patch_w, cfg.patch_h);
      const auto pf = model.patch_features(to_tensor<T>(tc.patch));
      out.crops.push_back(
          crop_features_multiscale(pf, box_tensor<T>(BoundingBox::unit()), 0.0, cw, ch, cfg.align_corners));
      out.frames.push_back(CropFrame::from_patch(tc, cfg.patch_w, cfg.patch_h, cfg.align_corners));
    }
    out.persons.push_back(p);
  }
  return out;
}

/// Single-branch pipeline: person boxes, crops, batched keypoint
/// transformer, readout mapped to image pixels.
template <typename T>
std::vector<PoseInstance> predict_single(const PrtrModel<T>& model, const Image& image, const InferenceOptions& opt) {
  const ModelConfig& cfg = model.config();
  NoGradGuard no_grad;
  const auto located = locate_persons(model, image, opt);
  const auto layers = model.run_keypoint_stage(located.crops);
  std::vector<PoseInstance> out;
  for (std::size_t i = 0; i < located.persons.size(); ++i) {
    const auto r = readout_keypoints(layers[i].back(), static_cast<std::size_t>(cfg.n_joints), opt.exclude_background,
                                     cfg.class_specific_queries);
    const auto& p = located.persons[i];
    out.push_back(to_instance(r, located.frames[i], p.box, p.score, cfg.image_w, cfg.image_h));
  }
  return out;
}

/// Full pipeline with optional flip-test averaging.
template <typename T>
std::vector<PoseInstance> predict(const PrtrModel<T>& model, const Image& image, const InferenceOptions& opt,
                                  std::span<const std::size_t> swap) {
  if (!opt.flip_test) return predict_single(model, image, opt);
  return flip_test_average(
      image,
      [&](const Image& img, bool mirrored) {
        InferenceOptions o = opt;
        if (mirrored && o.gt_boxes) {
          for (auto& b : *o.gt_boxes) b = mirror_box(b, image.width);
        }
        return predict_single(model, img, o);
      },
      swap);
}

}  // namespace prtr
