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

// Dataset evaluation under the test-time flags, pose records and overlays.

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "prtr/cascade.hpp"
#include "prtr/data.hpp"
#include "prtr/eval.hpp"

namespace prtr {

inline constexpr int kReportSchemaVersion = 1;

struct EvalFlags {
  bool gt_box = false;
  bool include_bg_logit = false;
  bool flip = false;
};

struct EvalRow {
  EvalFlags flags;
  ApReport ap;
  PckCount pck;
  double alpha = 0.2;
};

/// Worker count from PRTR_WORKERS, defaulting to the hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("PRTR_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(i) for i in [0, n) on up to `workers` threads. Each index is
/// processed exactly once; results must be written to per-index slots.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn fn) {
  workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::vector<BoundingBox> boxes_of(const std::vector<PoseInstance>& instances) {
  std::vector<BoundingBox> out;
  for (const auto& i : instances) out.push_back(i.box);
  return out;
}

/// Predicts every sample (resized to the model input) under `flags`.
template <typename T>
std::vector<EvalImage> predict_dataset(const PrtrModel<T>& model, const Dataset& ds, const EvalFlags& flags,
                                       double person_threshold = 0.5, unsigned workers = 1) {
  const ModelConfig& cfg = model.config();
  std::vector<EvalImage> out(ds.samples.size());
  parallel_for(ds.samples.size(), workers, [&](std::size_t i) {
    const Sample s = resized(ds.samples[i], cfg.image_w, cfg.image_h);
    InferenceOptions opt;
    opt.person_threshold = person_threshold;
    opt.exclude_background = !flags.include_bg_logit;
    opt.flip_test = flags.flip;
    if (flags.gt_box) opt.gt_boxes = boxes_of(s.instances);
    out[i] = {s.width, s.height, s.instances, predict(model, s.image, opt, ds.catalog.swap)};
  });
  return out;
}

template <typename T>
EvalRow evaluate(const PrtrModel<T>& model, const Dataset& ds, const EvalFlags& flags, double alpha = 0.2,
                 double person_threshold = 0.5, unsigned workers = 1) {
  const auto images = predict_dataset(model, ds, flags, person_threshold, workers);
  const auto k = oks_constants(ds.catalog.size());
  EvalRow row;
  row.flags = flags;
  row.alpha = alpha;
  row.ap = coco_ap(images, k);
  row.pck = dataset_pck(images, alpha, k);
  return row;
}

/// The 8 combinations of (gt_box, include_bg_logit, flip).
inline std::vector<EvalFlags> table5_sweep() {
  std::vector<EvalFlags> out;
  for (int m = 0; m < 8; ++m) out.push_back({(m & 4) != 0, (m & 2) != 0, (m & 1) != 0});
  return out;
}

inline Json to_json(const EvalFlags& f) {
  return {{"gt_box", f.gt_box}, {"include_bg_logit", f.include_bg_logit}, {"flip", f.flip}};
}

inline Json to_json(const EvalRow& r) {
  char key[32];
  std::snprintf(key, sizeof key, "PCK@%g", r.alpha);
  return {{"flags", to_json(r.flags)}, {"AP", r.ap.ap},     {"AP50", r.ap.ap50},  {"AP75", r.ap.ap75},
          {"AP_M", r.ap.ap_m},         {"AP_L", r.ap.ap_l}, {"AR", r.ap.ar},      {key, r.pck.fraction()},
          {"pck_correct", r.pck.correct}, {"pck_total", r.pck.total}};
}

inline Json to_json(const PoseInstance& inst) {
  Json kps = Json::array();
  for (const auto& k : inst.keypoints) kps.push_back(k.visible ? Json{k.x, k.y, k.score} : Json(nullptr));
  return {{"box", {inst.box.x_left, inst.box.x_right, inst.box.y_top, inst.box.y_down}},
          {"score", inst.score},
          {"keypoints", kps}};
}

/// Maps predictions made on a model-sized copy back to the original size.
inline PoseInstance rescale_instance(PoseInstance inst, double sx, double sy) {
  for (auto& k : inst.keypoints) {
    k.x *= sx;
    k.y *= sy;
  }
  inst.area *= sx * sy;
  return inst;
}

/// Distinct colors per joint class, cycled.
inline Color joint_color(std::size_t j) {
  static constexpr std::array<Color, 8> table = {{{1.0f, 0.0f, 0.0f},
                                                  {0.0f, 1.0f, 0.0f},
                                                  {0.0f, 0.4f, 1.0f},
                                                  {1.0f, 1.0f, 0.0f},
                                                  {1.0f, 0.0f, 1.0f},
                                                  {0.0f, 1.0f, 1.0f},
                                                  {1.0f, 0.5f, 0.0f},
                                                  {0.6f, 0.3f, 1.0f}}};
  return table[j % table.size()];
}

/// Box outlines in white, then a class-colored marker per keypoint.
inline Image render_overlay(const Image& image, const std::vector<PoseInstance>& instances, int marker_half = 1) {
  Image out = image;
  const Color white{1.0f, 1.0f, 1.0f};
  for (const auto& inst : instances) {
    const double x0 = inst.box.x_left * image.width, x1 = inst.box.x_right * image.width;
    const double y0 = inst.box.y_top * image.height, y1 = inst.box.y_down * image.height;
    draw_line(out, {x0, y0}, {x1, y0}, 0.3, white);
    draw_line(out, {x1, y0}, {x1, y1}, 0.3, white);
    draw_line(out, {x1, y1}, {x0, y1}, 0.3, white);
    draw_line(out, {x0, y1}, {x0, y0}, 0.3, white);
  }
  for (const auto& inst : instances) {
    for (std::size_t j = 0; j < inst.keypoints.size(); ++j) {
      const auto& k = inst.keypoints[j];
      if (k.visible) draw_marker(out, {k.x, k.y}, marker_half, joint_color(j));
    }
  }
  return out;
}

}  // namespace prtr
