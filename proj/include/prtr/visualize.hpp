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

// Per-decoder-layer inspection of the keypoint transformer for one person:
// query records, stacked Gaussian probability maps and the trajectories of
// the finally selected queries.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "prtr/cascade.hpp"
#include "prtr/eval.hpp"

namespace prtr {

struct QueryRecord {
  std::vector<double> probs;  // J + 1 classes, background last
  Point image_xy;             // pixels
};

/// Layer 0 is the heads applied to the raw query embeddings.
struct LayerSnapshot {
  int layer = 0;
  std::vector<QueryRecord> queries;
};

struct PersonVisualization {
  PersonCandidate person;
  std::vector<LayerSnapshot> layers;
  std::vector<std::size_t> selected;            // final-layer query per joint
  std::vector<std::vector<Point>> trajectory;   // [joint][layer]
};

enum class StackMode { max, sum };

struct HeatmapOptions {
  double sigma = -1;  // pixels; negative = 2 px per 64 px of image width
  StackMode mode = StackMode::max;
};

template <typename T>
PersonVisualization visualize_person(const PrtrModel<T>& model, const Image& image, std::size_t person_index,
                                     const InferenceOptions& opt) {
  const ModelConfig& cfg = model.config();
  NoGradGuard no_grad;
  const auto located = locate_persons(model, image, opt);
  if (person_index >= located.persons.size()) {
    throw ContractError("person index " + std::to_string(person_index) + " out of range (" +
                        std::to_string(located.persons.size()) + " persons found)");
  }
  const auto layers = model.run_keypoint_stage({located.crops[person_index]})[0];
  const CropFrame& frame = located.frames[person_index];
  std::vector<QueryPrediction<T>> all{model.keypoint_transformer().initial_prediction()};
  all.insert(all.end(), layers.begin(), layers.end());

  PersonVisualization out;
  out.person = located.persons[person_index];
  for (std::size_t l = 0; l < all.size(); ++l) {
    LayerSnapshot snap;
    snap.layer = static_cast<int>(l);
    const auto probs = softmax(all[l].logits, 1).data();
    const auto coords = all[l].coords.data();
    const std::size_t C = all[l].logits.dim(1);
    for (std::size_t q = 0; q < all[l].logits.dim(0); ++q) {
      QueryRecord r;
      for (std::size_t c = 0; c < C; ++c) r.probs.push_back(static_cast<double>(probs[q * C + c]));
      r.image_xy = frame.to_image.apply({static_cast<double>(coords[q * 2]), static_cast<double>(coords[q * 2 + 1])});
      snap.queries.push_back(r);
    }
    out.layers.push_back(std::move(snap));
  }
  const auto J = static_cast<std::size_t>(cfg.n_joints);
  out.selected = readout_keypoints(layers.back(), J, opt.exclude_background, cfg.class_specific_queries).queries;
  out.trajectory.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    for (const auto& snap : out.layers) out.trajectory[j].push_back(snap.queries[out.selected[j]].image_xy);
  }
  return out;
}

/// Gaussian around every query's location with peak equal to its
/// probability of class `joint`, stacked over queries. Row-major [h x w].
inline std::vector<double> probability_map(const LayerSnapshot& snap, std::size_t joint, int width, int height,
                                           const HeatmapOptions& opt = {}) {
  const double sigma = opt.sigma > 0 ? opt.sigma : 2.0 * width / 64.0;
  std::vector<double> map(static_cast<std::size_t>(width) * height, 0.0);
  for (const auto& q : snap.queries) {
    const double peak = q.probs.at(joint);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double dx = x - q.image_xy.x, dy = y - q.image_xy.y;
        const double v = peak * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        double& m = map[static_cast<std::size_t>(y) * width + x];
        m = opt.mode == StackMode::max ? std::max(m, v) : m + v;
      }
    }
  }
  return map;
}

/// Mean pixel distance of the selected keypoints to `gt` at every layer.
inline std::vector<double> layer_distances(const PersonVisualization& v, const PoseInstance& gt) {
  std::vector<double> out(v.layers.size(), 0.0);
  for (std::size_t l = 0; l < v.layers.size(); ++l) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < v.trajectory.size(); ++j) {
      if (!gt.keypoints[j].visible) continue;
      const Point p = v.trajectory[j][l];
      out[l] += std::hypot(p.x - gt.keypoints[j].x, p.y - gt.keypoints[j].y);
      ++n;
    }
    if (n) out[l] /= static_cast<double>(n);
  }
  return out;
}

/// True when the distances never increase from one snapshot to the next.
inline bool monotone_refinement(const std::vector<double>& distances) {
  for (std::size_t l = 1; l < distances.size(); ++l) {
    if (distances[l] > distances[l - 1]) return false;
  }
  return true;
}

}  // namespace prtr
