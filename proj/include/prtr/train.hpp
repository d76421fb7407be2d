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

// Training for both cascade variants: per-image losses, AdamW loop with
// milestone decay, line-delimited logs and checkpoints.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prtr/cascade.hpp"
#include "prtr/checkpoint.hpp"
#include "prtr/config.hpp"
#include "prtr/data.hpp"
#include "prtr/loss.hpp"
#include "prtr/optim.hpp"

namespace prtr {

template <typename T>
struct ImageLoss {
  Tensor<T> total;
  LossBreakdown person;
  LossBreakdown keypoint;
  std::size_t n_crops = 0;
};

inline std::vector<MatchTarget> person_targets(const Sample& s) {
  std::vector<MatchTarget> out;
  for (const auto& inst : s.instances) {
    out.push_back({0, {inst.box.cx(), inst.box.cy(), inst.box.width(), inst.box.height()}});
  }
  return out;
}

/// Visible keypoints expressed in the crop frame: the inverse of `frame`
/// applied to pixel coordinates; points outside [0,1]^2 are dropped.
inline std::vector<MatchTarget> keypoint_targets(const std::vector<Keypoint>& kps, const Affine2D& pixel_to_crop) {
  std::vector<MatchTarget> out;
  for (std::size_t j = 0; j < kps.size(); ++j) {
    if (!kps[j].visible) continue;
    const Point u = pixel_to_crop.apply({kps[j].x, kps[j].y});
    if (u.x < 0 || u.x > 1 || u.y < 0 || u.y > 1) continue;
    out.push_back({j, {u.x, u.y}});
  }
  return out;
}

inline TrainCostWeights person_cost_weights(const ModelConfig& c) {
  return {1.0, c.person_l1_weight, c.person_giou_weight};
}

inline SetLossOptions person_loss_options(const ModelConfig& c) {
  return {c.background_weight, c.person_l1_weight, c.person_giou_weight};
}

inline SetLossOptions keypoint_loss_options(const ModelConfig& c) {
  return {c.background_weight, c.keypoint_coord_weight, 0.0};
}

inline AssignmentFn keypoint_assignment(const ModelConfig& c) {
  if (c.class_specific_queries) {
    return [](std::span<const MatchTarget> t, const PredictionSet&) { return fixed_assignment(t); };
  }
  return hungarian_assignment({1.0, 1.0, 0.0});
}

namespace detail {

inline LossBreakdown average(const std::vector<LossBreakdown>& parts) {
  LossBreakdown out;
  if (parts.empty()) return out;
  const double inv = 1.0 / static_cast<double>(parts.size());
  out.per_layer.assign(parts[0].per_layer.size(), 0.0);
  for (const auto& p : parts) {
    out.total += inv * p.total;
    out.class_term += inv * p.class_term;
    out.coord_term += inv * p.coord_term;
    out.giou_term += inv * p.giou_term;
    for (std::size_t l = 0; l < p.per_layer.size() && l < out.per_layer.size(); ++l) out.per_layer[l] += inv * p.per_layer[l];
  }
  return out;
}

template <typename T>
Tensor<T> mean_of(const std::vector<Tensor<T>>& xs) {
  Tensor<T> total = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) total = total + xs[i];
  return scale(total, static_cast<T>(1.0 / static_cast<double>(xs.size())));
}

template <typename T>
void keypoint_loss(const PrtrModel<T>& model, const std::vector<Tensor<T>>& crops,
                   const std::vector<std::vector<MatchTarget>>& targets, ImageLoss<T>& out,
                   std::vector<Tensor<T>>& totals) {
  if (crops.empty()) return;
  const ModelConfig& c = model.config();
  const auto layers = model.run_keypoint_stage(crops);
  const AssignmentFn assign = keypoint_assignment(c);
  std::vector<Tensor<T>> crop_totals;
  std::vector<LossBreakdown> parts;
  for (std::size_t i = 0; i < crops.size(); ++i) {
    auto l = deep_supervised_loss<T>(targets[i], layers[i], assign, keypoint_loss_options(c));
    crop_totals.push_back(l.total);
    parts.push_back(l.parts);
  }
  out.keypoint = average(parts);
  out.n_crops = crops.size();
  totals.push_back(mean_of(crop_totals));
}

}  // namespace detail

/// End-to-end loss of one image: person set loss, then up to `person_cap`
/// randomly chosen matched person queries are cropped from the shared
/// backbone through their predicted boxes and supervised with the keypoints
/// of the matched ground-truth person.
template <typename T>
ImageLoss<T> end_to_end_loss(const PrtrModel<T>& model, const Sample& s, const Tensor<T>& image,
                             std::mt19937_64& rng, int person_cap) {
  const ModelConfig& c = model.config();
  ImageLoss<T> out;
  const auto st = model.run_person_stage(image);
  const auto targets = person_targets(s);
  auto pl = deep_supervised_loss<T>(targets, st.out.layers, hungarian_assignment(person_cost_weights(c)),
                                    person_loss_options(c));
  out.person = pl.parts;
  std::vector<Tensor<T>> totals{pl.total};

  const auto& final_layer = st.out.layers.back();
  const auto sigma = hungarian_solve(cost_train(targets, detach_predictions(final_layer), person_cost_weights(c))).assignment;
  std::vector<std::size_t> order(targets.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  if (order.size() > static_cast<std::size_t>(person_cap)) order.resize(static_cast<std::size_t>(person_cap));
  std::sort(order.begin(), order.end());

  std::vector<Tensor<T>> crops;
  std::vector<std::vector<MatchTarget>> kp_targets;
  for (std::size_t i : order) {
    const Tensor<T> box = box_from_cxcywh(reshape(gather(final_layer.coords, {sigma[i]}), {4}));
    BoundingBox crop_box = to_box(box).enlarged(c.enlarge_factor).clamped();
    if (!crop_box.valid()) continue;
    crops.push_back(crop_features_multiscale(st.features, box, c.enlarge_factor, static_cast<std::size_t>(c.crop_w),
                                             static_cast<std::size_t>(c.crop_h), c.align_corners));
    crop_box = to_box(enlarge_and_clamp(box.detach(), c.enlarge_factor));
    const CropFrame frame = CropFrame::from_box(crop_box, c.image_w, c.image_h, c.align_corners);
    kp_targets.push_back(keypoint_targets(s.instances[i].keypoints, frame.to_image.inverse()));
  }
  detail::keypoint_loss(model, crops, kp_targets, out, totals);
  out.total = totals.size() == 1 ? totals[0] : totals[0] + totals[1];
  return out;
}

/// Two-stage loss of one image: person set loss on the image, plus the
/// keypoint loss on ground-truth-box patches with random rotation, scale and
/// flip.
template <typename T>
ImageLoss<T> two_stage_loss(const PrtrModel<T>& model, const Sample& s, const Tensor<T>& image, std::mt19937_64& rng,
                            const AugmentConfig& aug, std::span<const std::size_t> swap) {
  const ModelConfig& c = model.config();
  ImageLoss<T> out;
  const auto st = model.run_person_stage(image);
  const auto targets = person_targets(s);
  auto pl = deep_supervised_loss<T>(targets, st.out.layers, hungarian_assignment(person_cost_weights(c)),
                                    person_loss_options(c));
  out.person = pl.parts;
  std::vector<Tensor<T>> totals{pl.total};

  std::vector<Tensor<T>> crops;
  std::vector<std::vector<MatchTarget>> kp_targets;
  const Tensor<T> unit = box_tensor<T>(BoundingBox::unit());
  for (const auto& inst : s.instances) {
    const TwoStageCrop tc = crop_image_twostage(s.image, inst.box, c.patch_w, c.patch_h);
    const Affine2D to_patch = tc.patch_to_image.inverse();
    KeypointSample ks{tc.patch, inst.keypoints};
    for (auto& k : ks.keypoints) {
      if (!k.visible) continue;
      const Point p = to_patch.apply({k.x, k.y});
      k.x = p.x;
      k.y = p.y;
    }
    const Augmented a = augment(ks, sample_augment_params(aug, rng()), swap);
    const auto pf = model.patch_features(to_tensor<T>(a.sample.image));
    crops.push_back(crop_features_multiscale(pf, unit, 0.0, static_cast<std::size_t>(c.crop_w),
                                             static_cast<std::size_t>(c.crop_h), c.align_corners));
    const Affine2D to_crop = Affine2D::scaling(1.0 / pixel_scale(static_cast<std::size_t>(c.patch_w), c.align_corners),
                                               1.0 / pixel_scale(static_cast<std::size_t>(c.patch_h), c.align_corners));
    kp_targets.push_back(keypoint_targets(a.sample.keypoints, to_crop));
  }
  detail::keypoint_loss(model, crops, kp_targets, out, totals);
  out.total = totals.size() == 1 ? totals[0] : totals[0] + totals[1];
  return out;
}

struct StepReport {
  int step = 0;  // 1-based index of the completed step
  double loss = 0;
  LossBreakdown person;
  LossBreakdown keypoint;
  double grad_norm = 0;
  double lr = 0;
  double seconds = 0;
};

inline Json to_json(const LossBreakdown& b) {
  return {{"total", b.total}, {"class", b.class_term}, {"coord", b.coord_term}, {"giou", b.giou_term},
          {"per_layer", b.per_layer}};
}

inline Json to_json(const StepReport& r) {
  return {{"step", r.step},
          {"loss", r.loss},
          {"person", to_json(r.person)},
          {"keypoint", to_json(r.keypoint)},
          {"grad_norm", r.grad_norm},
          {"lr", r.lr},
          {"seconds", r.seconds}};
}

inline double learning_rate_at(const OptimizerConfig& o, double base, int step) {
  double lr = base;
  for (int m : o.milestones) {
    if (step >= m) lr *= o.gamma;
  }
  return lr;
}

/// Owns model, optimizer state and data order for one run.
template <typename T>
class Trainer {
 public:
  Trainer(RunConfig rc, Dataset ds) : rc_(std::move(rc)), ds_(std::move(ds)) {
    rc_.validate();
    ds_.validate();
    if (ds_.catalog.size() != static_cast<std::size_t>(rc_.model.n_joints)) {
      throw ConfigError("dataset has " + std::to_string(ds_.catalog.size()) + " joints, model.n_joints is " +
                        std::to_string(rc_.model.n_joints));
    }
    for (auto& s : ds_.samples) {
      if (s.image.empty()) throw ContractError("trainer: dataset images must be loaded");
      s = resized(s, rc_.model.image_w, rc_.model.image_h);
      images_.push_back(to_tensor<T>(s.image));
    }
    if (ds_.samples.empty()) throw ConfigError("training dataset has no images");
    model_ = PrtrModel<T>(rc_.model, derive_seed(rc_.seed, 0xC0FFEE));
    for (const auto& p : model_.parameters()) {
      params_.push_back(p.tensor);
      groups_.push_back(p.group);
    }
  }

  [[nodiscard]] const PrtrModel<T>& model() const { return model_; }
  [[nodiscard]] const RunConfig& config() const { return rc_; }
  [[nodiscard]] const Dataset& dataset() const { return ds_; }
  [[nodiscard]] int steps_done() const { return step_; }

  /// Loss of one image (no parameter update), drawing randomness from `rng`.
  ImageLoss<T> image_loss(std::size_t index, std::mt19937_64& rng) const {
    const Sample& s = ds_.samples[index];
    if (rc_.model.variant == Variant::end_to_end) return end_to_end_loss(model_, s, images_[index], rng, rc_.person_cap);
    return two_stage_loss(model_, s, images_[index], rng, rc_.augment, ds_.catalog.swap);
  }

  StepReport step() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Tensor<T>> totals;
    std::vector<LossBreakdown> person, keypoint;
    for (int b = 0; b < rc_.batch_size; ++b) {
      const std::size_t index = next_index();
      std::mt19937_64 rng(derive_seed(rc_.seed, static_cast<std::uint64_t>(step_) * 7919 + static_cast<std::uint64_t>(b)));
      auto l = image_loss(index, rng);
      totals.push_back(l.total);
      person.push_back(l.person);
      if (l.n_crops) keypoint.push_back(l.keypoint);
    }
    const Tensor<T> total = detail::mean_of(totals);
    for (auto& p : params_) p.zero_grad();
    backward(total);
    fill_missing_grads(params_);
    StepReport r;
    r.grad_norm = clip_grad_norm(params_, rc_.optimizer.grad_clip);
    std::vector<double> lrs;
    const double lr = learning_rate_at(rc_.optimizer, rc_.optimizer.lr, step_);
    const double lr_bb = learning_rate_at(rc_.optimizer, rc_.optimizer.lr_backbone, step_);
    for (auto g : groups_) lrs.push_back(g == ParamGroup::backbone ? lr_bb : lr);
    adamw_step(params_, opt_state_, lrs,
               {rc_.optimizer.beta1, rc_.optimizer.beta2, rc_.optimizer.eps, rc_.optimizer.weight_decay});
    ++step_;
    r.step = step_;
    r.loss = static_cast<double>(total.item());
    r.person = detail::average(person);
    r.keypoint = detail::average(keypoint);
    r.lr = lr;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

 private:
  std::size_t next_index() {
    if (cursor_ == order_.size()) {
      order_.resize(ds_.samples.size());
      std::iota(order_.begin(), order_.end(), 0);
      std::mt19937_64 rng(derive_seed(rc_.seed, 0xE90C0000ULL + epoch_++));
      std::shuffle(order_.begin(), order_.end(), rng);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  RunConfig rc_;
  Dataset ds_;
  std::vector<Tensor<T>> images_;
  PrtrModel<T> model_;
  std::vector<Tensor<T>> params_;
  std::vector<ParamGroup> groups_;
  AdamWState<T> opt_state_;
  int step_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

struct TrainResult {
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  double best_loss = std::numeric_limits<double>::infinity();
  int steps = 0;
  double seconds = 0;
};

/// Runs all steps, writing train_log.jsonl, best.ckpt and last.ckpt under
/// rc.output_dir. "Best" is the lowest mean loss over one pass of the data.
template <typename T>
TrainResult run_training(Trainer<T>& trainer, const std::function<void(const StepReport&)>& on_step = {}) {
  namespace fs = std::filesystem;
  const RunConfig& rc = trainer.config();
  fs::create_directories(rc.output_dir);
  std::ofstream log(fs::path(rc.output_dir) / "train_log.jsonl");
  log << Json{{"schema", "prtr.train_log"}, {"version", 1}, {"model", to_json(rc.model)}, {"seed", rc.seed},
              {"steps", rc.steps}, {"batch_size", rc.batch_size}}
             .dump()
      << "\n";
  TrainResult res;
  const auto t0 = std::chrono::steady_clock::now();
  const int window = std::max(1, static_cast<int>(trainer.dataset().samples.size()) / rc.batch_size);
  double window_sum = 0;
  int window_n = 0;
  write_checkpoint((fs::path(rc.output_dir) / "best.ckpt").string(), snapshot(trainer.model()));
  for (int s = 0; s < rc.steps; ++s) {
    const StepReport r = trainer.step();
    res.final_loss = r.loss;
    if (r.step % rc.log_every == 0 || r.step == rc.steps) log << to_json(r).dump() << "\n";
    if (on_step) on_step(r);
    window_sum += r.loss;
    if (++window_n == window) {
      const double mean = window_sum / window_n;
      if (mean < res.best_loss) {
        res.best_loss = mean;
        write_checkpoint((fs::path(rc.output_dir) / "best.ckpt").string(), snapshot(trainer.model()));
      }
      window_sum = 0;
      window_n = 0;
    }
  }
  write_checkpoint((fs::path(rc.output_dir) / "last.ckpt").string(), snapshot(trainer.model()));
  res.steps = trainer.steps_done();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// The training dataset a run config names, with images loaded.
inline Dataset training_dataset(const RunConfig& rc) {
  Dataset ds = rc.use_synthetic ? synth_stickfigures(rc.synthetic.n_images, rc.synthetic.seed,
                                                     {rc.model.image_w, rc.model.image_h})
                                : load_dataset(rc.train_data);
  load_images(ds);
  return ds;
}

}  // namespace prtr
