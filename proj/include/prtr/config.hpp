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

// Model and run configuration, JSON (de)serialization with strict key checks.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "prtr/error.hpp"

namespace prtr {

using Json = nlohmann::json;

enum class Variant { two_stage, end_to_end };

inline std::string to_string(Variant v) { return v == Variant::two_stage ? "two_stage" : "end_to_end"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "two_stage") return Variant::two_stage;
  if (s == "end_to_end") return Variant::end_to_end;
  throw ConfigError("unknown variant '" + s + "' (expected two_stage or end_to_end)");
}

struct ModelConfig {
  int d_model = 32;
  int n_heads = 4;
  int n_encoder_layers = 2;
  int n_decoder_layers = 2;
  int ffn_dim = 64;
  int n_person_queries = 8;
  int n_keypoint_queries = 12;
  int n_joints = 5;
  // Stem (stride 1) followed by four stride-2 stages; the last three stages
  // give the maps at strides 4, 8 and 16.
  std::vector<int> backbone_channels{8, 16, 24, 32, 48};
  int person_stride = 8;  // which backbone map feeds the person transformer
  int crop_w = 6;
  int crop_h = 8;
  int image_h = 64;
  int image_w = 64;
  int patch_h = 64;  // two-stage keypoint input, aspect patch_h:patch_w
  int patch_w = 48;
  double enlarge_factor = 0.25;
  bool exclude_background_at_readout = true;
  bool align_corners = false;
  bool class_specific_queries = false;
  Variant variant = Variant::end_to_end;
  double background_weight = 0.1;
  double keypoint_coord_weight = 1.0;
  double person_l1_weight = 5.0;
  double person_giou_weight = 2.0;

  static ModelConfig desk() { return {}; }

  static ModelConfig paper() {
    ModelConfig c;
    c.d_model = 256;
    c.n_heads = 8;
    c.n_encoder_layers = 6;
    c.n_decoder_layers = 6;
    c.ffn_dim = 2048;
    c.n_person_queries = 100;
    c.n_keypoint_queries = 100;
    c.n_joints = 17;
    c.backbone_channels = {64, 256, 512, 1024, 2048};
    c.person_stride = 16;
    c.crop_w = 12;
    c.crop_h = 16;
    c.image_h = 512;
    c.image_w = 512;
    c.patch_h = 384;
    c.patch_w = 288;
    return c;
  }

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v < 1) throw ConfigError(std::string("model.") + name + " must be >= 1");
    };
    positive(d_model, "d_model");
    positive(n_heads, "n_heads");
    positive(ffn_dim, "ffn_dim");
    positive(n_person_queries, "n_person_queries");
    positive(n_keypoint_queries, "n_keypoint_queries");
    positive(n_joints, "n_joints");
    positive(crop_w, "crop_w");
    positive(crop_h, "crop_h");
    positive(image_h, "image_h");
    positive(image_w, "image_w");
    positive(patch_h, "patch_h");
    positive(patch_w, "patch_w");
    if (n_encoder_layers < 0 || n_decoder_layers < 1) {
      throw ConfigError("model: need n_encoder_layers >= 0 and n_decoder_layers >= 1");
    }
    if (d_model % n_heads != 0) throw ConfigError("model.d_model must be divisible by model.n_heads");
    if (d_model % 4 != 0) throw ConfigError("model.d_model must be divisible by 4 (2-D sine encoding)");
    if (n_keypoint_queries < n_joints) throw ConfigError("model.n_keypoint_queries must be >= model.n_joints");
    if (class_specific_queries && n_keypoint_queries != n_joints) {
      throw ConfigError("model.class_specific_queries requires n_keypoint_queries == n_joints");
    }
    if (backbone_channels.size() != 5) throw ConfigError("model.backbone_channels needs 5 entries");
    for (int c : backbone_channels) positive(c, "backbone_channels[]");
    if (person_stride != 4 && person_stride != 8 && person_stride != 16) {
      throw ConfigError("model.person_stride must be 4, 8 or 16");
    }
    if (image_h % 16 || image_w % 16) throw ConfigError("model.image_h/image_w must be divisible by 16");
    if (patch_h % 16 || patch_w % 16) throw ConfigError("model.patch_h/patch_w must be divisible by 16");
    if (enlarge_factor < 0) throw ConfigError("model.enlarge_factor must be >= 0");
    if (background_weight < 0) throw ConfigError("model.background_weight must be >= 0");
  }

  [[nodiscard]] int head_dim() const { return d_model / n_heads; }
  [[nodiscard]] int crop_channels() const {
    return backbone_channels[2] + backbone_channels[3] + backbone_channels[4];
  }
};

namespace detail {

// Rejects keys outside `allowed`, naming the first offender with its section.
inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + section + "." + it.key() + "'");
  }
}

template <typename V>
void read_if(const Json& j, const char* key, V& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const Json::exception& e) {
    throw ConfigError("bad value for '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace detail

inline Json to_json(const ModelConfig& c) {
  return Json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_encoder_layers", c.n_encoder_layers},
              {"n_decoder_layers", c.n_decoder_layers},
              {"ffn_dim", c.ffn_dim},
              {"n_person_queries", c.n_person_queries},
              {"n_keypoint_queries", c.n_keypoint_queries},
              {"n_joints", c.n_joints},
              {"backbone_channels", c.backbone_channels},
              {"person_stride", c.person_stride},
              {"crop_w", c.crop_w},
              {"crop_h", c.crop_h},
              {"image_h", c.image_h},
              {"image_w", c.image_w},
              {"patch_h", c.patch_h},
              {"patch_w", c.patch_w},
              {"enlarge_factor", c.enlarge_factor},
              {"exclude_background_at_readout", c.exclude_background_at_readout},
              {"align_corners", c.align_corners},
              {"class_specific_queries", c.class_specific_queries},
              {"variant", to_string(c.variant)},
              {"background_weight", c.background_weight},
              {"keypoint_coord_weight", c.keypoint_coord_weight},
              {"person_l1_weight", c.person_l1_weight},
              {"person_giou_weight", c.person_giou_weight}};
}

/// Overlays the keys present in `j` onto `base`.
inline ModelConfig model_config_from_json(const Json& j, ModelConfig base = {}) {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    const Json defaults = to_json(ModelConfig{});
    for (auto it = defaults.begin(); it != defaults.end(); ++it) k.insert(it.key());
    k.insert("profile");
    return k;
  }();
  detail::check_keys(j, keys, "model");
  if (j.contains("profile")) {
    const auto p = j.at("profile").get<std::string>();
    if (p == "desk") base = ModelConfig::desk();
    else if (p == "paper") base = ModelConfig::paper();
    else throw ConfigError("unknown model.profile '" + p + "'");
  }
  ModelConfig c = base;
  const std::string s = "model";
  detail::read_if(j, "d_model", c.d_model, s);
  detail::read_if(j, "n_heads", c.n_heads, s);
  detail::read_if(j, "n_encoder_layers", c.n_encoder_layers, s);
  detail::read_if(j, "n_decoder_layers", c.n_decoder_layers, s);
  detail::read_if(j, "ffn_dim", c.ffn_dim, s);
  detail::read_if(j, "n_person_queries", c.n_person_queries, s);
  detail::read_if(j, "n_keypoint_queries", c.n_keypoint_queries, s);
  detail::read_if(j, "n_joints", c.n_joints, s);
  detail::read_if(j, "backbone_channels", c.backbone_channels, s);
  detail::read_if(j, "person_stride", c.person_stride, s);
  detail::read_if(j, "crop_w", c.crop_w, s);
  detail::read_if(j, "crop_h", c.crop_h, s);
  detail::read_if(j, "image_h", c.image_h, s);
  detail::read_if(j, "image_w", c.image_w, s);
  detail::read_if(j, "patch_h", c.patch_h, s);
  detail::read_if(j, "patch_w", c.patch_w, s);
  detail::read_if(j, "enlarge_factor", c.enlarge_factor, s);
  detail::read_if(j, "exclude_background_at_readout", c.exclude_background_at_readout, s);
  detail::read_if(j, "align_corners", c.align_corners, s);
  detail::read_if(j, "class_specific_queries", c.class_specific_queries, s);
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  detail::read_if(j, "background_weight", c.background_weight, s);
  detail::read_if(j, "keypoint_coord_weight", c.keypoint_coord_weight, s);
  detail::read_if(j, "person_l1_weight", c.person_l1_weight, s);
  detail::read_if(j, "person_giou_weight", c.person_giou_weight, s);
  c.validate();
  return c;
}

/// Names of fields whose values differ.
inline std::vector<std::string> config_diff(const ModelConfig& a, const ModelConfig& b) {
  const Json ja = to_json(a), jb = to_json(b);
  std::vector<std::string> out;
  for (auto it = ja.begin(); it != ja.end(); ++it) {
    if (jb.at(it.key()) != it.value()) out.push_back(it.key());
  }
  return out;
}

inline bool operator==(const ModelConfig& a, const ModelConfig& b) { return config_diff(a, b).empty(); }

enum class Precision { f32, f64 };

struct OptimizerConfig {
  double lr = 1e-3;
  double lr_backbone = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<int> milestones;  // steps at which the rate is multiplied by gamma
  double gamma = 0.5;
  double grad_clip = 0.1;  // max global grad norm, 0 disables
};

struct AugmentConfig {
  bool enabled = true;
  double max_rotation_deg = 40.0;
  double scale_min = 0.7;
  double scale_max = 1.3;
  bool flip = true;
};

struct SyntheticConfig {
  int n_images = 64;
  std::uint64_t seed = 1;
};

struct RunConfig {
  std::string train_data;  // COCO-format annotation file or corpus directory
  bool use_synthetic = false;
  SyntheticConfig synthetic;
  ModelConfig model;
  OptimizerConfig optimizer;
  AugmentConfig augment;
  int steps = 3000;
  int batch_size = 4;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  int person_cap = 5;
  bool flip_test = false;
  bool gt_box = false;
  std::string output_dir = "run";
  int log_every = 1;

  void validate() const {
    model.validate();
    if (train_data.empty() && !use_synthetic) throw ConfigError("config needs train_data or synthetic");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (person_cap < 1) throw ConfigError("person_cap must be >= 1");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
    if (optimizer.lr <= 0 || optimizer.lr_backbone <= 0) throw ConfigError("optimizer learning rates must be > 0");
    if (augment.scale_min <= 0 || augment.scale_max < augment.scale_min) {
      throw ConfigError("augment scale range invalid");
    }
    if (synthetic.n_images < 0) throw ConfigError("synthetic.n_images must be >= 0");
  }
};

inline RunConfig run_config_from_json(const Json& j) {
  detail::check_keys(j, {"train_data", "synthetic", "model", "optimizer", "augment", "steps", "batch_size",
                         "seed", "precision", "person_cap", "flip_test", "gt_box", "output_dir", "log_every"},
                     "config");
  RunConfig rc;
  const std::string s = "config";
  detail::read_if(j, "train_data", rc.train_data, s);
  if (j.contains("synthetic")) {
    const auto& sj = j.at("synthetic");
    detail::check_keys(sj, {"n_images", "seed"}, "synthetic");
    rc.use_synthetic = true;
    detail::read_if(sj, "n_images", rc.synthetic.n_images, "synthetic");
    detail::read_if(sj, "seed", rc.synthetic.seed, "synthetic");
  }
  if (j.contains("model")) rc.model = model_config_from_json(j.at("model"));
  if (j.contains("optimizer")) {
    const auto& oj = j.at("optimizer");
    detail::check_keys(oj, {"lr", "lr_backbone", "weight_decay", "beta1", "beta2", "eps", "milestones", "gamma",
                            "grad_clip"},
                       "optimizer");
    auto& o = rc.optimizer;
    detail::read_if(oj, "lr", o.lr, "optimizer");
    detail::read_if(oj, "lr_backbone", o.lr_backbone, "optimizer");
    detail::read_if(oj, "weight_decay", o.weight_decay, "optimizer");
    detail::read_if(oj, "beta1", o.beta1, "optimizer");
    detail::read_if(oj, "beta2", o.beta2, "optimizer");
    detail::read_if(oj, "eps", o.eps, "optimizer");
    detail::read_if(oj, "milestones", o.milestones, "optimizer");
    detail::read_if(oj, "gamma", o.gamma, "optimizer");
    detail::read_if(oj, "grad_clip", o.grad_clip, "optimizer");
  }
  if (j.contains("augment")) {
    const auto& aj = j.at("augment");
    detail::check_keys(aj, {"enabled", "max_rotation_deg", "scale_min", "scale_max", "flip"}, "augment");
    auto& a = rc.augment;
    detail::read_if(aj, "enabled", a.enabled, "augment");
    detail::read_if(aj, "max_rotation_deg", a.max_rotation_deg, "augment");
    detail::read_if(aj, "scale_min", a.scale_min, "augment");
    detail::read_if(aj, "scale_max", a.scale_max, "augment");
    detail::read_if(aj, "flip", a.flip, "augment");
  }
  detail::read_if(j, "steps", rc.steps, s);
  detail::read_if(j, "batch_size", rc.batch_size, s);
  detail::read_if(j, "seed", rc.seed, s);
  if (j.contains("precision")) {
    const auto p = j.at("precision").get<std::string>();
    if (p == "f32") rc.precision = Precision::f32;
    else if (p == "f64") rc.precision = Precision::f64;
    else throw ConfigError("unknown precision '" + p + "'");
  }
  detail::read_if(j, "person_cap", rc.person_cap, s);
  detail::read_if(j, "flip_test", rc.flip_test, s);
  detail::read_if(j, "gt_box", rc.gt_box, s);
  detail::read_if(j, "output_dir", rc.output_dir, s);
  detail::read_if(j, "log_every", rc.log_every, s);
  rc.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  Json j;
  try {
    j = Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw ParseError("config '" + path + "': " + e.what(), e.byte);
  }
  return run_config_from_json(j);
}

}  // namespace prtr
