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

// Pose datasets: COCO keypoint ingestion, synthetic stick-figure corpora and
// keypoint-patch augmentation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "prtr/config.hpp"
#include "prtr/error.hpp"
#include "prtr/geometry.hpp"
#include "prtr/image.hpp"

namespace prtr {

/// Slot j of a skeleton always holds joint class j. Invisible joints keep the
/// sentinel coordinates (-1, -1) and are ignored by losses and metrics.
struct Keypoint {
  double x = -1;
  double y = -1;
  bool visible = false;
  double score = 0;
};

struct PoseInstance {
  BoundingBox box;  // normalized
  std::vector<Keypoint> keypoints;
  double score = 1;
  double area = 0;  // pixels^2, object scale for OKS

  [[nodiscard]] std::size_t n_visible() const {
    return static_cast<std::size_t>(std::count_if(keypoints.begin(), keypoints.end(),
                                                  [](const Keypoint& k) { return k.visible; }));
  }
};

struct JointCatalog {
  std::vector<std::string> names;
  std::vector<std::size_t> swap;  // left/right permutation

  [[nodiscard]] std::size_t size() const { return names.size(); }

  void validate() const {
    if (swap.size() != names.size()) throw ConfigError("joint catalog: swap permutation has wrong length");
    for (std::size_t j = 0; j < swap.size(); ++j) {
      if (swap[j] >= swap.size() || swap[swap[j]] != j) {
        throw ConfigError("joint catalog: swap permutation is not an involution at joint " + std::to_string(j));
      }
    }
  }

  static JointCatalog stick_figure() {
    return {{"head", "left_hand", "right_hand", "left_foot", "right_foot"}, {0, 2, 1, 4, 3}};
  }

  static JointCatalog coco() {
    return from_names({"nose", "left_eye", "right_eye", "left_ear", "right_ear", "left_shoulder", "right_shoulder",
                       "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hip", "right_hip",
                       "left_knee", "right_knee", "left_ankle", "right_ankle"});
  }

  /// Catalog implied by a joint count alone (no left/right pairs for
  /// unknown layouts).
  static JointCatalog for_joints(std::size_t n) {
    if (n == 5) return stick_figure();
    if (n == 17) return coco();
    std::vector<std::string> names;
    for (std::size_t j = 0; j < n; ++j) names.push_back("joint_" + std::to_string(j));
    return from_names(std::move(names));
  }

  /// Pairs every "left_X" with "right_X"; other joints map to themselves.
  static JointCatalog from_names(std::vector<std::string> names) {
    JointCatalog c{std::move(names), {}};
    c.swap.resize(c.names.size());
    for (std::size_t j = 0; j < c.names.size(); ++j) {
      c.swap[j] = j;
      const std::string& n = c.names[j];
      std::string mate;
      if (n.rfind("left_", 0) == 0) mate = "right_" + n.substr(5);
      if (n.rfind("right_", 0) == 0) mate = "left_" + n.substr(6);
      if (mate.empty()) continue;
      const auto it = std::find(c.names.begin(), c.names.end(), mate);
      if (it != c.names.end()) c.swap[j] = static_cast<std::size_t>(it - c.names.begin());
    }
    c.validate();
    return c;
  }
};

struct Sample {
  std::int64_t id = 0;
  std::string image_path;  // empty for in-memory images
  int width = 0;
  int height = 0;
  std::vector<PoseInstance> instances;
  Image image;  // empty until loaded
};

struct Dataset {
  JointCatalog catalog;
  std::vector<Sample> samples;
  std::vector<std::string> skipped;  // images that could not be found

  [[nodiscard]] std::size_t n_instances() const {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.instances.size();
    return n;
  }

  void validate() const {
    catalog.validate();
    for (const auto& s : samples) {
      for (const auto& inst : s.instances) {
        if (inst.keypoints.size() != catalog.size()) {
          throw ContractError("dataset: instance in image " + std::to_string(s.id) + " has " +
                              std::to_string(inst.keypoints.size()) + " keypoints, catalog has " +
                              std::to_string(catalog.size()));
        }
      }
    }
  }
};

/// splitmix64 of (seed, index); independent streams per sample.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// COCO keypoint files

struct CocoLoadOptions {
  bool labeled_invisible_as_visible = true;  // v = 1
  bool require_images = true;                // skip entries whose file is missing
};

namespace detail {

inline const Json& member(const Json& j, const char* key, const std::string& path) {
  if (!j.is_object()) throw ParseError("expected an object", path);
  const auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("missing key '") + key + "'", path);
  return *it;
}

inline double number(const Json& j, const std::string& path) {
  if (!j.is_number()) throw ParseError("expected a number", path);
  return j.get<double>();
}

inline std::int64_t integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ParseError("expected an integer", path);
  return j.get<std::int64_t>();
}

inline const Json& array(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ParseError("expected an array", path);
  return j;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'", std::size_t{0});
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace detail

/// Parses a COCO keypoint annotation document. Image files are resolved
/// against `image_root`.
inline Dataset parse_coco_keypoints(const std::string& text, const std::string& image_root,
                                    const CocoLoadOptions& opt = {}) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
  }
  Dataset ds;
  const Json& cats = detail::array(detail::member(doc, "categories", "$"), "$.categories");
  std::vector<std::string> names;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string path = "$.categories[" + std::to_string(i) + "]";
    const Json& kp = detail::array(detail::member(cats[i], "keypoints", path), path + ".keypoints");
    std::vector<std::string> n;
    for (const auto& v : kp) {
      if (!v.is_string()) throw ParseError("keypoint names must be strings", path + ".keypoints");
      n.push_back(v.get<std::string>());
    }
    if (i == 0) names = n;
    else if (n != names) throw ParseError("categories disagree on keypoint names", path + ".keypoints");
  }
  if (names.empty()) throw ParseError("no keypoint names in categories", "$.categories");
  ds.catalog = JointCatalog::from_names(names);
  const std::size_t J = names.size();

  const Json& images = detail::array(detail::member(doc, "images", "$"), "$.images");
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string path = "$.images[" + std::to_string(i) + "]";
    Sample s;
    s.id = detail::integer(detail::member(images[i], "id", path), path + ".id");
    const Json& fn = detail::member(images[i], "file_name", path);
    if (!fn.is_string()) throw ParseError("expected a string", path + ".file_name");
    s.image_path = (std::filesystem::path(image_root) / fn.get<std::string>()).string();
    s.width = static_cast<int>(detail::integer(detail::member(images[i], "width", path), path + ".width"));
    s.height = static_cast<int>(detail::integer(detail::member(images[i], "height", path), path + ".height"));
    if (s.width <= 0 || s.height <= 0) throw ParseError("image extents must be positive", path);
    ids.push_back(s.id);
    ds.samples.push_back(std::move(s));
  }

  const Json& anns = detail::array(detail::member(doc, "annotations", "$"), "$.annotations");
  for (std::size_t a = 0; a < anns.size(); ++a) {
    const std::string path = "$.annotations[" + std::to_string(a) + "]";
    const Json& ann = anns[a];
    const std::int64_t image_id = detail::integer(detail::member(ann, "image_id", path), path + ".image_id");
    const auto it = std::find(ids.begin(), ids.end(), image_id);
    if (it == ids.end()) throw ParseError("annotation refers to unknown image " + std::to_string(image_id), path);
    Sample& s = ds.samples[static_cast<std::size_t>(it - ids.begin())];
    if (ann.contains("iscrowd") && ann.at("iscrowd").is_number() && ann.at("iscrowd").get<double>() != 0) continue;

    const Json& bbox = detail::array(detail::member(ann, "bbox", path), path + ".bbox");
    if (bbox.size() != 4) throw ParseError("bbox needs 4 numbers", path + ".bbox");
    double b[4];
    for (std::size_t k = 0; k < 4; ++k) b[k] = detail::number(bbox[k], path + ".bbox[" + std::to_string(k) + "]");
    const Json& kps = detail::array(detail::member(ann, "keypoints", path), path + ".keypoints");
    if (kps.size() != 3 * J) {
      throw ParseError("expected " + std::to_string(3 * J) + " keypoint values, got " + std::to_string(kps.size()),
                       path + ".keypoints");
    }
    PoseInstance inst;
    inst.box = {b[0] / s.width, (b[0] + b[2]) / s.width, b[1] / s.height, (b[1] + b[3]) / s.height};
    inst.area = ann.contains("area") ? detail::number(ann.at("area"), path + ".area") : b[2] * b[3];
    inst.keypoints.resize(J);
    for (std::size_t j = 0; j < J; ++j) {
      const std::string kp = path + ".keypoints[" + std::to_string(3 * j);
      const double x = detail::number(kps[3 * j], kp + "]");
      const double y = detail::number(kps[3 * j + 1], kp + "+1]");
      const double v = detail::number(kps[3 * j + 2], kp + "+2]");
      if (v != 0 && v != 1 && v != 2) throw ParseError("visibility must be 0, 1 or 2", kp + "+2]");
      const bool visible = v == 2 || (v == 1 && opt.labeled_invisible_as_visible);
      if (visible) inst.keypoints[j] = {x, y, true, 1.0};
    }
    if (inst.n_visible() == 0) continue;
    if (!inst.box.valid()) throw ParseError("degenerate bbox", path + ".bbox");
    s.instances.push_back(std::move(inst));
  }

  if (opt.require_images) {
    std::vector<Sample> kept;
    for (auto& s : ds.samples) {
      if (std::filesystem::exists(s.image_path)) kept.push_back(std::move(s));
      else ds.skipped.push_back(s.image_path);
    }
    ds.samples = std::move(kept);
  }
  return ds;
}

inline Dataset load_coco_keypoints(const std::string& annotation_path, const std::string& image_root,
                                   const CocoLoadOptions& opt = {}) {
  return parse_coco_keypoints(detail::read_text(annotation_path), image_root, opt);
}

/// A corpus directory (annotations.json + images/) or an annotation file whose
/// image paths are relative to its own directory.
inline Dataset load_dataset(const std::string& path, const CocoLoadOptions& opt = {}) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) return load_coco_keypoints((fs::path(path) / "annotations.json").string(), path, opt);
  return load_coco_keypoints(path, fs::path(path).parent_path().string(), opt);
}

inline void load_images(Dataset& ds) {
  for (auto& s : ds.samples) {
    if (!s.image.empty()) continue;
    s.image = read_image(s.image_path);
    if (s.image.width != s.width || s.image.height != s.height) {
      throw ImageError("image '" + s.image_path + "' is " + std::to_string(s.image.width) + "x" +
                       std::to_string(s.image.height) + ", annotation says " + std::to_string(s.width) + "x" +
                       std::to_string(s.height));
    }
  }
}

/// Rescales image and keypoints to `w` x `h`; boxes are normalized and stay put.
inline Sample resized(const Sample& s, int w, int h) {
  if (s.width == w && s.height == h) return s;
  Sample out = s;
  const double sx = static_cast<double>(w) / s.width, sy = static_cast<double>(h) / s.height;
  out.width = w;
  out.height = h;
  if (!s.image.empty()) out.image = resample_affine(s.image, Affine2D::scaling(1 / sx, 1 / sy), w, h);
  for (auto& inst : out.instances) {
    inst.area *= sx * sy;
    for (auto& k : inst.keypoints) {
      if (!k.visible) continue;
      k.x *= sx;
      k.y *= sy;
    }
  }
  return out;
}

inline Json to_coco_json(const Dataset& ds) {
  Json images = Json::array(), anns = Json::array();
  std::int64_t ann_id = 1;
  for (const auto& s : ds.samples) {
    images.push_back({{"id", s.id},
                      {"file_name", "images/" + std::filesystem::path(s.image_path).filename().string()},
                      {"width", s.width},
                      {"height", s.height}});
    for (const auto& inst : s.instances) {
      Json kps = Json::array();
      for (const auto& k : inst.keypoints) {
        kps.push_back(k.visible ? k.x : 0.0);
        kps.push_back(k.visible ? k.y : 0.0);
        kps.push_back(k.visible ? 2 : 0);
      }
      const double x = inst.box.x_left * s.width, y = inst.box.y_top * s.height;
      anns.push_back({{"id", ann_id++},
                      {"image_id", s.id},
                      {"category_id", 1},
                      {"iscrowd", 0},
                      {"bbox", {x, y, inst.box.width() * s.width, inst.box.height() * s.height}},
                      {"area", inst.area},
                      {"num_keypoints", inst.n_visible()},
                      {"keypoints", kps}});
    }
  }
  return {{"images", images},
          {"annotations", anns},
          {"categories", Json::array({{{"id", 1}, {"name", "person"}, {"keypoints", ds.catalog.names}}})}};
}

/// Writes annotations.json and images/<id>.ppm under `dir`.
inline void write_corpus(const std::string& dir, Dataset ds) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  for (auto& s : ds.samples) {
    char name[32];
    std::snprintf(name, sizeof name, "%06lld.ppm", static_cast<long long>(s.id));
    const fs::path p = fs::path(dir) / "images" / name;
    write_ppm(p.string(), s.image);
    s.image_path = p.string();
  }
  std::ofstream out(fs::path(dir) / "annotations.json");
  if (!out) throw ImageError("cannot write annotations under '" + dir + "'");
  out << to_coco_json(ds).dump(1) << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic stick figures

struct StickFigureOptions {
  int width = 64;
  int height = 64;
  int min_people = 1;
  int max_people = 3;
  double min_height = 20;  // figure height in pixels
  double max_height = 32;
  double line_half_width = 0.9;
};

namespace detail {

struct Figure {
  Point head, neck, shoulder, hip, hands[2], feet[2];
  double head_radius = 0;
  BoundingBox pixel_box;  // in pixels
};

inline Figure pose_figure(std::mt19937_64& rng, double height, double half_width) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto between = [&](double a, double b) { return a + (b - a) * u(rng); };
  const double deg = std::numbers::pi / 180.0;
  Figure f;
  f.head_radius = 0.11 * height;
  const double torso = 0.36 * height, arm = 0.30 * height, leg = 0.42 * height;
  f.head = {0, f.head_radius};
  f.neck = {0, 2 * f.head_radius};
  f.hip = {0, f.neck.y + torso};
  f.shoulder = {0, f.neck.y + 0.2 * torso};
  // The figure faces the viewer: its left side is on the image right.
  const double la = between(-70, 50) * deg, ra = between(-70, 50) * deg;
  f.hands[0] = {f.shoulder.x + arm * std::cos(la), f.shoulder.y + arm * std::sin(la)};
  f.hands[1] = {f.shoulder.x - arm * std::cos(ra), f.shoulder.y + arm * std::sin(ra)};
  const double lf = between(8, 35) * deg, rf = between(8, 35) * deg;
  f.feet[0] = {f.hip.x + leg * std::sin(lf), f.hip.y + leg * std::cos(lf)};
  f.feet[1] = {f.hip.x - leg * std::sin(rf), f.hip.y + leg * std::cos(rf)};
  const double pad = half_width + 0.5;
  BoundingBox b{-f.head_radius - pad, f.head_radius + pad, -pad, f.head_radius * 2 + pad};
  for (const Point& p : {f.hands[0], f.hands[1], f.feet[0], f.feet[1], f.hip}) {
    b.x_left = std::min(b.x_left, p.x - pad);
    b.x_right = std::max(b.x_right, p.x + pad);
    b.y_top = std::min(b.y_top, p.y - pad);
    b.y_down = std::max(b.y_down, p.y + pad);
  }
  f.pixel_box = b;
  return f;
}

inline Figure translated(Figure f, double dx, double dy) {
  auto t = [&](Point& p) {
    p.x += dx;
    p.y += dy;
  };
  for (Point* p : {&f.head, &f.neck, &f.shoulder, &f.hip, &f.hands[0], &f.hands[1], &f.feet[0], &f.feet[1]}) t(*p);
  f.pixel_box = {f.pixel_box.x_left + dx, f.pixel_box.x_right + dx, f.pixel_box.y_top + dy, f.pixel_box.y_down + dy};
  return f;
}

inline bool overlaps(const BoundingBox& a, const BoundingBox& b, double gap) {
  return a.x_left < b.x_right + gap && b.x_left < a.x_right + gap && a.y_top < b.y_down + gap &&
         b.y_top < a.y_down + gap;
}

}  // namespace detail

/// Renders `n_images` images, each with 1-3 non-overlapping stick figures on a
/// plain background. Deterministic in `seed`.
inline Dataset synth_stickfigures(int n_images, std::uint64_t seed, const StickFigureOptions& opt = {}) {
  Dataset ds;
  ds.catalog = JointCatalog::stick_figure();
  for (int n = 0; n < n_images; ++n) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(n)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Sample s;
    s.id = n;
    s.width = opt.width;
    s.height = opt.height;
    const float bg = static_cast<float>(0.05 + 0.25 * u(rng));
    s.image = Image(opt.width, opt.height, {bg, static_cast<float>(0.05 + 0.25 * u(rng)), bg});
    const int want = opt.min_people + static_cast<int>(u(rng) * (opt.max_people - opt.min_people + 1) * 0.999999);
    std::vector<detail::Figure> figures;
    for (int attempt = 0; attempt < 200 && static_cast<int>(figures.size()) < want; ++attempt) {
      auto f = detail::pose_figure(rng, opt.min_height + (opt.max_height - opt.min_height) * u(rng),
                                   opt.line_half_width);
      const double fw = f.pixel_box.width(), fh = f.pixel_box.height();
      if (fw > opt.width - 2 || fh > opt.height - 2) continue;
      const double x0 = 1 + u(rng) * (opt.width - 2 - fw), y0 = 1 + u(rng) * (opt.height - 2 - fh);
      f = detail::translated(f, x0 - f.pixel_box.x_left, y0 - f.pixel_box.y_top);
      const bool clash = std::any_of(figures.begin(), figures.end(), [&](const detail::Figure& g) {
        return detail::overlaps(f.pixel_box, g.pixel_box, 1.0);
      });
      if (!clash) figures.push_back(f);
    }
    for (const auto& f : figures) {
      const Color c{static_cast<float>(0.6 + 0.4 * u(rng)), static_cast<float>(0.6 + 0.4 * u(rng)),
                    static_cast<float>(0.6 + 0.4 * u(rng))};
      const double hw = opt.line_half_width;
      draw_circle(s.image, f.head, f.head_radius, hw, c);
      draw_line(s.image, f.neck, f.hip, hw, c);
      for (int k = 0; k < 2; ++k) {
        draw_line(s.image, f.shoulder, f.hands[k], hw, c);
        draw_line(s.image, f.hip, f.feet[k], hw, c);
      }
      PoseInstance inst;
      const auto& b = f.pixel_box;
      inst.box = {b.x_left / opt.width, b.x_right / opt.width, b.y_top / opt.height, b.y_down / opt.height};
      inst.area = b.area();
      for (const Point& p : {f.head, f.hands[0], f.hands[1], f.feet[0], f.feet[1]}) {
        inst.keypoints.push_back({p.x, p.y, true, 1.0});
      }
      s.instances.push_back(std::move(inst));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation

/// Image patch with keypoints in its pixel frame.
struct KeypointSample {
  Image image;
  std::vector<Keypoint> keypoints;
};

struct AugmentParams {
  double rotation_deg = 0;
  double scale = 1;
  bool flip = false;
};

struct Augmented {
  KeypointSample sample;
  Affine2D transform;  // input pixel -> output pixel
};

inline AugmentParams sample_augment_params(const AugmentConfig& cfg, std::uint64_t seed) {
  if (!cfg.enabled) return {};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AugmentParams p;
  p.rotation_deg = (2 * u(rng) - 1) * cfg.max_rotation_deg;
  p.scale = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * u(rng);
  p.flip = cfg.flip && u(rng) < 0.5;
  return p;
}

/// Rotation and isotropic scale about the patch center, then an optional
/// horizontal flip with joint slots permuted by `swap`.
inline Augmented augment(const KeypointSample& in, const AugmentParams& p, std::span<const std::size_t> swap) {
  const int w = in.image.width, h = in.image.height;
  const Point center{0.5 * (w - 1), 0.5 * (h - 1)};
  Affine2D t = Affine2D::about(center, p.rotation_deg * std::numbers::pi / 180.0, p.scale);
  if (p.flip) t = Affine2D{{-1, 0, static_cast<double>(w - 1), 0, 1, 0}} * t;
  Augmented out;
  out.transform = t;
  const bool identity = p.rotation_deg == 0 && p.scale == 1 && !p.flip;
  out.sample.image = identity ? in.image : resample_affine(in.image, t.inverse(), w, h);
  out.sample.keypoints.resize(in.keypoints.size());
  for (std::size_t j = 0; j < in.keypoints.size(); ++j) {
    Keypoint k = in.keypoints[j];
    if (k.visible) {
      const Point q = t.apply({k.x, k.y});
      k.x = q.x;
      k.y = q.y;
    }
    const std::size_t dst = p.flip ? swap[j] : j;
    out.sample.keypoints[dst] = k;
  }
  return out;
}

}  // namespace prtr
