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
// Command-line front end: train, eval, infer, visualize, synth.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prtr/checkpoint.hpp"
#include "prtr/report.hpp"
#include "prtr/train.hpp"
#include "prtr/visualize.hpp"

namespace fs = std::filesystem;
using namespace prtr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
};

// Writes to a file when a path is given, else to stdout.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
      file_.open(path);
      if (!file_) throw std::runtime_error("cannot write '" + path + "'");
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

ModelConfig config_to_compare(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  Json j;
  try {
    j = Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw ParseError("config '" + path + "': " + e.what(), e.byte);
  }
  if (j.contains("model") || j.contains("train_data") || j.contains("synthetic")) return run_config_from_json(j).model;
  return model_config_from_json(j);
}

template <typename T>
int train(const std::string& config_path, std::optional<int> steps, const std::string& out_dir, bool quiet,
          RunConfig rc) {
  (void)config_path;
  if (steps) rc.steps = *steps;
  if (!out_dir.empty()) rc.output_dir = out_dir;
  rc.validate();
  Dataset ds = training_dataset(rc);
  if (!ds.skipped.empty()) std::cerr << "warning: " << ds.skipped.size() << " images missing, skipped\n";
  Trainer<T> trainer(rc, std::move(ds));
  const TrainResult res = run_training(trainer, [&](const StepReport& r) {
    if (!quiet && (r.step % rc.log_every == 0 || r.step == rc.steps)) {
      std::fprintf(stderr, "step %d/%d loss %.5f (person %.4f keypoint %.4f)\n", r.step, rc.steps, r.loss,
                   r.person.total, r.keypoint.total);
    }
  });
  std::cout << Json{{"schema", "prtr.train_summary"},
                    {"version", kReportSchemaVersion},
                    {"steps", res.steps},
                    {"final_loss", res.final_loss},
                    {"best_loss", res.best_loss},
                    {"seconds", res.seconds},
                    {"output_dir", rc.output_dir}}
                   .dump()
            << "\n";
  return kExitOk;
}

int cmd_train(const Globals& g, const std::string& config_path, std::optional<int> steps, const std::string& out_dir,
              bool quiet) {
  RunConfig rc = load_run_config(config_path);
  if (g.seed) rc.seed = *g.seed;
  if (rc.precision == Precision::f64) return train<double>(config_path, steps, out_dir, quiet, rc);
  return train<float>(config_path, steps, out_dir, quiet, rc);
}

struct EvalArgs {
  std::string ckpt, data, config, out;
  bool flip = false, gt_box = false, include_bg = false, sweep = false;
  double alpha = 0.2, threshold = 0.5;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ck = read_checkpoint(a.ckpt);
  if (!a.config.empty()) {
    const auto diff = config_diff(config_to_compare(a.config), ck.config);
    if (!diff.empty()) {
      std::string names;
      for (const auto& d : diff) names += (names.empty() ? "" : ", ") + d;
      throw ConfigError("config does not match checkpoint; differing fields: " + names);
    }
  }
  const auto model = model_from_checkpoint<float>(ck);
  Dataset ds = load_dataset(a.data);
  load_images(ds);
  if (ds.catalog.size() != static_cast<std::size_t>(ck.config.n_joints)) {
    throw ConfigError("dataset has " + std::to_string(ds.catalog.size()) + " joints, checkpoint expects " +
                      std::to_string(ck.config.n_joints));
  }
  Output out(a.out);
  out.stream() << Json{{"schema", "prtr.eval"},
                       {"version", kReportSchemaVersion},
                       {"checkpoint", a.ckpt},
                       {"data", a.data},
                       {"n_images", ds.samples.size()},
                       {"n_instances", ds.n_instances()},
                       {"skipped_images", ds.skipped}}
                      .dump()
               << "\n";
  if (ds.n_instances() == 0) {
    out.stream() << Json{{"no_instances", true}}.dump() << "\n";
    return kExitOk;
  }
  const auto flags = a.sweep ? table5_sweep() : std::vector<EvalFlags>{{a.gt_box, a.include_bg, a.flip}};
  for (const auto& f : flags) {
    const EvalRow row = evaluate(model, ds, f, a.alpha, a.threshold, worker_count());
    out.stream() << to_json(row).dump() << "\n";
    if (!a.out.empty()) {
      std::printf("gt_box=%d bg_logit=%d flip=%d  AP %.3f  AP50 %.3f  AR %.3f  PCK@%g %.3f\n", f.gt_box,
                  f.include_bg_logit, f.flip, row.ap.ap, row.ap.ap50, row.ap.ar, a.alpha, row.pck.fraction());
    }
  }
  return kExitOk;
}

int cmd_infer(const std::string& ckpt, const std::vector<std::string>& images, const std::string& overlay_dir,
              const std::string& out_path, bool flip, double threshold) {
  const auto model = load_model<float>(ckpt);
  const ModelConfig& cfg = model.config();
  const JointCatalog catalog = JointCatalog::for_joints(static_cast<std::size_t>(cfg.n_joints));
  Output out(out_path);
  out.stream() << Json{{"schema", "prtr.poses"}, {"version", kReportSchemaVersion}, {"joints", catalog.names}}.dump()
               << "\n";
  if (!overlay_dir.empty()) fs::create_directories(overlay_dir);
  int failures = 0;
  for (const auto& path : images) {
    try {
      const Image img = read_image(path);
      Sample s;
      s.width = img.width;
      s.height = img.height;
      s.image = img;
      const Sample fitted = resized(s, cfg.image_w, cfg.image_h);
      InferenceOptions opt;
      opt.person_threshold = threshold;
      opt.exclude_background = cfg.exclude_background_at_readout;
      opt.flip_test = flip;
      std::vector<PoseInstance> poses;
      for (const auto& p : predict(model, fitted.image, opt, catalog.swap)) {
        poses.push_back(rescale_instance(p, static_cast<double>(img.width) / cfg.image_w,
                                         static_cast<double>(img.height) / cfg.image_h));
      }
      Json list = Json::array();
      for (const auto& p : poses) list.push_back(to_json(p));
      out.stream() << Json{{"image", path}, {"width", img.width}, {"height", img.height}, {"instances", list}}.dump()
                   << "\n";
      if (!overlay_dir.empty()) {
        write_ppm((fs::path(overlay_dir) / (fs::path(path).stem().string() + "_overlay.ppm")).string(),
                  render_overlay(img, poses));
      }
    } catch (const std::exception& e) {
      ++failures;
      out.stream() << Json{{"image", path}, {"error", e.what()}}.dump() << "\n";
      std::cerr << "error: " << path << ": " << e.what() << "\n";
    }
  }
  return failures == static_cast<int>(images.size()) && !images.empty() ? kExitRuntime : kExitOk;
}

struct VisArgs {
  std::string ckpt, image, out, data, stack = "max";
  std::size_t person = 0;
  double sigma = -1, threshold = 0.5;
  bool gt_box = false;
};

int cmd_visualize(const VisArgs& a) {
  const auto model = load_model<float>(a.ckpt);
  const ModelConfig& cfg = model.config();
  const JointCatalog catalog = JointCatalog::for_joints(static_cast<std::size_t>(cfg.n_joints));
  HeatmapOptions hm;
  hm.sigma = a.sigma;
  if (a.stack == "sum") hm.mode = StackMode::sum;
  else if (a.stack != "max") throw ConfigError("--stack must be max or sum");
  fs::create_directories(a.out);

  if (!a.image.empty()) {
    Sample s;
    s.image = read_image(a.image);
    s.width = s.image.width;
    s.height = s.image.height;
    const Sample fitted = resized(s, cfg.image_w, cfg.image_h);
    InferenceOptions opt;
    opt.person_threshold = a.threshold;
    opt.exclude_background = cfg.exclude_background_at_readout;
    const PersonVisualization v = visualize_person(model, fitted.image, a.person, opt);
    std::ofstream layers(fs::path(a.out) / "layers.jsonl");
    layers << Json{{"schema", "prtr.layers"},
                   {"version", kReportSchemaVersion},
                   {"image", a.image},
                   {"frame", {cfg.image_w, cfg.image_h}},
                   {"person", {{"box", {v.person.box.x_left, v.person.box.x_right, v.person.box.y_top,
                                        v.person.box.y_down}},
                               {"score", v.person.score}}},
                   {"joints", catalog.names},
                   {"n_snapshots", v.layers.size()}}
                  .dump()
           << "\n";
    for (const auto& snap : v.layers) {
      Json qs = Json::array();
      for (const auto& q : snap.queries) qs.push_back({{"probs", q.probs}, {"xy", {q.image_xy.x, q.image_xy.y}}});
      layers << Json{{"layer", snap.layer}, {"queries", qs}}.dump() << "\n";
      for (std::size_t j = 0; j < catalog.size(); ++j) {
        auto map = probability_map(snap, j, cfg.image_w, cfg.image_h, hm);
        if (hm.mode == StackMode::sum) {
          const double mx = *std::max_element(map.begin(), map.end());
          if (mx > 0) for (double& m : map) m /= mx;
        }
        write_pgm((fs::path(a.out) / ("heatmap_l" + std::to_string(snap.layer) + "_" + catalog.names[j] + ".pgm"))
                      .string(),
                  map, cfg.image_w, cfg.image_h);
      }
    }
    std::ofstream traj(fs::path(a.out) / "trajectory.jsonl");
    traj << Json{{"schema", "prtr.trajectory"}, {"version", kReportSchemaVersion}}.dump() << "\n";
    Image overlay = fitted.image;
    for (std::size_t j = 0; j < catalog.size(); ++j) {
      Json path = Json::array();
      for (std::size_t l = 0; l < v.trajectory[j].size(); ++l) {
        const Point p = v.trajectory[j][l];
        path.push_back({p.x, p.y});
        if (l > 0) draw_line(overlay, v.trajectory[j][l - 1], p, 0.3, joint_color(j));
      }
      draw_marker(overlay, v.trajectory[j].back(), 1, joint_color(j));
      traj << Json{{"joint", catalog.names[j]}, {"query", v.selected[j]}, {"path", path}}.dump() << "\n";
    }
    write_ppm((fs::path(a.out) / "trajectory.ppm").string(), overlay);
    std::cout << "wrote " << v.layers.size() << " layer snapshots to " << a.out << "\n";
  }

  if (!a.data.empty()) {
    // Refinement across layers on every ground-truth person (GT boxes).
    Dataset ds = load_dataset(a.data);
    load_images(ds);
    std::ofstream rep(fs::path(a.out) / "refinement.jsonl");
    rep << Json{{"schema", "prtr.refinement"}, {"version", kReportSchemaVersion}, {"data", a.data}}.dump() << "\n";
    std::size_t monotone = 0, total = 0;
    for (const auto& raw : ds.samples) {
      const Sample s = resized(raw, cfg.image_w, cfg.image_h);
      InferenceOptions opt;
      opt.gt_boxes = boxes_of(s.instances);
      opt.exclude_background = cfg.exclude_background_at_readout;
      for (std::size_t i = 0; i < s.instances.size(); ++i) {
        const auto v = visualize_person(model, s.image, i, opt);
        const auto d = layer_distances(v, s.instances[i]);
        const bool mono = monotone_refinement(d);
        monotone += mono;
        ++total;
        rep << Json{{"image", s.id}, {"person", i}, {"mean_distance", d}, {"monotone", mono}}.dump() << "\n";
      }
    }
    const double frac = total ? static_cast<double>(monotone) / static_cast<double>(total) : 0.0;
    rep << Json{{"summary", {{"instances", total}, {"monotone_fraction", frac}}}}.dump() << "\n";
    std::cout << "monotone refinement in " << monotone << "/" << total << " instances (" << frac << ")\n";
  }
  return kExitOk;
}

int cmd_synth(const Globals& g, const std::string& out, int n, int size) {
  const Dataset ds = synth_stickfigures(n, g.seed.value_or(1), {size, size});
  write_corpus(out, ds);
  std::cout << "wrote " << ds.samples.size() << " images, " << ds.n_instances() << " persons to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascade-transformer pose recognition: train, evaluate, infer and inspect."};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config seed)");

  auto* train = app.add_subcommand("train", "Train a model from a run config");
  std::string config;
  int steps = -1;
  std::string train_out;
  bool quiet = false;
  train->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--steps", steps, "Override the number of steps");
  train->add_option("--out", train_out, "Override the output directory");
  train->add_flag("--quiet", quiet, "No per-step progress");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  EvalArgs ea;
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ea.data, "Corpus directory or COCO annotation file")->required()->check(CLI::ExistingPath);
  eval->add_flag("--flip", ea.flip, "Flip-test averaging");
  eval->add_flag("--gt-box", ea.gt_box, "Use ground-truth person boxes");
  eval->add_flag("--include-bg-logit", ea.include_bg, "Keep the background logit in readout normalization");
  eval->add_flag("--sweep-table5", ea.sweep, "Evaluate all 8 combinations of the three flags");
  eval->add_option("--config", ea.config, "Config that must match the checkpoint");
  eval->add_option("--out", ea.out, "Report file (JSONL); default stdout");
  eval->add_option("--alpha", ea.alpha, "PCK threshold as a fraction of the box diagonal");
  eval->add_option("--threshold", ea.threshold, "Person probability threshold");

  auto* infer = app.add_subcommand("infer", "Predict poses for images");
  std::string infer_ckpt, overlay, infer_out;
  std::vector<std::string> images;
  bool infer_flip = false;
  double infer_threshold = 0.5;
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("images", images, "Image files (PPM/PGM, PNG, JPEG)")->required();
  infer->add_option("--overlay", overlay, "Directory for rendered overlays");
  infer->add_option("--out", infer_out, "Pose file (JSONL); default stdout");
  infer->add_flag("--flip", infer_flip, "Flip-test averaging");
  infer->add_option("--threshold", infer_threshold, "Person probability threshold");

  auto* vis = app.add_subcommand("visualize", "Per-decoder-layer artifacts for one person");
  VisArgs va;
  vis->add_option("--ckpt", va.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  vis->add_option("--image", va.image, "Image file");
  vis->add_option("--person", va.person, "Person index in detection order");
  vis->add_option("--out", va.out, "Output directory")->required();
  vis->add_option("--sigma", va.sigma, "Gaussian sigma in pixels (default 2 px per 64 px)");
  vis->add_option("--stack", va.stack, "Stacking across queries: max or sum");
  vis->add_option("--threshold", va.threshold, "Person probability threshold");
  vis->add_option("--data", va.data, "Also report per-layer refinement over a dataset (GT boxes)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic stick-figure corpus");
  std::string synth_out;
  int synth_n = 64, synth_size = 64;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--n", synth_n, "Number of images")->check(CLI::NonNegativeNumber);
  synth->add_option("--size", synth_size, "Image width and height")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (*seed_opt) g.seed = seed;
  try {
    if (*train) return cmd_train(g, config, steps >= 0 ? std::optional<int>(steps) : std::nullopt, train_out, quiet);
    if (*eval) return cmd_eval(ea);
    if (*infer) return cmd_infer(infer_ckpt, images, overlay, infer_out, infer_flip, infer_threshold);
    if (*vis) {
      if (va.image.empty() && va.data.empty()) {
        std::cerr << "visualize: need --image and/or --data\n";
        return kExitUsage;
      }
      return cmd_visualize(va);
    }
    if (*synth) return cmd_synth(g, synth_out, synth_n, synth_size);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
