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

// Small configurations shared by the model-level tests.

#pragma once

#include <random>

#include "prtr/config.hpp"
#include "prtr/image.hpp"

namespace prtr::testing {

inline ModelConfig small_config(Variant v) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.ffn_dim = 16;
  c.n_person_queries = 4;
  c.n_keypoint_queries = 6;
  c.n_joints = 3;
  c.backbone_channels = {3, 4, 4, 4, 4};
  c.image_w = 32;
  c.image_h = 32;
  c.patch_w = 16;
  c.patch_h = 32;
  c.crop_w = 3;
  c.crop_h = 4;
  c.variant = v;
  return c;
}

/// Tiny run on synthetic stick figures (5 joints).
inline RunConfig small_run(Variant v, std::uint64_t seed) {
  RunConfig rc;
  rc.use_synthetic = true;
  rc.synthetic.n_images = 4;
  rc.synthetic.seed = 3;
  rc.model = small_config(v);
  rc.model.n_joints = 5;
  rc.model.n_keypoint_queries = 7;
  rc.steps = 2;
  rc.batch_size = 2;
  rc.seed = seed;
  rc.person_cap = 2;
  return rc;
}

inline Image random_image(std::mt19937_64& rng, int w, int h) {
  Image img(w, h);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

}  // namespace prtr::testing
