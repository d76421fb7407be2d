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

#include <gtest/gtest.h>

#include <filesystem>

#include "prtr/checkpoint.hpp"
#include "support/fixtures.hpp"

namespace prtr {
namespace {

using testing::small_config;

std::string tmp_path(const std::string& name) {
  std::filesystem::create_directories(PRTR_TEST_TMP);
  return (std::filesystem::path(PRTR_TEST_TMP) / name).string();
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (Variant v : {Variant::end_to_end, Variant::two_stage}) {
    const PrtrModel<float> model(small_config(v), 17);
    const std::string path = tmp_path("roundtrip.ckpt");
    write_checkpoint(path, snapshot(model));
    const auto back = load_model<float>(path);
    const auto a = model.parameters(), b = back.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].name, b[i].name);
      const auto x = a[i].tensor.data(), y = b[i].tensor.data();
      ASSERT_EQ(x.size(), y.size());
      for (std::size_t k = 0; k < x.size(); ++k) ASSERT_EQ(x[k], y[k]) << a[i].name;
    }
    EXPECT_TRUE(config_diff(model.config(), back.config()).empty());
    EXPECT_EQ(encode_checkpoint(snapshot(model)), encode_checkpoint(snapshot(back)));
  }
}

TEST(Checkpoint, PredictionsSurviveRoundTrip) {
  const PrtrModel<float> model(small_config(Variant::end_to_end), 5);
  const auto back = model_from_checkpoint<float>(decode_checkpoint(encode_checkpoint(snapshot(model))));
  std::mt19937_64 rng(1);
  const Image img = testing::random_image(rng, 32, 32);
  InferenceOptions opt;
  opt.gt_boxes = std::vector<BoundingBox>{{0.2, 0.6, 0.1, 0.9}};
  const auto p = predict_single(model, img, opt), q = predict_single(back, img, opt);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(p[0].keypoints[j].x, q[0].keypoints[j].x);
}

TEST(Checkpoint, ConfigMismatchIsConfigError) {
  PrtrModel<float> model(small_config(Variant::end_to_end), 1);
  auto cfg = small_config(Variant::end_to_end);
  cfg.ffn_dim = 8;
  const PrtrModel<float> other(cfg, 1);
  try {
    restore(model, snapshot(other));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("ffn_dim"), std::string::npos);
  }
}

TEST(Checkpoint, NameMismatchIsConfigError) {
  PrtrModel<float> model(small_config(Variant::end_to_end), 1);
  auto ck = snapshot(model);
  ck.tensors[0].name = "not.a.parameter";
  EXPECT_THROW(restore(model, ck), ConfigError);
  ck = snapshot(model);
  ck.tensors.pop_back();
  EXPECT_THROW(restore(model, ck), ConfigError);
  ck = snapshot(model);
  ck.tensors[1].shape.push_back(1);
  ck.tensors[1].data.resize(numel(ck.tensors[1].shape));
  EXPECT_NO_THROW((void)decode_checkpoint(encode_checkpoint(ck)));
  EXPECT_THROW(restore(model, ck), DimensionError);
}

TEST(Checkpoint, CorruptBytesAreParseErrors) {
  const PrtrModel<float> model(small_config(Variant::end_to_end), 1);
  auto bytes = encode_checkpoint(snapshot(model));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW((void)decode_checkpoint(bad), ParseError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW((void)decode_checkpoint(truncated), ParseError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW((void)decode_checkpoint(version), ParseError);
}

TEST(Config, JsonRoundTripAndStrictKeys) {
  for (const auto& c : {ModelConfig::desk(), ModelConfig::paper(), small_config(Variant::two_stage)}) {
    EXPECT_TRUE(config_diff(c, model_config_from_json(to_json(c))).empty());
  }
  Json j = to_json(ModelConfig::desk());
  j["d_modle"] = 32;
  EXPECT_THROW((void)model_config_from_json(j), ConfigError);
  EXPECT_THROW((void)run_config_from_json(Json{{"train_data", "x"}, {"stepz", 3}}), ConfigError);
  const auto rc = run_config_from_json(Json{{"train_data", "x"}, {"steps", 3}, {"model", {{"profile", "paper"}}}});
  EXPECT_EQ(rc.steps, 3);
  EXPECT_EQ(rc.model.n_joints, 17);
}

TEST(Config, ValidationRejectsBadValues) {
  auto c = ModelConfig::desk();
  c.n_heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::desk();
  c.class_specific_queries = true;
  c.n_keypoint_queries = 12;
  EXPECT_THROW(c.validate(), ConfigError);
  c.n_keypoint_queries = c.n_joints;
  EXPECT_NO_THROW(c.validate());
  RunConfig rc;
  EXPECT_THROW(rc.validate(), ConfigError);  // no data source
}

TEST(Config, ShippedConfigsLoad) {
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(PRTR_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    SCOPED_TRACE(e.path().string());
    const RunConfig rc = load_run_config(e.path().string());
    EXPECT_NO_THROW(rc.validate());
    EXPECT_EQ(rc.steps, 3000);
    EXPECT_EQ(rc.optimizer.milestones, (std::vector<int>{2000, 2600}));
    ++n;
  }
  EXPECT_EQ(n, 2);
}

}  // namespace
}  // namespace prtr
