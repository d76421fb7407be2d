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

#include <cmath>
#include <random>

#include "prtr/cascade.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace prtr {
namespace {

using Td = Tensor<double>;
using testing::uniform_values;

using testing::random_image;
using testing::small_config;

TEST(MakeGrid, UnitBoxTwoPoints) {
  const auto g = make_grid<double>(BoundingBox::unit(), 2, 1);
  EXPECT_EQ(g.xs.data()[0], 0.0);
  EXPECT_EQ(g.xs.data()[1], 0.5);
  EXPECT_EQ(g.ys.data()[0], 0.0);
}

TEST(MakeGrid, UniformSpacingInsideBox) {
  const BoundingBox b{0.1, 0.8, 0.2, 0.6};
  const auto g = make_grid<double>(b, 7, 5);
  for (std::size_t j = 0; j < 5; ++j) {
    for (std::size_t i = 0; i < 7; ++i) {
      EXPECT_NEAR(g.xs.data()[j * 7 + i], 0.1 + 0.7 * static_cast<double>(i) / 7.0, 1e-12);
      EXPECT_NEAR(g.ys.data()[j * 7 + i], 0.2 + 0.4 * static_cast<double>(j) / 5.0, 1e-12);
    }
  }
}

TEST(MakeGrid, AlignCornersReachesFarEdge) {
  const auto g = make_grid<double>(BoundingBox{0.25, 0.75, 0.0, 1.0}, 3, 2, true);
  EXPECT_NEAR(g.xs.data()[0], 0.25, 1e-12);
  EXPECT_NEAR(g.xs.data()[1], 0.5, 1e-12);
  EXPECT_NEAR(g.xs.data()[2], 0.75, 1e-12);
  EXPECT_NEAR(g.ys.data()[5], 1.0, 1e-12);
}

TEST(MakeGrid, InvalidBoxIsRejected) {
  EXPECT_THROW((void)make_grid<double>(BoundingBox{0.5, 0.4, 0, 1}, 2, 2), ContractError);
  EXPECT_THROW((void)make_grid<double>(BoundingBox::unit(), 0, 2), ContractError);
}

TEST(EnlargeAndClamp, GrowsAboutCenter) {
  const auto out = enlarge_and_clamp(box_tensor<double>(BoundingBox{0.4, 0.6, 0.3, 0.5}), 0.25);
  const auto b = to_box(out);
  EXPECT_NEAR(b.width(), 0.25, 1e-12);
  EXPECT_NEAR(b.height(), 0.25, 1e-12);
  EXPECT_NEAR(b.cx(), 0.5, 1e-12);
  EXPECT_NEAR(b.cy(), 0.4, 1e-12);
}

TEST(EnlargeAndClamp, ClampsToImage) {
  const auto b = to_box(enlarge_and_clamp(box_tensor<double>(BoundingBox{0.0, 0.4, 0.7, 1.0}), 0.5));
  EXPECT_EQ(b.x_left, 0.0);
  EXPECT_NEAR(b.x_right, 0.5, 1e-12);
  EXPECT_EQ(b.y_down, 1.0);
  EXPECT_NEAR(b.y_top, 0.625, 1e-12);
}

TEST(BoxFromCxcywh, MatchesGeometry) {
  const auto t = box_from_cxcywh(Td::constant({4}, {0.5, 0.4, 0.2, 0.6}));
  const auto b = to_box(t);
  EXPECT_NEAR(b.x_left, 0.4, 1e-12);
  EXPECT_NEAR(b.x_right, 0.6, 1e-12);
  EXPECT_NEAR(b.y_top, 0.1, 1e-12);
  EXPECT_NEAR(b.y_down, 0.7, 1e-12);
}

TEST(SampleGrid, ConstantMapGivesConstantCrop) {
  const Td U = Td::full({2, 8, 8}, 3.5);
  const auto g = make_grid<double>(BoundingBox{0.1, 0.7, 0.2, 0.8}, 4, 3);
  const auto out = sample_grid(U, g);
  ASSERT_EQ(out.shape(), (std::vector<std::size_t>{2, 3, 4}));
  for (double v : out.data()) EXPECT_NEAR(v, 3.5, 1e-12);
}

TEST(SampleGrid, LinearRampIsReproduced) {
  // U(x, y) = x + 10 y on the pixel lattice; bilinear sampling is exact for it.
  std::vector<double> v(8 * 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) v[static_cast<std::size_t>(y * 8 + x)] = x + 10.0 * y;
  const Td U = Td::constant({1, 8, 8}, v);
  const auto g = make_grid<double>(BoundingBox{0.1, 0.6, 0.2, 0.7}, 5, 5);
  const auto out = sample_grid(U, g);
  for (std::size_t p = 0; p < 25; ++p) {
    EXPECT_NEAR(out.data()[p], 8 * g.xs.data()[p] + 80 * g.ys.data()[p], 1e-10);
  }
}

TEST(TwoStageCrop, ExtendsToPatchAspect) {
  const Image img(40, 40);
  const BoundingBox b{0.25, 0.5, 0.25, 0.5};  // 10 x 10 pixels
  const auto c = crop_image_twostage(img, b, 24, 32);
  EXPECT_NEAR(c.extended.height() * 40 / (c.extended.width() * 40), 32.0 / 24.0, 1e-12);
  EXPECT_NEAR(c.extended.cx(), b.cx(), 1e-12);
  EXPECT_NEAR(c.extended.cy(), b.cy(), 1e-12);
  EXPECT_NEAR(c.extended.width(), b.width(), 1e-12);
  EXPECT_EQ(c.patch.width, 24);
  EXPECT_EQ(c.patch.height, 32);

  const BoundingBox tall{0.4, 0.5, 0.1, 0.9};
  const auto d = crop_image_twostage(img, tall, 24, 32);
  EXPECT_NEAR(d.extended.height(), tall.height(), 1e-12);
  EXPECT_NEAR(d.extended.width() / d.extended.height(), 24.0 / 32.0, 1e-12);
}

TEST(TwoStageCrop, PatchCornersMapToExtendedBox) {
  const Image img(64, 48);
  const auto c = crop_image_twostage(img, BoundingBox{0.2, 0.5, 0.1, 0.7}, 24, 32);
  const Point tl = c.patch_to_image.apply({0, 0});
  const Point br = c.patch_to_image.apply({24, 32});
  EXPECT_NEAR(tl.x / 64, c.extended.x_left, 1e-12);
  EXPECT_NEAR(tl.y / 48, c.extended.y_top, 1e-12);
  EXPECT_NEAR(br.x / 64, c.extended.x_right, 1e-12);
  EXPECT_NEAR(br.y / 48, c.extended.y_down, 1e-12);
  const Point back = c.patch_to_image.inverse().apply(c.patch_to_image.apply({5.5, 7.25}));
  EXPECT_NEAR(back.x, 5.5, 1e-12);
  EXPECT_NEAR(back.y, 7.25, 1e-12);
}

TEST(TwoStageCrop, PatchSamplesImageContent) {
  // A ramp image in x is resampled consistently with the crop transform.
  Image img(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(ch, x, y) = static_cast<float>(x) / 32.0f;
  const auto c = crop_image_twostage(img, BoundingBox{0.25, 0.75, 0.25, 0.75}, 12, 16);
  for (int x = 0; x < 12; ++x) {
    const double src = c.patch_to_image.apply({static_cast<double>(x), 8.0}).x;
    EXPECT_NEAR(c.patch.at(0, x, 8), src / 32.0, 1e-5);
  }
}

TEST(CropFrame, EndToEndMapsUnitSquareToBoxPixels) {
  const BoundingBox b{0.25, 0.75, 0.5, 1.0};
  const auto f = CropFrame::from_box(b, 64, 32, false);
  const Point p = f.to_image.apply({0.0, 0.0}), q = f.to_image.apply({1.0, 1.0});
  EXPECT_NEAR(p.x, 16, 1e-12);
  EXPECT_NEAR(p.y, 16, 1e-12);
  EXPECT_NEAR(q.x, 48, 1e-12);
  EXPECT_NEAR(q.y, 32, 1e-12);
}

TEST(Readout, MatchesBruteForceOptimum) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t Q = 7, J = 4;
    const QueryPrediction<double> pred{Td::constant({Q, J + 1}, uniform_values(rng, Q * (J + 1), -3, 3)),
                                       Td::constant({Q, 2}, uniform_values(rng, Q * 2, 0, 1))};
    for (bool excl : {true, false}) {
      const auto r = readout_keypoints(pred, J, excl);
      PredictionSet ps = detach_predictions(pred);
      std::vector<std::size_t> classes{0, 1, 2, 3};
      const auto cost = cost_infer(classes, ps, excl);
      const auto bf = brute_force_match(cost);
      EXPECT_NEAR(assignment_cost(cost, r.queries), bf.total_cost, 1e-12);
      EXPECT_TRUE(is_injective(r.queries, Q));
      for (std::size_t j = 0; j < J; ++j) {
        EXPECT_EQ(r.coords[j].x, ps.coords[r.queries[j] * 2]);
        EXPECT_NEAR(r.scores[j], -cost(j, r.queries[j]), 1e-15);
      }
    }
  }
}

TEST(Readout, ClassSpecificUsesFixedQueries) {
  std::mt19937_64 rng(12);
  const QueryPrediction<double> pred{Td::constant({3, 4}, uniform_values(rng, 12, -3, 3)),
                                     Td::constant({3, 2}, uniform_values(rng, 6, 0, 1))};
  const auto r = readout_keypoints(pred, 3, true, true);
  EXPECT_EQ(r.queries, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Readout, ClassCountMismatchIsDimensionError) {
  const QueryPrediction<double> pred{Td::zeros({3, 4}), Td::zeros({3, 2})};
  EXPECT_THROW((void)readout_keypoints(pred, 4, true), DimensionError);
}

TEST(PersonFilter, ThresholdOneKeepsNothingAndZeroKeepsAll) {
  std::mt19937_64 rng(13);
  const QueryPrediction<double> pred{Td::constant({6, 2}, uniform_values(rng, 12, -3, 3)),
                                     Td::constant({6, 4}, {0.5, 0.5, 0.2, 0.2, 0.3, 0.3, 0.1, 0.4, 0.7, 0.6, 0.3, 0.2,
                                                           0.2, 0.8, 0.2, 0.3, 0.5, 0.5, 0.9, 0.9, 0.6, 0.4, 0.2, 0.2})};
  EXPECT_TRUE(filter_persons(pred, 1.0).empty());
  EXPECT_EQ(filter_persons(pred, 0.0).size(), 6u);
  const auto all = person_candidates(pred);
  for (const auto& c : all) {
    EXPECT_GE(c.box.x_left, 0.0);
    EXPECT_LE(c.box.x_right, 1.0);
  }
}

TEST(Model, BatchedKeypointStageEqualsPerCrop) {
  for (Variant v : {Variant::end_to_end, Variant::two_stage}) {
    const PrtrModel<double> model(small_config(v), 21);
    std::mt19937_64 rng(22);
    const int cc = model.config().crop_channels();
    std::vector<Td> crops;
    for (int i = 0; i < 3; ++i) crops.push_back(Td::constant({static_cast<std::size_t>(cc), 4, 3}, uniform_values(rng, static_cast<std::size_t>(cc) * 12, -1, 1)));
    NoGradGuard g;
    const auto batched = model.run_keypoint_stage(crops);
    for (std::size_t i = 0; i < crops.size(); ++i) {
      const auto single = model.run_keypoint_stage({crops[i]});
      ASSERT_EQ(single[0].size(), batched[i].size());
      for (std::size_t l = 0; l < single[0].size(); ++l) {
        const auto a = single[0][l].coords.data(), b = batched[i][l].coords.data();
        for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-10);
        const auto c = single[0][l].logits.data(), d = batched[i][l].logits.data();
        for (std::size_t k = 0; k < c.size(); ++k) EXPECT_NEAR(c[k], d[k], 1e-10);
      }
    }
  }
}

TEST(Model, WrongCropShapeIsDimensionError) {
  const PrtrModel<double> model(small_config(Variant::end_to_end), 1);
  EXPECT_THROW((void)model.run_keypoint_stage({Td::zeros({1, 4, 3})}), DimensionError);
}

TEST(Model, WrongImageSizeIsDimensionError) {
  const PrtrModel<double> model(small_config(Variant::end_to_end), 1);
  EXPECT_THROW((void)predict_single(model, Image(16, 16), {}), DimensionError);
}

TEST(Predict, GtBoxesGiveOneInstanceEachWithAllJoints) {
  for (Variant v : {Variant::end_to_end, Variant::two_stage}) {
    const PrtrModel<double> model(small_config(v), 3);
    std::mt19937_64 rng(4);
    const Image img = random_image(rng, 32, 32);
    InferenceOptions opt;
    opt.gt_boxes = std::vector<BoundingBox>{{0.1, 0.5, 0.2, 0.9}, {0.5, 0.9, 0.1, 0.6}};
    const auto out = predict_single(model, img, opt);
    ASSERT_EQ(out.size(), 2u);
    for (const auto& inst : out) {
      ASSERT_EQ(inst.keypoints.size(), 3u);
      for (const auto& k : inst.keypoints) {
        EXPECT_TRUE(std::isfinite(k.x));
        EXPECT_GE(k.score, 0.0);
        EXPECT_LE(k.score, 1.0);
      }
    }
  }
}

TEST(Predict, ThresholdAboveOneIsEmpty) {
  const PrtrModel<double> model(small_config(Variant::end_to_end), 3);
  std::mt19937_64 rng(5);
  InferenceOptions opt;
  opt.person_threshold = 1.0;
  EXPECT_TRUE(predict_single(model, random_image(rng, 32, 32), opt).empty());
}

TEST(Predict, EndToEndKeypointsLieInsideEnlargedBox) {
  const PrtrModel<double> model(small_config(Variant::end_to_end), 8);
  std::mt19937_64 rng(9);
  InferenceOptions opt;
  const BoundingBox b{0.3, 0.6, 0.2, 0.7};
  opt.gt_boxes = std::vector<BoundingBox>{b};
  const auto out = predict_single(model, random_image(rng, 32, 32), opt);
  const BoundingBox e = b.enlarged(0.25).clamped();
  for (const auto& k : out.at(0).keypoints) {
    EXPECT_GE(k.x, e.x_left * 32 - 1e-9);
    EXPECT_LE(k.x, e.x_right * 32 + 1e-9);
    EXPECT_GE(k.y, e.y_top * 32 - 1e-9);
    EXPECT_LE(k.y, e.y_down * 32 + 1e-9);
  }
}

TEST(FlipTest, NonInvolutionSwapIsConfigError) {
  const std::vector<std::size_t> swap{1, 2, 0};
  EXPECT_THROW((void)flip_test_average(Image(4, 4), [](const Image&, bool) { return std::vector<PoseInstance>{}; }, swap),
               ConfigError);
}

TEST(FlipTest, AveragesPairedInstancesAndKeepsLoners) {
  const int W = 20;
  PoseInstance a;
  a.box = {0.1, 0.4, 0.1, 0.9};
  a.keypoints = {{2, 3, true, 0.8}, {5, 6, true, 0.6}};
  PoseInstance m;  // mirrored branch output, already in mirrored coordinates
  m.box = mirror_box(BoundingBox{0.12, 0.42, 0.1, 0.9}, W);
  m.keypoints = {{mirror_x(6, W), 6, true, 0.4}, {mirror_x(3, W), 3, true, 0.2}};
  PoseInstance lone;
  lone.box = {0.6, 0.9, 0.6, 0.9};
  lone.keypoints = {{15, 15, true, 1}, {16, 16, false, 0}};
  const std::vector<std::size_t> swap{1, 0};
  const auto out = flip_test_average(
      Image(W, 10),
      [&](const Image&, bool mirrored) {
        return mirrored ? std::vector<PoseInstance>{m} : std::vector<PoseInstance>{a, lone};
      },
      swap);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[0].keypoints[0].x, 2.5, 1e-12);
  EXPECT_NEAR(out[0].keypoints[0].y, 3.0, 1e-12);
  EXPECT_NEAR(out[0].keypoints[0].score, 0.5, 1e-12);
  EXPECT_NEAR(out[0].keypoints[1].x, 5.5, 1e-12);
  EXPECT_NEAR(out[0].box.x_left, 0.11, 1e-12);
  EXPECT_EQ(out[1].keypoints[0].x, 15);
}

TEST(FlipTest, PredictionOfMirroredImageIsMirroredPrediction) {
  for (Variant v : {Variant::end_to_end, Variant::two_stage}) {
    const PrtrModel<double> model(small_config(v), 31);
    std::mt19937_64 rng(32);
    const Image img = random_image(rng, 32, 32);
    const std::vector<std::size_t> swap{0, 2, 1};
    const BoundingBox b{0.2, 0.55, 0.1, 0.8};
    InferenceOptions opt;
    opt.flip_test = true;
    opt.gt_boxes = std::vector<BoundingBox>{b};
    const auto p = predict(model, img, opt, swap);
    opt.gt_boxes = std::vector<BoundingBox>{mirror_box(b, 32)};
    const auto q = predict(model, mirror_horizontal(img), opt, swap);
    ASSERT_EQ(p.size(), 1u);
    ASSERT_EQ(q.size(), 1u);
    const auto back = mirror_instance(q[0], 32, swap);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(p[0].keypoints[j].x, back.keypoints[j].x, 1e-6);
      EXPECT_NEAR(p[0].keypoints[j].y, back.keypoints[j].y, 1e-6);
      EXPECT_NEAR(p[0].keypoints[j].score, back.keypoints[j].score, 1e-9);
    }
  }
}

}  // namespace
}  // namespace prtr
