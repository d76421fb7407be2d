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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "prtr/nn.hpp"
#include "support/gradcheck.hpp"

namespace prtr {
namespace {

using Td = Tensor<double>;
using testing::uniform_values;

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.ffn_dim = 12;
  c.n_encoder_layers = 2;
  c.n_decoder_layers = 2;
  return c;
}

Td permute_rows(const Td& x, const std::vector<std::size_t>& perm) { return gather(x, perm); }

void expect_close(const Td& a, const Td& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), tol) << "index " << i;
}

TEST(PositionalEncoding, UnitBoxEqualsAbsolute) {
  const Td a = positional_encoding_2d<double>(5, 7, 16, PositionFrame::absolute());
  const Td b = positional_encoding_2d<double>(5, 7, 16, PositionFrame::box_relative(BoundingBox::unit()));
  expect_close(a, b, 0.0);
}

TEST(PositionalEncoding, OriginIsSineZeroCosineOne) {
  const auto e = encode_position<double>(0, 0, 32);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_EQ(e[i], i % 2 == 0 ? 0.0 : 1.0) << i;
}

TEST(PositionalEncoding, DistinctOnSixteenBySixteenGrid) {
  const std::size_t n = 16, d = 32;
  const Td pe = positional_encoding_2d<double>(n, n, d, PositionFrame::absolute());
  double min_gap = 1e9;
  for (std::size_t a = 0; a < n * n; ++a) {
    for (std::size_t b = a + 1; b < n * n; ++b) {
      double dist = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = pe.at(a * d + k) - pe.at(b * d + k);
        dist += diff * diff;
      }
      min_gap = std::min(min_gap, dist);
    }
  }
  EXPECT_GT(min_gap, 1e-6);
}

TEST(PositionalEncoding, BoxRelativeRescalesPositions) {
  const BoundingBox box{0.25, 0.75, 0.5, 1.0};
  const Td pe = positional_encoding_2d<double>(4, 4, 8, PositionFrame::box_relative(box));
  // Token (r=2, c=1) sits at (0.25, 0.5) in the image, (0, 0) in the box.
  const auto ref = encode_position<double>(0.0, 0.0, 8);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(pe.at((2 * 4 + 1) * 8 + k), ref[k], 1e-15);
}

TEST(PositionalEncoding, RejectsWidthNotDivisibleByFour) {
  EXPECT_THROW((void)positional_encoding_2d<double>(2, 2, 6, PositionFrame::absolute()), ConfigError);
}

TEST(Attention, HeadDivisionMismatchIsConfigError) {
  Initializer init(1);
  EXPECT_THROW((MultiHeadAttention<double>(10, 3, init)), ConfigError);
}

struct AttentionParams {
  std::vector<double> wq, bq, wk, bk, wv, bv, wo, bo;
};

AttentionParams attention_params(const MultiHeadAttention<double>& mha) {
  ParamList<double> ps;
  mha.collect(ps, "a");
  auto get = [&](const std::string& n) {
    for (const auto& p : ps) {
      if (p.name == n) return std::vector<double>(p.tensor.data().begin(), p.tensor.data().end());
    }
    throw std::runtime_error("missing " + n);
  };
  return {get("a.q.weight"), get("a.q.bias"), get("a.k.weight"), get("a.k.bias"),
          get("a.v.weight"), get("a.v.bias"), get("a.o.weight"), get("a.o.bias")};
}

// x [n x d] W [d x d] + b, row-major.
std::vector<double> affine(const std::vector<double>& x, std::size_t n, std::size_t d, const std::vector<double>& w,
                           const std::vector<double>& b) {
  std::vector<double> y(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = b[j];
      for (std::size_t k = 0; k < d; ++k) acc += x[i * d + k] * w[k * d + j];
      y[i * d + j] = acc;
    }
  }
  return y;
}

TEST(Attention, MatchesNaivePerHeadLoops) {
  const std::size_t d = 8, heads = 2, dh = d / heads, nq = 3, nk = 5;
  Initializer init(42);
  const MultiHeadAttention<double> mha(d, heads, init);
  std::mt19937_64 rng(1);
  const auto qx = uniform_values(rng, nq * d), kx = uniform_values(rng, nk * d), vx = uniform_values(rng, nk * d);
  const Td out = mha(Td::constant({nq, d}, qx), Td::constant({nk, d}, kx), Td::constant({nk, d}, vx));

  const auto P = attention_params(mha);
  const auto q = affine(qx, nq, d, P.wq, P.bq), k = affine(kx, nk, d, P.wk, P.bk), v = affine(vx, nk, d, P.wv, P.bv);
  std::vector<double> concat_heads(nq * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < nq; ++i) {
      std::vector<double> s(nk);
      double mx = -1e300;
      for (std::size_t j = 0; j < nk; ++j) {
        double dotp = 0;
        for (std::size_t c = 0; c < dh; ++c) dotp += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        s[j] = dotp / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < nk; ++j) acc += s[j] / z * v[j * d + h * dh + c];
        concat_heads[i * d + h * dh + c] = acc;
      }
    }
  }
  const auto ref = affine(concat_heads, nq, d, P.wo, P.bo);
  for (std::size_t i = 0; i < nq * d; ++i) EXPECT_NEAR(out.at(i), ref[i], 1e-10);
}

TEST(Attention, SingleKeyReturnsProjectedValue) {
  const std::size_t d = 8;
  Initializer init(3);
  const MultiHeadAttention<double> mha(d, 4, init);
  std::mt19937_64 rng(2);
  const Td key = Td::constant({1, d}, uniform_values(rng, d)), val = Td::constant({1, d}, uniform_values(rng, d));
  const Td a = mha(Td::constant({1, d}, uniform_values(rng, d)), key, val);
  const Td b = mha(Td::constant({1, d}, uniform_values(rng, d)), key, val);
  const auto P = attention_params(mha);
  const std::vector<double> vx(val.data().begin(), val.data().end());
  const auto ref = affine(affine(vx, 1, d, P.wv, P.bv), 1, d, P.wo, P.bo);
  for (std::size_t i = 0; i < d; ++i) {
    EXPECT_NEAR(a.at(i), ref[i], 1e-12);
    EXPECT_NEAR(b.at(i), ref[i], 1e-12);
  }
}

TEST(Attention, IdenticalKeysGiveUniformWeights) {
  const std::size_t d = 8, nk = 4;
  Initializer init(4);
  const MultiHeadAttention<double> mha(d, 2, init);
  std::mt19937_64 rng(3);
  const auto row = uniform_values(rng, d);
  std::vector<double> keys;
  for (std::size_t i = 0; i < nk; ++i) keys.insert(keys.end(), row.begin(), row.end());
  std::vector<Td> weights;
  (void)mha(Td::constant({3, d}, uniform_values(rng, 3 * d)), Td::constant({nk, d}, keys),
            Td::constant({nk, d}, uniform_values(rng, nk * d)), 1, &weights);
  ASSERT_EQ(weights.size(), 2u);
  for (const auto& w : weights) {
    for (double x : w.data()) EXPECT_NEAR(x, 1.0 / nk, 1e-15);
  }
}

TEST(Attention, GroupsEqualSeparateCalls) {
  const std::size_t d = 8;
  Initializer init(5);
  const MultiHeadAttention<double> mha(d, 2, init);
  std::mt19937_64 rng(4);
  const Td q1 = Td::constant({3, d}, uniform_values(rng, 3 * d)), q2 = Td::constant({3, d}, uniform_values(rng, 3 * d));
  const Td k1 = Td::constant({4, d}, uniform_values(rng, 4 * d)), k2 = Td::constant({4, d}, uniform_values(rng, 4 * d));
  const Td both = mha(concat<double>({q1, q2}, 0), concat<double>({k1, k2}, 0), concat<double>({k1, k2}, 0), 2);
  expect_close(slice(both, 0, 0, 3), mha(q1, k1, k1), 0.0);
  expect_close(slice(both, 0, 3, 6), mha(q2, k2, k2), 0.0);
}

TEST(Encoder, ZeroLayersIsIdentity) {
  ModelConfig c = small_config();
  c.n_encoder_layers = 0;
  Initializer init(1);
  const TransformerEncoder<double> enc(c, init);
  std::mt19937_64 rng(1);
  const Td x = Td::constant({5, 8}, uniform_values(rng, 40));
  expect_close(enc(x), x, 0.0);
}

TEST(Encoder, PermutationEquivariantAndShapePreserving) {
  const ModelConfig c = small_config();
  Initializer init(2);
  const TransformerEncoder<double> enc(c, init);
  std::mt19937_64 rng(2);
  for (std::size_t n : {1u, 6u, 12u}) {
    const Td x = Td::constant({n, 8}, uniform_values(rng, n * 8));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Td y = enc(x);
    EXPECT_EQ(y.shape(), (Shape{n, 8}));
    expect_close(enc(permute_rows(x, perm)), permute_rows(y, perm), 1e-12);
  }
}

TEST(Decoder, ReturnsEveryLayerState) {
  ModelConfig c = small_config();
  c.n_decoder_layers = 1;
  Initializer init(3);
  const TransformerDecoder<double> dec(c, init);
  std::mt19937_64 rng(3);
  const auto states = dec(Td::constant({4, 8}, uniform_values(rng, 32)), Td::constant({6, 8}, uniform_values(rng, 48)));
  ASSERT_EQ(states.size(), 1u);
  EXPECT_EQ(states[0].shape(), (Shape{4, 8}));
}

TEST(Decoder, QueryPermutationPermutesEveryLayer) {
  const ModelConfig c = small_config();
  Initializer init(4);
  const TransformerDecoder<double> dec(c, init);
  std::mt19937_64 rng(4);
  const Td q = Td::constant({5, 8}, uniform_values(rng, 40)), mem = Td::constant({7, 8}, uniform_values(rng, 56));
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  const auto a = dec(q, mem), b = dec(permute_rows(q, perm), mem);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t l = 0; l < a.size(); ++l) expect_close(b[l], permute_rows(a[l], perm), 1e-12);
}

TEST(Decoder, ZeroInputsFiniteAndDeterministic) {
  const ModelConfig c = small_config();
  Initializer i1(5), i2(5);
  const TransformerDecoder<double> d1(c, i1), d2(c, i2);
  const auto a = d1(Td::zeros({3, 8}), Td::zeros({4, 8})), b = d2(Td::zeros({3, 8}), Td::zeros({4, 8}));
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (std::size_t i = 0; i < a[l].numel(); ++i) {
      EXPECT_TRUE(std::isfinite(a[l].at(i)));
      EXPECT_EQ(a[l].at(i), b[l].at(i));
    }
  }
}

TEST(Heads, KeypointShapesAndRange) {
  Initializer init(6);
  const PredictionHeads<double> heads(HeadKind::keypoint, 8, 5, init);
  std::mt19937_64 rng(6);
  const auto out = heads(Td::constant({12, 8}, uniform_values(rng, 96, -50, 50)));
  EXPECT_EQ(out.logits.shape(), (Shape{12, 6}));
  EXPECT_EQ(out.coords.shape(), (Shape{12, 2}));
  for (double v : out.coords.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (double v : out.logits.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Heads, PersonShapesAndPurity) {
  Initializer init(7);
  const PredictionHeads<double> heads(HeadKind::person, 8, 5, init);
  std::mt19937_64 rng(7);
  const auto row = uniform_values(rng, 8), other = uniform_values(rng, 8);
  std::vector<double> states = row;
  states.insert(states.end(), row.begin(), row.end());
  states.insert(states.end(), other.begin(), other.end());
  const auto out = heads(Td::constant({3, 8}, states));
  EXPECT_EQ(out.logits.shape(), (Shape{3, 2}));
  EXPECT_EQ(out.coords.shape(), (Shape{3, 4}));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out.coords.at(k), out.coords.at(4 + k));
  bool differs = false;
  for (std::size_t k = 0; k < 4; ++k) differs = differs || out.coords.at(k) != out.coords.at(8 + k);
  EXPECT_TRUE(differs);
}

TEST(Backbone, StrideArithmetic) {
  Initializer init(8);
  const Backbone<double> bb({8, 16, 24, 32, 48}, init);
  const auto p = bb(Td::zeros({3, 64, 64}));
  EXPECT_EQ(p.stride4.shape(), (Shape{24, 16, 16}));
  EXPECT_EQ(p.stride8.shape(), (Shape{32, 8, 8}));
  EXPECT_EQ(p.stride16.shape(), (Shape{48, 4, 4}));
  for (const Td* t : {&p.stride4, &p.stride8, &p.stride16}) {
    for (double v : t->data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Backbone, IndivisibleSizeIsConfigError) {
  Initializer init(9);
  const Backbone<double> bb({2, 2, 2, 2, 2}, init);
  EXPECT_THROW((void)bb(Td::zeros({3, 24, 32})), ConfigError);
}

TEST(Initializer, SameSeedSameParameters) {
  const ModelConfig c = small_config();
  Initializer a(11), b(11);
  const DetectionTransformer<double> t1(c, HeadKind::keypoint, 5, 12, a), t2(c, HeadKind::keypoint, 5, 12, b);
  ParamList<double> p1, p2;
  t1.collect(p1, "x");
  t2.collect(p2, "x");
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_EQ(p1[i].name, p2[i].name);
    EXPECT_TRUE(std::equal(p1[i].tensor.data().begin(), p1[i].tensor.data().end(), p2[i].tensor.data().begin()));
  }
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.n_keypoint_queries = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.enlarge_factor = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig::paper().validate());
  EXPECT_EQ(ModelConfig::paper().n_encoder_layers, 6);
  EXPECT_EQ(ModelConfig::paper().n_decoder_layers, 6);
  EXPECT_EQ(ModelConfig::paper().n_keypoint_queries, 100);
}

}  // namespace
}  // namespace prtr
