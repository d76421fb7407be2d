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

// Transformer building blocks, sine positional encodings, prediction heads and
// the small strided CNN backbone.

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "prtr/config.hpp"
#include "prtr/geometry.hpp"
#include "prtr/ops.hpp"
#include "prtr/optim.hpp"

namespace prtr {

/// Deterministic parameter initializer.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename T>
  Tensor<T> uniform(Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> data(numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng_));
    return Tensor<T>::parameter(std::move(shape), std::move(data));
  }

  template <typename T>
  Tensor<T> normal(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> data(numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng_));
    return Tensor<T>::parameter(std::move(shape), std::move(data));
  }

  template <typename T>
  Tensor<T> constant(Shape shape, double value) {
    const auto n = numel(shape);
    return Tensor<T>::parameter(std::move(shape), std::vector<T>(n, static_cast<T>(value)));
  }

 private:
  std::mt19937_64 rng_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Initializer& init)
      : weight_(init.uniform<T>({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)))),
        bias_(init.constant<T>({out}, 0.0)) {}

  [[nodiscard]] Tensor<T> operator()(const Tensor<T>& x) const { return add_bias(matmul(x, weight_), bias_); }

  void collect(ParamList<T>& out, const std::string& prefix, ParamGroup group = ParamGroup::rest) const {
    out.push_back({prefix + ".weight", weight_, group});
    out.push_back({prefix + ".bias", bias_, group});
  }

  [[nodiscard]] std::size_t in_features() const { return weight_.dim(0); }
  [[nodiscard]] std::size_t out_features() const { return weight_.dim(1); }

 private:
  Tensor<T> weight_, bias_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::size_t d, Initializer& init) : gamma_(init.constant<T>({d}, 1.0)), beta_(init.constant<T>({d}, 0.0)) {}

  [[nodiscard]] Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma_, beta_); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma_, ParamGroup::rest});
    out.push_back({prefix + ".beta", beta_, ParamGroup::rest});
  }

 private:
  Tensor<T> gamma_, beta_;
};

/// Scaled dot-product attention with `n_heads` heads.
///
/// `groups` splits the query rows and the key/value rows into that many equal
/// consecutive blocks; block g of the queries attends only to block g of the
/// keys. This runs several independent sequences through one set of
/// projections.
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t n_heads, Initializer& init)
      : n_heads_(n_heads),
        q_(d_model, d_model, init),
        k_(d_model, d_model, init),
        v_(d_model, d_model, init),
        o_(d_model, d_model, init) {
    if (n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError("attention: d_model " + std::to_string(d_model) + " not divisible by " +
                        std::to_string(n_heads) + " heads");
    }
  }

  /// `weights`, when given, receives one [n_q x n_k] softmax matrix per (group, head).
  [[nodiscard]] Tensor<T> operator()(const Tensor<T>& queries, const Tensor<T>& keys, const Tensor<T>& values,
                                     std::size_t groups = 1, std::vector<Tensor<T>>* weights = nullptr) const {
    const std::size_t d = q_.in_features();
    if (queries.rank() != 2 || keys.rank() != 2 || values.rank() != 2 || queries.dim(1) != d ||
        keys.dim(1) != d || values.dim(1) != d) {
      throw DimensionError("attention: feature dims must equal d_model " + std::to_string(d) + ", got " +
                           shape_str(queries.shape()) + "/" + shape_str(keys.shape()) + "/" +
                           shape_str(values.shape()));
    }
    if (keys.dim(0) != values.dim(0)) throw DimensionError("attention: key/value counts differ");
    if (groups == 0 || queries.dim(0) % groups || keys.dim(0) % groups) {
      throw DimensionError("attention: rows not divisible into " + std::to_string(groups) + " groups");
    }
    const std::size_t nq = queries.dim(0) / groups, nk = keys.dim(0) / groups;
    const std::size_t dh = d / n_heads_;
    const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const Tensor<T> q = q_(queries), k = k_(keys), v = v_(values);
    std::vector<Tensor<T>> group_out;
    group_out.reserve(groups);
    for (std::size_t g = 0; g < groups; ++g) {
      const Tensor<T> qg = groups == 1 ? q : slice(q, 0, g * nq, (g + 1) * nq);
      const Tensor<T> kg = groups == 1 ? k : slice(k, 0, g * nk, (g + 1) * nk);
      const Tensor<T> vg = groups == 1 ? v : slice(v, 0, g * nk, (g + 1) * nk);
      std::vector<Tensor<T>> heads;
      heads.reserve(n_heads_);
      for (std::size_t h = 0; h < n_heads_; ++h) {
        const Tensor<T> qh = slice(qg, 1, h * dh, (h + 1) * dh);
        const Tensor<T> kh = slice(kg, 1, h * dh, (h + 1) * dh);
        const Tensor<T> vh = slice(vg, 1, h * dh, (h + 1) * dh);
        const Tensor<T> attn = softmax(scale(matmul(qh, transpose(kh)), inv_scale), 1);
        if (weights) weights->push_back(attn);
        heads.push_back(matmul(attn, vh));
      }
      group_out.push_back(n_heads_ == 1 ? heads[0] : concat(heads, 1));
    }
    return o_(groups == 1 ? group_out[0] : concat(group_out, 0));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    q_.collect(out, prefix + ".q");
    k_.collect(out, prefix + ".k");
    v_.collect(out, prefix + ".v");
    o_.collect(out, prefix + ".o");
  }

  [[nodiscard]] std::size_t n_heads() const { return n_heads_; }

 private:
  std::size_t n_heads_ = 1;
  Linear<T> q_, k_, v_, o_;
};

template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t d_model, std::size_t hidden, Initializer& init)
      : up_(d_model, hidden, init), down_(hidden, d_model, init) {}

  [[nodiscard]] Tensor<T> operator()(const Tensor<T>& x) const { return down_(relu(up_(x))); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    up_.collect(out, prefix + ".up");
    down_.collect(out, prefix + ".down");
  }

 private:
  Linear<T> up_, down_;
};

/// Post-norm encoder layer: self-attention and FFN, each with residual + layer norm.
template <typename T>
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const ModelConfig& c, Initializer& init)
      : attn_(c.d_model, c.n_heads, init),
        ffn_(c.d_model, c.ffn_dim, init),
        norm1_(c.d_model, init),
        norm2_(c.d_model, init) {}

  [[nodiscard]] Tensor<T> operator()(const Tensor<T>& x, std::size_t groups) const {
    const Tensor<T> h = norm1_(x + attn_(x, x, x, groups));
    return norm2_(h + ffn_(h));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    attn_.collect(out, prefix + ".self_attn");
    ffn_.collect(out, prefix + ".ffn");
    norm1_.collect(out, prefix + ".norm1");
    norm2_.collect(out, prefix + ".norm2");
  }

 private:
  MultiHeadAttention<T> attn_;
  FeedForward<T> ffn_;
  LayerNorm<T> norm1_, norm2_;
};

template <typename T>
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(const ModelConfig& c, Initializer& init)
      : self_attn_(c.d_model, c.n_heads, init),
        cross_attn_(c.d_model, c.n_heads, init),
        ffn_(c.d_model, c.ffn_dim, init),
        norm1_(c.d_model, init),
        norm2_(c.d_model, init),
        norm3_(c.d_model, init) {}

  [[nodiscard]] Tensor<T> operator()(const Tensor<T>& tgt, const Tensor<T>& memory, std::size_t groups) const {
    Tensor<T> t = norm1_(tgt + self_attn_(tgt, tgt, tgt, groups));
    t = norm2_(t + cross_attn_(t, memory, memory, groups));
    return norm3_(t + ffn_(t));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    self_attn_.collect(out, prefix + ".self_attn");
    cross_attn_.collect(out, prefix + ".cross_attn");
    ffn_.collect(out, prefix + ".ffn");
    norm1_.collect(out, prefix + ".norm1");
    norm2_.collect(out, prefix + ".norm2");
    norm3_.collect(out, prefix + ".norm3");
  }

 private:
  MultiHeadAttention<T> self_attn_, cross_attn_;
  FeedForward<T> ffn_;
  LayerNorm<T> norm1_, norm2_, norm3_;
};

/// Input rows are tokens with positional encoding already added.
template <typename T>
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(const ModelConfig& c, Initializer& init) {
    for (int i = 0; i < c.n_encoder_layers; ++i) layers_.emplace_back(c, init);
  }

  [[nodiscard]] Tensor<T> operator()(const Tensor<T>& tokens, std::size_t groups = 1) const {
    Tensor<T> x = tokens;
    for (const auto& layer : layers_) x = layer(x, groups);
    return x;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + "." + std::to_string(i));
  }

  [[nodiscard]] std::size_t n_layers() const { return layers_.size(); }

 private:
  std::vector<EncoderLayer<T>> layers_;
};

/// Parallel decoding; returns the query states after every layer.
template <typename T>
class TransformerDecoder {
 public:
  TransformerDecoder() = default;
  TransformerDecoder(const ModelConfig& c, Initializer& init) {
    for (int i = 0; i < c.n_decoder_layers; ++i) layers_.emplace_back(c, init);
  }

  [[nodiscard]] std::vector<Tensor<T>> operator()(const Tensor<T>& queries, const Tensor<T>& memory,
                                                  std::size_t groups = 1) const {
    std::vector<Tensor<T>> states;
    states.reserve(layers_.size());
    Tensor<T> t = queries;
    for (const auto& layer : layers_) {
      t = layer(t, memory, groups);
      states.push_back(t);
    }
    return states;
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + "." + std::to_string(i));
  }

  [[nodiscard]] std::size_t n_layers() const { return layers_.size(); }

 private:
  std::vector<DecoderLayer<T>> layers_;
};

// ---------------------------------------------------------------------------
// Positional encoding

/// Frame in which token positions are expressed before encoding. The token
/// lattice always spans the image; a box frame re-expresses each position
/// relative to the box so that the box maps to [0,1]^2.
struct PositionFrame {
  std::optional<BoundingBox> box;

  static PositionFrame absolute() { return {}; }
  static PositionFrame box_relative(const BoundingBox& b) { return {b}; }
};

/// Sine/cosine encoding of normalized positions (DETR-style, 2*pi scale).
/// Channels [0, d/2) encode y, [d/2, d) encode x; within each half, channel
/// 2k is sin(pos * w_k) and 2k+1 is cos(pos * w_k), w_k = 2*pi / 10000^(2k/(d/2)).
template <typename T>
std::vector<T> encode_position(double x, double y, std::size_t d_model) {
  if (d_model % 4 != 0) throw ConfigError("positional encoding needs d_model divisible by 4");
  const std::size_t half = d_model / 2;
  std::vector<T> out(d_model);
  for (std::size_t k = 0; k < half / 2; ++k) {
    const double w = 2.0 * std::numbers::pi / std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(half));
    out[2 * k] = static_cast<T>(std::sin(y * w));
    out[2 * k + 1] = static_cast<T>(std::cos(y * w));
    out[half + 2 * k] = static_cast<T>(std::sin(x * w));
    out[half + 2 * k + 1] = static_cast<T>(std::cos(x * w));
  }
  return out;
}

/// [height x width x d_model]; token (r, c) sits at (c/width, r/height).
template <typename T>
Tensor<T> positional_encoding_2d(std::size_t height, std::size_t width, std::size_t d_model,
                                 const PositionFrame& frame) {
  if (d_model % 4 != 0) throw ConfigError("positional encoding needs d_model divisible by 4");
  std::vector<T> data;
  data.reserve(height * width * d_model);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      double x = static_cast<double>(c) / static_cast<double>(width);
      double y = static_cast<double>(r) / static_cast<double>(height);
      if (frame.box) {
        if (!frame.box->valid()) throw ContractError("positional encoding: degenerate box " + frame.box->str());
        x = (x - frame.box->x_left) / frame.box->width();
        y = (y - frame.box->y_top) / frame.box->height();
      }
      const auto enc = encode_position<T>(x, y, d_model);
      data.insert(data.end(), enc.begin(), enc.end());
    }
  }
  return Tensor<T>::constant({height, width, d_model}, std::move(data));
}

// ---------------------------------------------------------------------------
// Heads

enum class HeadKind { person, keypoint };

/// One decoder layer's predictions for all queries.
template <typename T>
struct QueryPrediction {
  Tensor<T> logits;  // [Q x n_classes], unnormalized; last class is background
  Tensor<T> coords;  // [Q x 2] (x, y) or [Q x 4] (cx, cy, w, h), in (0, 1)
};

/// Class head plus a 3-layer MLP box/point regressor squashed by a logistic map.
template <typename T>
class PredictionHeads {
 public:
  PredictionHeads() = default;
  PredictionHeads(HeadKind kind, std::size_t d_model, std::size_t n_joints, Initializer& init)
      : kind_(kind),
        cls_(d_model, kind == HeadKind::person ? 2 : n_joints + 1, init),
        mlp1_(d_model, d_model, init),
        mlp2_(d_model, d_model, init),
        mlp3_(d_model, kind == HeadKind::person ? 4 : 2, init) {}

  [[nodiscard]] QueryPrediction<T> operator()(const Tensor<T>& state) const {
    return {cls_(state), sigmoid(mlp3_(relu(mlp2_(relu(mlp1_(state))))))};
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    cls_.collect(out, prefix + ".class");
    mlp1_.collect(out, prefix + ".coord.0");
    mlp2_.collect(out, prefix + ".coord.1");
    mlp3_.collect(out, prefix + ".coord.2");
  }

  [[nodiscard]] HeadKind kind() const { return kind_; }
  [[nodiscard]] std::size_t n_classes() const { return cls_.out_features(); }

 private:
  HeadKind kind_ = HeadKind::keypoint;
  Linear<T> cls_, mlp1_, mlp2_, mlp3_;
};

// ---------------------------------------------------------------------------
// Backbone

template <typename T>
struct FeaturePyramid {
  Tensor<T> stride4, stride8, stride16;  // [C x H/s x W/s]

  [[nodiscard]] const Tensor<T>& at_stride(int s) const {
    if (s == 4) return stride4;
    if (s == 8) return stride8;
    if (s == 16) return stride16;
    throw ConfigError("no feature map at stride " + std::to_string(s));
  }
};

/// 3x3 conv stem at stride 1 then four 3x3 stride-2 stages, ReLU after each.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const std::vector<int>& channels, Initializer& init) {
    if (channels.size() != 5) throw ConfigError("backbone needs 5 channel counts");
    std::size_t in = 3;
    for (int c : channels) {
      const auto out = static_cast<std::size_t>(c);
      const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
      weights_.push_back(init.uniform<T>({out, in, 3, 3}, bound));
      biases_.push_back(init.constant<T>({out}, 0.0));
      in = out;
    }
  }

  [[nodiscard]] FeaturePyramid<T> operator()(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) {
      throw DimensionError("backbone expects a [3 x H x W] image, got " + shape_str(image.shape()));
    }
    if (image.dim(1) % 16 || image.dim(2) % 16) {
      throw ConfigError("backbone input " + shape_str(image.shape()) + " not divisible by 16");
    }
    Tensor<T> x = relu(conv2d(image, weights_[0], biases_[0], 1, 1));
    std::vector<Tensor<T>> stages;
    for (std::size_t i = 1; i < weights_.size(); ++i) {
      x = relu(conv2d(x, weights_[i], biases_[i], 2, 1));
      stages.push_back(x);
    }
    return {stages[1], stages[2], stages[3]};
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      const std::string name = prefix + (i == 0 ? ".stem" : ".stage" + std::to_string(i));
      out.push_back({name + ".weight", weights_[i], ParamGroup::backbone});
      out.push_back({name + ".bias", biases_[i], ParamGroup::backbone});
    }
  }

 private:
  std::vector<Tensor<T>> weights_, biases_;
};

/// [C x H x W] feature map -> [HW x C] token rows.
template <typename T>
Tensor<T> flatten_tokens(const Tensor<T>& map) {
  return transpose(reshape(map, {map.dim(0), map.dim(1) * map.dim(2)}));
}

/// Encoder-decoder transformer with learned queries and prediction heads.
/// `tokens` are projected to d_model, `pos` ([N x d_model]) is added, and the
/// decoder is run from the query embeddings.
template <typename T>
class DetectionTransformer {
 public:
  DetectionTransformer() = default;
  DetectionTransformer(const ModelConfig& c, HeadKind kind, std::size_t in_channels, std::size_t n_queries,
                       Initializer& init)
      : input_proj_(in_channels, c.d_model, init),
        encoder_(c, init),
        decoder_(c, init),
        queries_(init.normal<T>({n_queries, static_cast<std::size_t>(c.d_model)}, 1.0)),
        heads_(kind, c.d_model, c.n_joints, init) {}

  struct Output {
    std::vector<QueryPrediction<T>> layers;  // one per decoder layer
    std::vector<Tensor<T>> states;
  };

  /// Runs `groups` independent sequences stacked along rows. Token rows
  /// must hold groups * N entries and `pos` N entries.
  [[nodiscard]] Output operator()(const Tensor<T>& tokens, const Tensor<T>& pos, std::size_t groups = 1) const {
    Tensor<T> x = input_proj_(tokens);
    Tensor<T> p = pos;
    if (groups > 1) p = concat(std::vector<Tensor<T>>(groups, pos), 0);
    const Tensor<T> memory = encoder_(x + p, groups);
    const Tensor<T> q = groups > 1 ? concat(std::vector<Tensor<T>>(groups, queries_), 0) : queries_;
    Output out;
    out.states = decoder_(q, memory, groups);
    for (const auto& s : out.states) out.layers.push_back(heads_(s));
    return out;
  }

  /// Heads applied to the raw query embeddings (the "layer 0" snapshot).
  [[nodiscard]] QueryPrediction<T> initial_prediction() const { return heads_(queries_); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    input_proj_.collect(out, prefix + ".input_proj");
    encoder_.collect(out, prefix + ".encoder");
    decoder_.collect(out, prefix + ".decoder");
    out.push_back({prefix + ".query_embed", queries_, ParamGroup::rest});
    heads_.collect(out, prefix + ".heads");
  }

  [[nodiscard]] const PredictionHeads<T>& heads() const { return heads_; }
  [[nodiscard]] const TransformerEncoder<T>& encoder() const { return encoder_; }
  [[nodiscard]] const TransformerDecoder<T>& decoder() const { return decoder_; }
  [[nodiscard]] const Tensor<T>& queries() const { return queries_; }
  [[nodiscard]] std::size_t n_queries() const { return queries_.dim(0); }

 private:
  Linear<T> input_proj_;
  TransformerEncoder<T> encoder_;
  TransformerDecoder<T> decoder_;
  Tensor<T> queries_;
  PredictionHeads<T> heads_;
};

}  // namespace prtr
