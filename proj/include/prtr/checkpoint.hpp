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

// Binary checkpoint format (all integers little-endian):
//
//   "PRTR" | u32 version | u32 n | n bytes of ModelConfig JSON
//   then until EOF, one record per tensor:
//   u32 name_len | name | u8 dtype (0 = f32) | u8 rank | u32 dims[rank] | f32 payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "prtr/cascade.hpp"
#include "prtr/config.hpp"
#include "prtr/error.hpp"

namespace prtr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<TensorRecord> tensors;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> b) : bytes_(std::move(b)) {}

  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }
  [[nodiscard]] std::size_t pos() const { return pos_; }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError("checkpoint truncated", pos_);
  }
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw("PRTR");
  w.u32(kCheckpointVersion);
  const std::string cfg = to_json(ck.config).dump();
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.raw(cfg);
  for (const auto& t : ck.tensors) {
    if (numel(t.shape) != t.data.size()) throw DimensionError("checkpoint: tensor '" + t.name + "' size mismatch");
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name);
    w.u8(0);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data) w.f32(v);
  }
  return std::move(w.bytes);
}

inline Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.raw(4) != "PRTR") throw ParseError("not a checkpoint (bad magic)", std::size_t{0});
  const std::size_t vpos = r.pos();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), vpos);
  }
  const std::uint32_t n = r.u32();
  const std::size_t cpos = r.pos();
  Checkpoint ck;
  try {
    ck.config = model_config_from_json(Json::parse(r.raw(n)));
  } catch (const Json::exception& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what(), cpos);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what(), cpos);
  }
  while (!r.done()) {
    const std::size_t start = r.pos();
    TensorRecord t;
    t.name = r.raw(r.u32());
    const std::uint8_t dtype = r.u8();
    if (dtype != 0) throw ParseError("unsupported dtype code " + std::to_string(dtype), start);
    const std::uint8_t rank = r.u8();
    for (int i = 0; i < rank; ++i) t.shape.push_back(r.u32());
    t.data.resize(numel(t.shape));
    for (float& v : t.data) v = r.f32();
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(std::move(bytes));
}

template <typename T>
Checkpoint snapshot(const PrtrModel<T>& model) {
  Checkpoint ck;
  ck.config = model.config();
  for (const auto& p : model.parameters()) {
    const auto d = p.tensor.data();
    ck.tensors.push_back({p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return ck;
}

/// Copies checkpoint values into the model. The name sets must agree exactly.
template <typename T>
void restore(PrtrModel<T>& model, const Checkpoint& ck) {
  const auto diff = config_diff(model.config(), ck.config);
  if (!diff.empty()) {
    std::string names;
    for (const auto& d : diff) names += (names.empty() ? "" : ", ") + d;
    throw ConfigError("checkpoint config differs from model config in: " + names);
  }
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& t : ck.tensors) {
    if (!by_name.emplace(t.name, &t).second) throw ConfigError("checkpoint: duplicate tensor '" + t.name + "'");
  }
  auto params = model.parameters();
  std::string missing;
  for (const auto& p : params) {
    if (!by_name.count(p.name)) missing += (missing.empty() ? "" : ", ") + p.name;
  }
  if (!missing.empty()) throw ConfigError("checkpoint lacks parameters: " + missing);
  if (by_name.size() != params.size()) {
    std::string extra;
    for (const auto& [name, rec] : by_name) {
      const bool known = std::any_of(params.begin(), params.end(), [&](const auto& p) { return p.name == name; });
      if (!known) extra += (extra.empty() ? "" : ", ") + name;
    }
    throw ConfigError("checkpoint has unknown parameters: " + extra);
  }
  for (auto& p : params) {
    const TensorRecord& rec = *by_name.at(p.name);
    if (rec.shape != p.tensor.shape()) {
      throw DimensionError("checkpoint tensor '" + p.name + "' has shape " + shape_str(rec.shape) + ", model expects " +
                           shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec.data[i]);
  }
}

template <typename T>
PrtrModel<T> model_from_checkpoint(const Checkpoint& ck) {
  PrtrModel<T> model(ck.config, 0);
  restore(model, ck);
  return model;
}

template <typename T>
PrtrModel<T> load_model(const std::string& path) {
  return model_from_checkpoint<T>(read_checkpoint(path));
}

}  // namespace prtr
