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

#include <cmath>
#include <string>
#include <vector>

#include "prtr/tensor.hpp"

namespace prtr {

// Learning-rate group. The backbone trains at its own rate.
enum class ParamGroup { backbone, rest };

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  ParamGroup group = ParamGroup::rest;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Moment estimates for one parameter set; index-aligned with the set.
template <typename T>
struct AdamWState {
  std::vector<std::vector<T>> m, v;
  long step = 0;
};

/// One decoupled-weight-decay Adam update. `lrs[i]` is the rate for params[i].
/// Every parameter must carry a gradient.
template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState<T>& state, const std::vector<double>& lrs,
                const AdamWOptions& opt) {
  if (lrs.size() != params.size()) throw ContractError("adamw_step: one learning rate per parameter");
  if (opt.beta1 < 0 || opt.beta1 >= 1 || opt.beta2 < 0 || opt.beta2 >= 1 || opt.eps <= 0 ||
      opt.weight_decay < 0) {
    throw ConfigError("adamw_step: invalid hyperparameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw ContractError("adamw_step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), T{0});
      state.v[i].assign(params[i].numel(), T{0});
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const T lr = static_cast<T>(lrs[i]);
    const T decay = T{1} - static_cast<T>(lrs[i] * opt.weight_decay);
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] *= decay;
      m[k] = b1 * m[k] + (T{1} - b1) * g[k];
      v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
      const T mhat = m[k] / static_cast<T>(bc1);
      const T vhat = v[k] / static_cast<T>(bc2);
      p[k] -= lr * mhat / (std::sqrt(vhat) + static_cast<T>(opt.eps));
    }
  }
}

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  double total = 0;
  for (auto& p : params) {
    for (T g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(total);
  if (max_norm > 0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      auto& g = p.node()->grad;
      for (T& x : g) x *= factor;
    }
  }
  return norm;
}

/// Gives every gradient-less parameter an explicit zero gradient.
template <typename T>
void fill_missing_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) {
    if (!p.has_grad()) p.node()->grad_data();
  }
}

}  // namespace prtr
