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

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "prtr/error.hpp"

namespace prtr {

struct Point {
  double x = 0;
  double y = 0;
};

/// Axis-aligned box in normalized image coordinates (fractions of width/height).
struct BoundingBox {
  double x_left = 0;
  double x_right = 1;
  double y_top = 0;
  double y_down = 1;

  [[nodiscard]] double width() const { return x_right - x_left; }
  [[nodiscard]] double height() const { return y_down - y_top; }
  [[nodiscard]] double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  [[nodiscard]] double cx() const { return 0.5 * (x_left + x_right); }
  [[nodiscard]] double cy() const { return 0.5 * (y_top + y_down); }
  [[nodiscard]] bool valid() const { return x_left < x_right && y_top < y_down; }

  static BoundingBox from_cxcywh(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cx + 0.5 * w, cy - 0.5 * h, cy + 0.5 * h};
  }

  static BoundingBox unit() { return {0, 1, 0, 1}; }

  [[nodiscard]] BoundingBox clamped() const {
    auto c = [](double v) { return std::clamp(v, 0.0, 1.0); };
    return {c(x_left), c(x_right), c(y_top), c(y_down)};
  }

  /// Grown by `factor` of its extent along each axis, about its center.
  [[nodiscard]] BoundingBox enlarged(double factor) const {
    const double hw = 0.5 * width() * (1 + factor), hh = 0.5 * height() * (1 + factor);
    return {cx() - hw, cx() + hw, cy() - hh, cy() + hh};
  }

  [[nodiscard]] std::string str() const {
    return "[" + std::to_string(x_left) + "," + std::to_string(x_right) + "]x[" + std::to_string(y_top) + "," +
           std::to_string(y_down) + "]";
  }
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x_right, b.x_right) - std::max(a.x_left, b.x_left);
  const double ih = std::min(a.y_down, b.y_down) - std::max(a.y_top, b.y_top);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double generalized_iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::max(0.0, std::min(a.x_right, b.x_right) - std::max(a.x_left, b.x_left));
  const double ih = std::max(0.0, std::min(a.y_down, b.y_down) - std::max(a.y_top, b.y_top));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double hull = (std::max(a.x_right, b.x_right) - std::min(a.x_left, b.x_left)) *
                      (std::max(a.y_down, b.y_down) - std::min(a.y_top, b.y_top));
  if (uni <= 0 || hull <= 0) return -1.0;
  return inter / uni - (hull - uni) / hull;
}

/// 2-D affine map p -> A p + t, stored row-major as [a b tx; c d ty].
struct Affine2D {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  static Affine2D identity() { return {}; }
  static Affine2D translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty}}; }
  static Affine2D scaling(double sx, double sy) { return {{sx, 0, 0, 0, sy, 0}}; }
  static Affine2D rotation(double radians) {
    const double c = std::cos(radians), s = std::sin(radians);
    return {{c, -s, 0, s, c, 0}};
  }
  /// Rotation by `radians` and isotropic scaling about `center`.
  static Affine2D about(Point center, double radians, double scale) {
    return translation(center.x, center.y) * rotation(radians) * scaling(scale, scale) *
           translation(-center.x, -center.y);
  }

  [[nodiscard]] Point apply(Point p) const {
    return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
  }

  /// Composition: (A * B)(p) == A(B(p)).
  friend Affine2D operator*(const Affine2D& a, const Affine2D& b) {
    const auto& x = a.m;
    const auto& y = b.m;
    return {{x[0] * y[0] + x[1] * y[3], x[0] * y[1] + x[1] * y[4], x[0] * y[2] + x[1] * y[5] + x[2],
             x[3] * y[0] + x[4] * y[3], x[3] * y[1] + x[4] * y[4], x[3] * y[2] + x[4] * y[5] + x[5]}};
  }

  [[nodiscard]] Affine2D inverse() const {
    const double det = m[0] * m[4] - m[1] * m[3];
    if (std::abs(det) < 1e-300) throw ContractError("singular affine map");
    const double a = m[4] / det, b = -m[1] / det, c = -m[3] / det, d = m[0] / det;
    return {{a, b, -(a * m[2] + b * m[5]), c, d, -(c * m[2] + d * m[5])}};
  }
};

}  // namespace prtr
