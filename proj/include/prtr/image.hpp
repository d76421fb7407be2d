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

// RGB images as normalized floats, binary PNM I/O (plus PNG/JPEG decoding
// when built with libpng/libjpeg), bilinear affine resampling and simple
// anti-aliased drawing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "prtr/geometry.hpp"
#include "prtr/tensor.hpp"

#ifdef PRTR_HAVE_PNG
#include <png.h>
#endif
#ifdef PRTR_HAVE_JPEG
#include <csetjmp>
#include <jpeglib.h>
#endif

namespace prtr {

using Color = std::array<float, 3>;

/// Planar RGB, values in [0, 1]. Pixel (x, y) of channel c is at
/// pixels[(c * height + y) * width + x]; its continuous coordinate is (x, y).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, Color fill = {0, 0, 0}) : width(w), height(h), pixels(static_cast<std::size_t>(3 * w * h)) {
    for (int c = 0; c < 3; ++c) {
      std::fill_n(pixels.begin() + static_cast<std::ptrdiff_t>(c) * w * h, static_cast<std::size_t>(w * h), fill[c]);
    }
  }

  [[nodiscard]] float at(int c, int x, int y) const {
    return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float& at(int c, int x, int y) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  [[nodiscard]] Color color(int x, int y) const { return {at(0, x, y), at(1, x, y), at(2, x, y)}; }
  [[nodiscard]] bool empty() const { return width == 0 || height == 0; }
  bool operator==(const Image&) const = default;
};

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
Tensor<T> to_tensor(const Image& img) {
  std::vector<T> data(img.pixels.begin(), img.pixels.end());
  return Tensor<T>::constant({3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)},
                             std::move(data));
}

/// Horizontal mirror: pixel x moves to width - 1 - x.
inline Image mirror_horizontal(const Image& img) {
  Image out(img.width, img.height);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) out.at(c, img.width - 1 - x, y) = img.at(c, x, y);
    }
  }
  return out;
}

/// Mirror of a continuous x coordinate, matching mirror_horizontal.
inline double mirror_x(double x, int width) { return static_cast<double>(width - 1) - x; }

/// out(p) = bilinear sample of `src` at `out_to_src(p)`, zero outside.
inline Image resample_affine(const Image& src, const Affine2D& out_to_src, int out_w, int out_h) {
  Image out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const Point s = out_to_src.apply({static_cast<double>(x), static_cast<double>(y)});
      const double fx = std::floor(s.x), fy = std::floor(s.y);
      const double ax = s.x - fx, ay = s.y - fy;
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int xx = x0 + dx, yy = y0 + dy;
            if (xx < 0 || yy < 0 || xx >= src.width || yy >= src.height) continue;
            acc += (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay) * src.at(c, xx, yy);
          }
        }
        out.at(c, x, y) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Drawing

/// Blends `color` with coverage falling off over one pixel at the edge of a
/// shape whose signed distance is `dist - radius`.
inline void blend(Image& img, int x, int y, double coverage, const Color& color) {
  coverage = std::clamp(coverage, 0.0, 1.0);
  if (coverage <= 0 || x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int c = 0; c < 3; ++c) {
    float& p = img.at(c, x, y);
    p = static_cast<float>((1 - coverage) * p + coverage * color[c]);
  }
}

inline double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

inline void draw_line(Image& img, Point a, Point b, double half_width, const Color& color) {
  const int x0 = static_cast<int>(std::floor(std::min(a.x, b.x) - half_width - 1));
  const int x1 = static_cast<int>(std::ceil(std::max(a.x, b.x) + half_width + 1));
  const int y0 = static_cast<int>(std::floor(std::min(a.y, b.y) - half_width - 1));
  const int y1 = static_cast<int>(std::ceil(std::max(a.y, b.y) + half_width + 1));
  for (int y = std::max(0, y0); y <= std::min(img.height - 1, y1); ++y) {
    for (int x = std::max(0, x0); x <= std::min(img.width - 1, x1); ++x) {
      const double d = segment_distance({double(x), double(y)}, a, b);
      blend(img, x, y, half_width + 0.5 - d, color);
    }
  }
}

inline void draw_circle(Image& img, Point center, double radius, double half_width, const Color& color) {
  const int r = static_cast<int>(std::ceil(radius + half_width + 1));
  const int cx = static_cast<int>(std::round(center.x)), cy = static_cast<int>(std::round(center.y));
  for (int y = std::max(0, cy - r); y <= std::min(img.height - 1, cy + r); ++y) {
    for (int x = std::max(0, cx - r); x <= std::min(img.width - 1, cx + r); ++x) {
      const double d = std::hypot(x - center.x, y - center.y);
      blend(img, x, y, half_width + 0.5 - std::abs(d - radius), color);
    }
  }
}

/// Solid square of side 2*half+1 centred on the pixel nearest to `center`.
inline void draw_marker(Image& img, Point center, int half, const Color& color) {
  const int cx = static_cast<int>(std::lround(center.x)), cy = static_cast<int>(std::lround(center.y));
  for (int y = cy - half; y <= cy + half; ++y) {
    for (int x = cx - half; x <= cx + half; ++x) blend(img, x, y, 1.0, color);
  }
}

// ---------------------------------------------------------------------------
// I/O

namespace detail {

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Image from_interleaved(const std::uint8_t* rgb, int w, int h, int channels) {
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* px = rgb + (static_cast<std::size_t>(y) * w + x) * channels;
      for (int c = 0; c < 3; ++c) img.at(c, x, y) = px[channels == 1 ? 0 : c] / 255.0f;
    }
  }
  return img;
}

inline Image decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    int v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw ImageError("malformed PNM header in '" + path + "'");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
    throw ImageError("'" + path + "' is not a binary PPM/PGM file");
  }
  const int channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const int w = number(), h = number(), maxval = number();
  if (maxval != 255 || w <= 0 || h <= 0) throw ImageError("unsupported PNM layout in '" + path + "'");
  ++pos;
  if (bytes.size() < pos + static_cast<std::size_t>(w) * h * channels) throw ImageError("truncated PNM '" + path + "'");
  return from_interleaved(bytes.data() + pos, w, h, channels);
}

}  // namespace detail

inline Image read_image(const std::string& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P') return detail::decode_pnm(bytes, path);
#ifdef PRTR_HAVE_PNG
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
      throw ImageError("cannot decode PNG '" + path + "'");
    }
    png.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
      png_image_free(&png);
      throw ImageError("cannot decode PNG '" + path + "'");
    }
    return detail::from_interleaved(buf.data(), static_cast<int>(png.width), static_cast<int>(png.height), 3);
  }
#endif
#ifdef PRTR_HAVE_JPEG
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    struct ErrorManager {
      jpeg_error_mgr pub;
      std::jmp_buf jump;
    };
    jpeg_decompress_struct cinfo{};
    ErrorManager err{};
    std::vector<std::uint8_t> buf;
    int w = 0, h = 0;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = [](j_common_ptr c) { std::longjmp(reinterpret_cast<ErrorManager*>(c->err)->jump, 1); };
    if (setjmp(err.jump)) {
      jpeg_destroy_decompress(&cinfo);
      throw ImageError("cannot decode JPEG '" + path + "'");
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    w = static_cast<int>(cinfo.output_width);
    h = static_cast<int>(cinfo.output_height);
    buf.resize(static_cast<std::size_t>(w) * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
      JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
      jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return detail::from_interleaved(buf.data(), w, h, 3);
  }
#endif
  throw ImageError("unsupported image format '" + path + "'");
}

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write '" + path + "'");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) buf[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = detail::to_byte(img.at(c, x, y));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

/// Single-channel map, values clamped to [0, 1].
inline void write_pgm(const std::string& path, const std::vector<double>& values, int width, int height) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write '" + path + "'");
  out << "P5\n" << width << " " << height << "\n255\n";
  std::vector<std::uint8_t> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) buf[i] = detail::to_byte(static_cast<float>(values[i]));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace prtr
