// Copyright 2026 The styleflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "styleflow/error.hpp"

namespace styleflow {

struct Rgb {
  float r = 0, g = 0, b = 0;

  float operator[](int c) const { return c == 0 ? r : (c == 1 ? g : b); }
  float& operator[](int c) { return c == 0 ? r : (c == 1 ? g : b); }
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Planar RGB frame of display-encoded values.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, float fill = 0.0f) : width_(width), height_(height) {
    if (width <= 0 || height <= 0)
      throw ArgumentError("image: dimensions must be positive, got " + std::to_string(width) +
                          "x" + std::to_string(height));
    data_.assign(static_cast<std::size_t>(width) * height * 3, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  float* plane(int c) { return data_.data() + c * pixel_count(); }
  const float* plane(int c) const { return data_.data() + c * pixel_count(); }
  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  Rgb pixel(std::size_t i) const {
    const std::size_t n = pixel_count();
    return {data_[i], data_[n + i], data_[2 * n + i]};
  }
  void set_pixel(std::size_t i, const Rgb& p) {
    const std::size_t n = pixel_count();
    data_[i] = p.r;
    data_[n + i] = p.g;
    data_[2 * n + i] = p.b;
  }
  Rgb at(int x, int y) const { return pixel(static_cast<std::size_t>(y) * width_ + x); }
  void set(int x, int y, const Rgb& p) { set_pixel(static_cast<std::size_t>(y) * width_ + x, p); }

  void clamp01() {
    for (float& v : data_) v = std::clamp(v, 0.0f, 1.0f);
  }

  bool same_size(const ImageBuffer& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

// Nearest-neighbour resample, used for thumbnails.
inline ImageBuffer resize_nearest(const ImageBuffer& src, int width, int height) {
  ImageBuffer out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(src.height() - 1, y * src.height() / height);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(src.width() - 1, x * src.width() / width);
      out.set(x, y, src.at(sx, sy));
    }
  }
  return out;
}

// --- transfer functions ---------------------------------------------------

// IEC 61966-2-1 sRGB curve.
inline double srgb_encode(double linear) {
  if (!(linear >= 0.0)) throw ArgumentError("srgb_encode: negative input");
  return linear <= 0.0031308 ? 12.92 * linear : 1.055 * std::pow(linear, 1.0 / 2.4) - 0.055;
}

inline double srgb_decode(double encoded) {
  if (!(encoded >= 0.0)) throw ArgumentError("srgb_decode: negative input");
  return encoded <= 0.04045 ? encoded / 12.92 : std::pow((encoded + 0.055) / 1.055, 2.4);
}

// SMPTE ST 2084 perceptual quantizer. `luminance` is absolute luminance
// divided by 10000 cd/m^2.
namespace pq {
inline constexpr double kM1 = 2610.0 / 16384.0;
inline constexpr double kM2 = 2523.0 / 4096.0 * 128.0;
inline constexpr double kC1 = 3424.0 / 4096.0;
inline constexpr double kC2 = 2413.0 / 4096.0 * 32.0;
inline constexpr double kC3 = 2392.0 / 4096.0 * 32.0;
}  // namespace pq

inline double pq_encode(double luminance) {
  if (!(luminance >= 0.0 && luminance <= 1.0)) throw ArgumentError("pq_encode: input outside [0,1]");
  const double ym = std::pow(luminance, pq::kM1);
  return std::pow((pq::kC1 + pq::kC2 * ym) / (1.0 + pq::kC3 * ym), pq::kM2);
}

inline double pq_decode(double encoded) {
  if (!(encoded >= 0.0 && encoded <= 1.0)) throw ArgumentError("pq_decode: input outside [0,1]");
  const double e = std::pow(encoded, 1.0 / pq::kM2);
  const double num = std::max(e - pq::kC1, 0.0);
  return std::pow(num / (pq::kC2 - pq::kC3 * e), 1.0 / pq::kM1);
}

// --- metrics --------------------------------------------------------------

inline double mean_squared_error(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_size(b))
    throw ShapeError("psnr: image sizes differ (" + std::to_string(a.width()) + "x" +
                     std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                     std::to_string(b.height()) + ")");
  double acc = 0.0;
  const auto& da = a.data();
  const auto& db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - static_cast<double>(db[i]);
    acc += d * d;
  }
  return da.empty() ? 0.0 : acc / static_cast<double>(da.size());
}

inline double psnr_from_mse(double mse, double peak = 1.0) {
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

// 10 log10(peak^2 / MSE) over all channels. Identical images give +inf.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b, double peak = 1.0) {
  return psnr_from_mse(mean_squared_error(a, b), peak);
}

inline bool is_identical(double psnr_db) { return std::isinf(psnr_db) && psnr_db > 0; }

// PSNR after mapping both (linear, normalized) images through the PQ curve.
// Reported as "PQ-PSNR"; a stand-in for perceptually uniform HDR metrics.
inline double pq_psnr_linear(const ImageBuffer& a, const ImageBuffer& b) {
  auto encode = [](const ImageBuffer& img) {
    ImageBuffer out = img;
    for (float& v : out.data()) v = static_cast<float>(pq_encode(std::clamp<double>(v, 0.0, 1.0)));
    return out;
  };
  return psnr(encode(a), encode(b));
}

}  // namespace styleflow
