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

// PNG read/write for 8- and 16-bit RGB(A)/grey rasters. Values are scaled to
// [0, 1]; alpha is discarded and grey is replicated to RGB.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "styleflow/error.hpp"
#include "styleflow/image.hpp"

namespace styleflow {

struct LoadedImage {
  ImageBuffer image;
  int bit_depth = 8;
};

namespace detail {

struct PngReadBuffer {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t offset;
};

inline void png_error_handler(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

inline void png_warning_handler(png_structp, png_const_charp) {}

inline void png_read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + n > buf->size) png_error(png, "unexpected end of data");
  std::memcpy(out, buf->data + buf->offset, n);
  buf->offset += n;
}

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

inline void png_flush_noop(png_structp) {}

inline LoadedImage decode_png_impl(const std::uint8_t* data, std::size_t size,
                                   const std::string& label) {
  if (size < 8 || png_sig_cmp(data, 0, 8) != 0) throw FormatError(label + ": not a PNG file");
  std::string what;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &what, png_error_handler,
                                           png_warning_handler);
  if (!png) throw IoError(label + ": png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  PngReadBuffer buf{data, size, 0};
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> pixels;
  png_uint_32 width = 0, height = 0;
  int depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(label + ": " + what);
  }
  png_set_read_fn(png, &buf, png_read_from_memory);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // native little-endian uint16
  png_read_update_info(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  LoadedImage out{ImageBuffer(static_cast<int>(width), static_cast<int>(height)),
                  out_depth == 16 ? 16 : 8};
  const std::size_t n = out.image.pixel_count();
  float* planes[3] = {out.image.plane(0), out.image.plane(1), out.image.plane(2)};
  for (png_uint_32 y = 0; y < height; ++y) {
    for (png_uint_32 x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      for (int c = 0; c < 3; ++c) {
        float v;
        if (out_depth == 16) {
          std::uint16_t s;
          std::memcpy(&s, rows[y] + (x * 3 + c) * 2, 2);
          v = static_cast<float>(s) / 65535.0f;
        } else {
          v = static_cast<float>(rows[y][x * 3 + c]) / 255.0f;
        }
        planes[c][i] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  (void)n;
  return out;
}

}  // namespace detail

inline LoadedImage decode_png(const std::vector<std::uint8_t>& bytes,
                              const std::string& label = "png") {
  return detail::decode_png_impl(bytes.data(), bytes.size(), label);
}

inline LoadedImage decode_png(std::string_view bytes, const std::string& label = "png") {
  return detail::decode_png_impl(reinterpret_cast<const std::uint8_t*>(bytes.data()),
                                 bytes.size(), label);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.string().c_str(), "rb"),
                                                    &std::fclose);
  if (!f) throw IoError(path.string() + ": cannot open");
  std::vector<std::uint8_t> bytes;
  std::uint8_t chunk[1 << 16];
  std::size_t n;
  while ((n = std::fread(chunk, 1, sizeof chunk, f.get())) > 0) bytes.insert(bytes.end(), chunk, chunk + n);
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.string().c_str(), "wb"),
                                                    &std::fclose);
  if (!f) throw IoError(path.string() + ": cannot open for writing");
  if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
    throw IoError(path.string() + ": short write");
}

inline LoadedImage load_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  std::string lower(ext.size(), '\0');
  std::transform(ext.begin(), ext.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (lower != ".png") throw FormatError(path.string() + ": unsupported format (expected .png)");
  return decode_png(read_file_bytes(path), path.string());
}

// Encodes to PNG; values are clamped to [0, 1] and rounded.
inline std::vector<std::uint8_t> encode_png(const ImageBuffer& image, int bit_depth = 16) {
  if (bit_depth != 8 && bit_depth != 16) throw ArgumentError("encode_png: bit depth must be 8 or 16");
  if (image.empty()) throw ArgumentError("encode_png: empty image");
  const int w = image.width(), h = image.height();
  const std::size_t bpc = bit_depth / 8;
  const std::size_t rowbytes = static_cast<std::size_t>(w) * 3 * bpc;
  std::vector<std::uint8_t> pixels(rowbytes * h);
  const float maxv = bit_depth == 16 ? 65535.0f : 255.0f;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Rgb p = image.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const auto q = static_cast<std::uint32_t>(std::lround(std::clamp(p[c], 0.0f, 1.0f) * maxv));
        std::uint8_t* dst = pixels.data() + y * rowbytes + (x * 3 + c) * bpc;
        if (bit_depth == 16) {
          dst[0] = static_cast<std::uint8_t>(q >> 8);  // PNG is big-endian
          dst[1] = static_cast<std::uint8_t>(q & 0xff);
        } else {
          dst[0] = static_cast<std::uint8_t>(q);
        }
      }
    }
  }

  std::vector<std::uint8_t> out;
  std::string what;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &what,
                                            detail::png_error_handler, detail::png_warning_handler);
  if (!png) throw IoError("encode_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(h);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("encode_png: " + what);
  }
  png_set_write_fn(png, &out, detail::png_write_to_vector, detail::png_flush_noop);
  png_set_IHDR(png, info, w, h, bit_depth, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 3);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + y * rowbytes;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline void save_image(const ImageBuffer& image, const std::filesystem::path& path,
                       int bit_depth = 16) {
  write_file_bytes(path, encode_png(image, bit_depth));
}

}  // namespace styleflow
