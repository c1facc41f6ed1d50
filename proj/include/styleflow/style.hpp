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

// Style vectors: the per-frame centroid of pixel latents, and the images
// they generate. Pixels are processed in fixed chunks so results do not
// depend on the number of worker threads.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "styleflow/dataset.hpp"
#include "styleflow/error.hpp"
#include "styleflow/flow.hpp"
#include "styleflow/image.hpp"
#include "styleflow/parallel.hpp"
#include "styleflow/pcc.hpp"

namespace styleflow {

inline constexpr std::size_t kPixelChunk = 1024;

enum class Provenance { kExtracted, kManual, kZero, kInterpolated };

inline std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kExtracted: return "extracted";
    case Provenance::kManual: return "manual";
    case Provenance::kZero: return "zero";
    case Provenance::kInterpolated: return "interpolated";
  }
  return "manual";
}

inline Provenance parse_provenance(const std::string& s) {
  if (s == "extracted") return Provenance::kExtracted;
  if (s == "zero") return Provenance::kZero;
  if (s == "interpolated") return Provenance::kInterpolated;
  if (s == "manual") return Provenance::kManual;
  throw FormatError("unknown style provenance '" + s + "'");
}

struct StyleVector {
  std::vector<double> values;
  Provenance provenance = Provenance::kManual;
  std::string frame_id;  // set for extracted styles

  int dims() const { return static_cast<int>(values.size()); }

  static StyleVector zero(int dims) { return {std::vector<double>(dims, 0.0), Provenance::kZero, {}}; }

  template <typename T>
  Matrix<T> row() const {
    Matrix<T> z(1, dims());
    for (int i = 0; i < dims(); ++i) z(0, i) = static_cast<T>(values[i]);
    return z;
  }
};

inline StyleVector interpolate(const StyleVector& a, const StyleVector& b, double t) {
  if (a.dims() != b.dims()) throw ShapeError("interpolate: style dimensions differ");
  StyleVector out{std::vector<double>(a.values.size()), Provenance::kInterpolated, {}};
  for (std::size_t i = 0; i < a.values.size(); ++i)
    out.values[i] = (1 - t) * a.values[i] + t * b.values[i];
  return out;
}

inline double distance(const StyleVector& a, const StyleVector& b) {
  if (a.dims() != b.dims()) throw ShapeError("distance: style dimensions differ");
  double s = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  return std::sqrt(s);
}

// PCC basis of every source pixel. Independent of the style, so it is
// computed once per image and reused for every rendering.
template <typename T = float>
struct Conditioning {
  int degree = 0;
  int width = 0;
  int height = 0;
  Matrix<T> basis;  // pixels x basis_len

  std::size_t pixel_count() const { return static_cast<std::size_t>(basis.rows()); }
};

template <typename T = float>
Conditioning<T> make_conditioning(const ImageBuffer& source, int degree) {
  return {degree, source.width(), source.height(), pcc_basis_matrix<T>(source, degree)};
}

namespace detail {

template <typename T>
Matrix<T> pixel_rows(const ImageBuffer& img, std::size_t lo, std::size_t hi) {
  Matrix<T> x(static_cast<Eigen::Index>(hi - lo), 3);
  for (int c = 0; c < 3; ++c) {
    const float* p = img.plane(c);
    for (std::size_t i = lo; i < hi; ++i) x(static_cast<Eigen::Index>(i - lo), c) = static_cast<T>(p[i]);
  }
  return x;
}

template <typename T>
void check_conditioning(const FlowModel<T>& model, const Conditioning<T>& cond) {
  if (cond.degree != model.config.degree)
    throw ShapeError("conditioning degree " + std::to_string(cond.degree) + " does not match model degree " +
                     std::to_string(model.config.degree));
}

}  // namespace detail

// Centroid of the per-pixel latents of `target` conditioned on `source`
// (augmentation channel at zero, split-off channel ignored).
template <typename T>
StyleVector extract_style(const FlowModel<T>& model, const Conditioning<T>& cond,
                          const ImageBuffer& target, std::string frame_id = {}) {
  detail::check_conditioning(model, cond);
  if (cond.width != target.width() || cond.height != target.height())
    throw ShapeError("extract_style: source and target sizes differ");
  if (!model.actnorm_ready()) throw Error("extract_style: model is not initialized");
  const std::size_t n = target.pixel_count();
  const std::size_t chunks = (n + kPixelChunk - 1) / kPixelChunk;
  const int d = model.latent_dim();
  std::vector<double> partial(chunks * d, 0.0);
  parallel_for(0, n, kPixelChunk, [&](std::size_t lo, std::size_t hi) {
    const Matrix<T> x = detail::pixel_rows<T>(target, lo, hi);
    const Matrix<T> c = cond.basis.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo));
    const auto r = flow_inverse(model, x, c);
    double* acc = partial.data() + (lo / kPixelChunk) * d;
    for (Eigen::Index i = 0; i < r.z.rows(); ++i)
      for (int j = 0; j < d; ++j) acc[j] += static_cast<double>(r.z(i, j));
  });
  StyleVector s{std::vector<double>(d, 0.0), Provenance::kExtracted, std::move(frame_id)};
  for (std::size_t k = 0; k < chunks; ++k)
    for (int j = 0; j < d; ++j) s.values[j] += partial[k * d + j];
  for (double& v : s.values) v /= static_cast<double>(n);
  return s;
}

template <typename T>
StyleVector extract_style(const FlowModel<T>& model, const ImageBuffer& source,
                          const ImageBuffer& target, std::string frame_id = {}) {
  if (!source.same_size(target)) throw ShapeError("extract_style: source and target sizes differ");
  return extract_style(model, make_conditioning<T>(source, model.config.degree), target,
                       std::move(frame_id));
}

// Renders every pixel with the same latent; output clamped to [0, 1].
template <typename T>
ImageBuffer apply_style(const FlowModel<T>& model, const Conditioning<T>& cond,
                        const StyleVector& style) {
  detail::check_conditioning(model, cond);
  if (style.dims() != model.latent_dim())
    throw ShapeError("apply_style: style has " + std::to_string(style.dims()) + " dims, model expects " +
                     std::to_string(model.latent_dim()));
  ImageBuffer out(cond.width, cond.height);
  const Matrix<T> z = style.row<T>();
  parallel_for(0, cond.pixel_count(), kPixelChunk, [&](std::size_t lo, std::size_t hi) {
    const Matrix<T> c = cond.basis.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo));
    const Matrix<T> x = flow_forward(model, z, c);
    for (int ch = 0; ch < 3; ++ch) {
      float* p = out.plane(ch);
      for (std::size_t i = lo; i < hi; ++i)
        p[i] = std::clamp(static_cast<float>(x(static_cast<Eigen::Index>(i - lo), ch)), 0.0f, 1.0f);
    }
  });
  return out;
}

template <typename T>
ImageBuffer apply_style(const FlowModel<T>& model, const ImageBuffer& source, const StyleVector& style) {
  return apply_style(model, make_conditioning<T>(source, model.config.degree), style);
}

// --- grids ------------------------------------------------------------------

struct GridSpec {
  int resolution = 5;
  int axis_x = 0;
  int axis_y = 1;
  double range = 2.0;                 // offsets span [-range, +range]
  std::optional<StyleVector> center;  // defaults to the zero style
  int thumbnail_width = 0;            // 0 renders at source resolution
};

// Tiles are row-major: tile (row, col) sits at index row * resolution + col.
// Columns step axis_x and rows step axis_y from -range to +range around the
// centre; the other coordinates keep the centre's values.
struct StyleGrid {
  int resolution = 0;
  int axis_x = 0;
  int axis_y = 1;
  std::vector<StyleVector> points;
  std::vector<ImageBuffer> tiles;

  const ImageBuffer& tile(int row, int col) const { return tiles.at(row * resolution + col); }
  const StyleVector& point(int row, int col) const { return points.at(row * resolution + col); }
};

inline double grid_offset(int index, int resolution, double range) {
  if (resolution == 1) return 0.0;
  return -range + 2.0 * range * index / (resolution - 1);
}

template <typename T>
StyleGrid style_grid(const FlowModel<T>& model, const ImageBuffer& source, const GridSpec& spec) {
  const int d = model.latent_dim();
  if (spec.resolution < 1) throw ArgumentError("style_grid: resolution must be positive");
  if (spec.axis_x < 0 || spec.axis_x >= d || spec.axis_y < 0 || spec.axis_y >= d ||
      spec.axis_x == spec.axis_y)
    throw ArgumentError("style_grid: invalid slice axes for a " + std::to_string(d) + "-d latent");
  if (!(spec.range >= 0)) throw ArgumentError("style_grid: negative range");
  const StyleVector center = spec.center.value_or(StyleVector::zero(d));
  if (center.dims() != d) throw ShapeError("style_grid: centre has the wrong dimension");

  const ImageBuffer base =
      spec.thumbnail_width > 0 && spec.thumbnail_width < source.width()
          ? resize_nearest(source, spec.thumbnail_width,
                           std::max(1, source.height() * spec.thumbnail_width / source.width()))
          : source;
  const auto cond = make_conditioning<T>(base, model.config.degree);
  StyleGrid grid{spec.resolution, spec.axis_x, spec.axis_y, {}, {}};
  for (int r = 0; r < spec.resolution; ++r) {
    for (int c = 0; c < spec.resolution; ++c) {
      StyleVector p = center;
      p.values[spec.axis_x] += grid_offset(c, spec.resolution, spec.range);
      p.values[spec.axis_y] += grid_offset(r, spec.resolution, spec.range);
      const bool moved = grid_offset(c, spec.resolution, spec.range) != 0.0 ||
                         grid_offset(r, spec.resolution, spec.range) != 0.0;
      if (moved) {
        p.provenance = Provenance::kManual;
        p.frame_id.clear();
      }
      grid.tiles.push_back(apply_style(model, cond, p));
      grid.points.push_back(std::move(p));
    }
  }
  return grid;
}

// Mosaic of all tiles, for a quick look.
inline ImageBuffer grid_mosaic(const StyleGrid& grid) {
  const int tw = grid.tiles.front().width(), th = grid.tiles.front().height();
  ImageBuffer out(tw * grid.resolution, th * grid.resolution);
  for (int r = 0; r < grid.resolution; ++r)
    for (int c = 0; c < grid.resolution; ++c)
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x) out.set(c * tw + x, r * th + y, grid.tile(r, c).at(x, y));
  return out;
}

// --- dataset maps -----------------------------------------------------------

struct StyleEntry {
  std::string frame_id;
  StyleVector style;
};

template <typename T>
std::vector<StyleEntry> dataset_style_map(const FlowModel<T>& model, const PairedFrames& frames,
                                          const std::vector<std::size_t>& indices) {
  std::vector<StyleEntry> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const auto& f = frames.frames.at(i);
    out.push_back({f.id, extract_style(model, f.source, f.target, f.id)});
  }
  return out;
}

template <typename T>
std::vector<StyleEntry> dataset_style_map(const FlowModel<T>& model, const PairedFrames& frames) {
  return dataset_style_map(model, frames, frames.all());
}

// --- structured text --------------------------------------------------------

// {"format": "styleflow-style", "version": 1, "model_id": ..., "dims": n,
//  "values": [...], "provenance": ..., "frame_id": ...}
inline nlohmann::json style_to_json(const StyleVector& s, const std::string& model_id) {
  nlohmann::json j = {{"format", "styleflow-style"}, {"version", 1}, {"model_id", model_id},
                      {"dims", s.dims()}, {"values", s.values},
                      {"provenance", provenance_name(s.provenance)}};
  if (!s.frame_id.empty()) j["frame_id"] = s.frame_id;
  return j;
}

inline StyleVector style_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "styleflow-style") throw FormatError("style record: bad format tag");
    if (j.value("version", 0) != 1) throw FormatError("style record: unsupported version");
    StyleVector s;
    s.values = j.at("values").get<std::vector<double>>();
    if (j.at("dims").get<int>() != s.dims()) throw FormatError("style record: dims disagree with values");
    s.provenance = parse_provenance(j.value("provenance", "manual"));
    s.frame_id = j.value("frame_id", "");
    for (double v : s.values)
      if (!std::isfinite(v)) throw FormatError("style record: non-finite value");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("style record: ") + e.what());
  }
}

inline nlohmann::json style_map_to_json(const std::vector<StyleEntry>& entries, const std::string& model_id) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) arr.push_back({{"frame_id", e.frame_id}, {"values", e.style.values}});
  return {{"format", "styleflow-stylemap"}, {"version", 1}, {"model_id", model_id},
          {"dims", entries.empty() ? 0 : entries.front().style.dims()}, {"styles", arr}};
}

inline std::vector<StyleEntry> style_map_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "styleflow-stylemap") throw FormatError("stylemap: bad format tag");
    std::vector<StyleEntry> out;
    for (const auto& e : j.at("styles")) {
      StyleEntry s;
      s.frame_id = e.at("frame_id").get<std::string>();
      s.style = {e.at("values").get<std::vector<double>>(), Provenance::kExtracted, s.frame_id};
      out.push_back(std::move(s));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("stylemap: ") + e.what());
  }
}

}  // namespace styleflow
