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

// Synthetic paired dataset whose targets are exact degree-4 PCC mappings of
// procedural source frames. Each pair draws a latent u in [-1, 1]^k that
// sets a grading: two composed contrast curves (a, b), a white-balance
// shift (t) and a saturation change. The coefficients depend on u through
// tanh/sin/exp and products, so the style matrices lie on a curved k-dim
// manifold rather than a k-dim linear subspace.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "styleflow/dataset.hpp"
#include "styleflow/error.hpp"
#include "styleflow/image.hpp"
#include "styleflow/image_io.hpp"
#include "styleflow/pcc.hpp"

namespace styleflow {

struct SynthSpec {
  int factors = 3;  // 0..3; 0 gives one fixed mapping for every pair
  int pairs = 200;
  int width = 256;
  int height = 256;
  std::uint64_t seed = 1;
  int clusters = 0;              // > 0: latents drawn around this many centres
  double cluster_spread = 0.08;  // half-width of the jitter around a centre
};

struct SyntheticDataset {
  PairedFrames data;
  Eigen::MatrixXd latents;          // pairs x factors
  std::vector<StyleMatrix> matrices;  // ground-truth degree-4 mapping per pair
  std::vector<int> cluster_labels;  // empty unless spec.clusters > 0
};

// Ground-truth style matrix for a latent (missing coordinates are zero).
inline StyleMatrix synthetic_style_matrix(const std::array<double, 3>& u) {
  const double a = 0.9 * std::tanh(1.5 * u[0]);
  const double b = 0.8 * std::sin(1.3 * u[1] + 0.5 * u[0] * u[2]);
  const double t = u[2];
  const double gains[3] = {0.82 + 0.18 * std::exp(-(t - 1) * (t - 1)),
                           0.92 + 0.06 * std::cos(2 * t),
                           0.82 + 0.18 * std::exp(-(t + 1) * (t + 1))};
  const double uv = u[0] * u[1];
  const double k = 1.0 - 0.35 * uv * uv / (1.0 + uv * uv);

  // h_b(h_a(v)) with h_a(v) = v + a v (1 - v): coefficients of v^1..v^4.
  auto curve = [](double ca, double cb) {
    return std::array<double, 4>{(1 + ca) * (1 + cb), -ca * (1 + cb) - cb * (1 + ca) * (1 + ca),
                                 2 * ca * cb * (1 + ca), -cb * ca * ca};
  };
  const std::array<std::array<double, 4>, 3> curves = {curve(a, b), curve(0.8 * a, b),
                                                       curve(a, 0.7 * b)};

  StyleMatrix m = StyleMatrix::zero(kMaxPccDegree);
  const auto terms = pcc_monomials(kMaxPccDegree);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const int e[3] = {terms[i].r, terms[i].g, terms[i].b};
    int channel = -1, power = 0, nonzero = 0;
    for (int j = 0; j < 3; ++j) {
      if (e[j] > 0) {
        ++nonzero;
        channel = j;
        power = e[j];
      }
    }
    if (nonzero != 1) continue;  // mixed monomials stay zero
    const double h = gains[channel] * curves[channel][power - 1];
    // Saturation: out_c = k H_c + (1 - k) mean(H).
    for (int c = 0; c < 3; ++c)
      m.coefficients(static_cast<Eigen::Index>(i), c) = ((c == channel ? k : 0.0) + (1.0 - k) / 3.0) * h;
  }
  return m;
}

// Smooth random colour field with fine noise, values in [0, 1].
inline ImageBuffer procedural_frame(int width, int height, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  struct Wave {
    double fx, fy, phase, amp;
  };
  auto waves = [&](int n, double max_freq, double amp) {
    std::vector<Wave> w(n);
    for (auto& x : w) {
      x = {max_freq * (2 * unit(rng) - 1), max_freq * (2 * unit(rng) - 1), 6.283185307 * unit(rng),
           amp * (0.5 + unit(rng))};
    }
    return w;
  };
  auto eval = [](const std::vector<Wave>& w, double x, double y) {
    double s = 0;
    for (const auto& v : w) s += v.amp * std::sin(6.283185307 * (v.fx * x + v.fy * y) + v.phase);
    return s;
  };
  const auto luma = waves(4, 2.5, 1.1);
  const std::array<std::vector<Wave>, 3> chroma = {waves(3, 2.0, 0.5), waves(3, 2.0, 0.5),
                                                   waves(3, 2.0, 0.5)};
  const double exposure = 0.6 * normal(rng);
  const double noise = 0.01 + 0.02 * unit(rng);
  ImageBuffer img(width, height);
  for (int py = 0; py < height; ++py) {
    for (int px = 0; px < width; ++px) {
      const double x = static_cast<double>(px) / width, y = static_cast<double>(py) / height;
      const double l = eval(luma, x, y) + exposure;
      Rgb p;
      for (int c = 0; c < 3; ++c) {
        const double v = l + eval(chroma[c], x, y) + noise * normal(rng);
        p[c] = static_cast<float>(1.0 / (1.0 + std::exp(-1.6 * v)));
      }
      img.set(px, py, p);
    }
  }
  return img;
}

inline SyntheticDataset generate_synthetic(const SynthSpec& spec) {
  if (spec.factors < 0 || spec.factors > 3) throw ArgumentError("synth: factors must be 0..3");
  if (spec.pairs < 1) throw ArgumentError("synth: need at least one pair");
  if (spec.width < 1 || spec.height < 1) throw ArgumentError("synth: bad frame size");
  if (spec.clusters < 0) throw ArgumentError("synth: negative cluster count");

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<std::array<double, 3>> centres;
  for (int c = 0; c < spec.clusters; ++c) {
    std::array<double, 3> centre{0, 0, 0};
    for (int f = 0; f < spec.factors; ++f) centre[f] = 0.75 * unit(rng);
    centres.push_back(centre);
  }

  SyntheticDataset out;
  out.latents = Eigen::MatrixXd::Zero(spec.pairs, spec.factors);
  const auto splits = assign_splits(static_cast<std::size_t>(spec.pairs), spec.seed);
  for (int i = 0; i < spec.pairs; ++i) {
    std::array<double, 3> u{0, 0, 0};
    if (spec.clusters > 0) {
      const int label = i % spec.clusters;
      out.cluster_labels.push_back(label);
      for (int f = 0; f < spec.factors; ++f) u[f] = centres[label][f] + spec.cluster_spread * unit(rng);
    } else {
      for (int f = 0; f < spec.factors; ++f) u[f] = unit(rng);
    }
    for (int f = 0; f < spec.factors; ++f) out.latents(i, f) = u[f];
    StyleMatrix m = synthetic_style_matrix(u);

    char id[32];
    std::snprintf(id, sizeof id, "frame_%05d", i);
    FramePair pair{id, procedural_frame(spec.width, spec.height, rng), {}};
    pair.target = ImageBuffer(spec.width, spec.height);
    for (std::size_t p = 0; p < pair.source.pixel_count(); ++p) {
      Rgb v = m.map(pair.source.pixel(p));
      for (int c = 0; c < 3; ++c) v[c] = std::clamp(v[c], 0.0f, 1.0f);
      pair.target.set_pixel(p, v);
    }
    (splits[i] == Split::kTrain ? out.data.train : out.data.test).push_back(out.data.frames.size());
    out.data.frames.push_back(std::move(pair));
    out.matrices.push_back(std::move(m));
  }
  return out;
}

// Writes source/ and target/ PNGs, manifest.json, latents.csv, matrices.txt
// and (for clustered specs) clusters.csv.
inline void write_synthetic(const SyntheticDataset& ds, const std::filesystem::path& dir,
                            int bit_depth = 16) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "source");
  fs::create_directories(dir / "target");
  PairedDataset manifest;
  manifest.direction = ds.data.direction;
  std::vector<Split> split(ds.data.frames.size(), Split::kTrain);
  for (auto i : ds.data.test) split[i] = Split::kTest;
  for (std::size_t i = 0; i < ds.data.frames.size(); ++i) {
    const auto& f = ds.data.frames[i];
    const auto src = dir / "source" / (f.id + ".png");
    const auto tgt = dir / "target" / (f.id + ".png");
    save_image(f.source, src, bit_depth);
    save_image(f.target, tgt, bit_depth);
    manifest.pairs.push_back({f.id, src, tgt, split[i]});
  }
  save_manifest(manifest, dir / "manifest.json");

  std::ofstream lat(dir / "latents.csv");
  lat.precision(17);
  for (Eigen::Index i = 0; i < ds.latents.rows(); ++i) {
    lat << ds.data.frames[i].id;
    for (Eigen::Index f = 0; f < ds.latents.cols(); ++f) lat << ',' << ds.latents(i, f);
    lat << '\n';
  }
  std::ofstream mats(dir / "matrices.txt");
  for (std::size_t i = 0; i < ds.matrices.size(); ++i) {
    mats << "# pair " << ds.data.frames[i].id << '\n';
    write_style_matrix_text(mats, ds.matrices[i]);
  }
  if (!ds.cluster_labels.empty()) {
    std::ofstream cl(dir / "clusters.csv");
    for (std::size_t i = 0; i < ds.cluster_labels.size(); ++i)
      cl << ds.data.frames[i].id << ',' << ds.cluster_labels[i] << '\n';
  }
  if (!lat || !mats) throw IoError(dir.string() + ": failed writing ground truth");
}

}  // namespace styleflow
