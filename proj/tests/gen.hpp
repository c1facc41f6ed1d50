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

// Seeded generators for property tests.

#include <cstdint>
#include <random>
#include <vector>

#include "styleflow/flow.hpp"
#include "styleflow/image.hpp"
#include "styleflow/pcc.hpp"

namespace styleflow::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  Rgb pixel() {
    return {static_cast<float>(uniform()), static_cast<float>(uniform()), static_cast<float>(uniform())};
  }

  template <typename T>
  ad::Matrix<T> matrix(Eigen::Index rows, Eigen::Index cols, double lo = -1.0, double hi = 1.0) {
    ad::Matrix<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(uniform(lo, hi));
    return m;
  }

  template <typename T>
  ad::Matrix<T> pixels(Eigen::Index rows) {
    return matrix<T>(rows, 3, 0.0, 1.0);
  }

  // PCC conditioning rows built from random source pixels.
  template <typename T>
  ad::Matrix<T> conditioning(Eigen::Index rows, int degree) {
    ad::Matrix<T> c(rows, pcc_basis_length(degree));
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Rgb p = pixel();
      pcc_basis_row(p.r, p.g, p.b, degree, c, i);
    }
    return c;
  }

  ImageBuffer image(int w, int h) {
    ImageBuffer img(w, h);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) img.set_pixel(i, pixel());
    return img;
  }

  // Every weight, including the zero-initialized heads, set to random values
  // of scale `sd` so the model is far from the identity.
  template <typename T>
  void randomize(FlowModel<T>& model, double sd = 0.3) {
    for (auto* p : model.parameters())
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<T>(normal(sd));
    for (auto& b : model.blocks) b.actnorm.initialized = true;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

template <typename T>
FlowModel<T> random_model(Variant v, int degree, int hidden, int blocks, std::uint64_t seed, double sd = 0.3) {
  FlowConfig cfg;
  cfg.variant = v;
  cfg.degree = degree;
  cfg.hidden_width = hidden;
  cfg.blocks = blocks;
  cfg.seed = seed;
  auto m = build_model<T>(cfg);
  Gen g(seed + 1000);
  g.randomize(m, sd);
  return m;
}

}  // namespace styleflow::testing
