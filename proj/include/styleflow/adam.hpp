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

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "styleflow/autodiff.hpp"
#include "styleflow/error.hpp"

namespace styleflow::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment accumulators for a fixed list of parameters. The list passed to
// step() must keep the same order and shapes across calls.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return step_; }

  // Applies one bias-corrected Adam update. If any gradient is non-finite
  // nothing is modified and NumericError names the offending parameter.
  void step(std::span<Parameter<T>* const> params, double lr) {
    if (!(lr > 0)) throw ArgumentError("adam: learning rate must be positive");
    if (first_.empty()) {
      for (auto* p : params) {
        first_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
        second_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (first_.size() != params.size()) throw ShapeError("adam: parameter list changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto* p = params[i];
      if (p->grad.rows() != first_[i].rows() || p->grad.cols() != first_[i].cols())
        throw ShapeError("adam: gradient shape mismatch for " + p->name);
      if (!ad::all_finite(p->grad)) throw NumericError("adam: non-finite gradient in " + p->name);
    }

    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    const T alpha = static_cast<T>(lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(config_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      auto m = first_[i].array();
      auto v = second_[i].array();
      m = T(b1) * m + T(1 - b1) * p.grad.array();
      v = T(b2) * v + T(1 - b2) * p.grad.array().square();
      p.value.array() -= alpha * m / ((v * inv_c2).sqrt() + eps);
    }
  }

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::vector<Matrix<T>> first_;
  std::vector<Matrix<T>> second_;
};

}  // namespace styleflow::ad
