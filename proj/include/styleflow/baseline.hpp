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

// Reference methods scored with the same protocol as the flow: a per-pair
// least-squares PCC fit (an upper bound for PCC-expressible grades) and a
// PCA reduction of training-set style matrices.

#include <string>
#include <vector>

#include "styleflow/dataset.hpp"
#include "styleflow/image.hpp"
#include "styleflow/pcc.hpp"
#include "styleflow/training.hpp"

namespace styleflow {

inline EvalResult evaluate_pcc_oracle(const PairedFrames& frames, const std::vector<std::size_t>& indices,
                                      int degree) {
  std::vector<std::string> ids;
  std::vector<double> values;
  for (auto i : indices) {
    const auto& f = frames.frames.at(i);
    const auto m = fit_style_matrix(f.source, f.target, degree);
    values.push_back(psnr(apply_style_matrix(f.source, m), f.target));
    ids.push_back(f.id);
  }
  return summarize(std::move(ids), std::move(values));
}

inline PcaReducer fit_pca_baseline(const PairedFrames& frames, int k, int degree) {
  std::vector<StyleMatrix> matrices;
  for (auto i : frames.train)
    matrices.push_back(fit_style_matrix(frames.frames[i].source, frames.frames[i].target, degree));
  return pca_fit(matrices, k);
}

// Each test pair: fit its matrix, project onto the k components, rebuild.
inline EvalResult evaluate_pca_baseline(const PcaReducer& pca, const PairedFrames& frames,
                                        const std::vector<std::size_t>& indices) {
  std::vector<std::string> ids;
  std::vector<double> values;
  for (auto i : indices) {
    const auto& f = frames.frames.at(i);
    const auto m = pca_decode(pca, pca_encode(pca, fit_style_matrix(f.source, f.target, pca.degree)));
    values.push_back(psnr(apply_style_matrix(f.source, m), f.target));
    ids.push_back(f.id);
  }
  return summarize(std::move(ids), std::move(values));
}

}  // namespace styleflow
