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

// The same passes as flow.hpp, recorded on an autodiff tape for training.

#include <optional>

#include "styleflow/autodiff.hpp"
#include "styleflow/flow.hpp"

namespace styleflow {

template <typename T>
using Var = typename ad::Tape<T>::Var;

template <typename T>
struct TapedLatents {
  Var<T> z;                     // K x latent_dim
  std::optional<Var<T>> split;  // K x 1 for dim2
  Var<T> log_det;               // K x 1
};

namespace detail {

template <typename T>
Var<T> taped_subnet(ad::Tape<T>& tape, SubnetMlp<T>& net, Var<T> u1, Var<T> c, T slope) {
  Var<T> h = tape.leaky_relu(
      tape.affine({{c, tape.param(net.w1c)}, {u1, tape.param(net.w1u)}}, tape.param(net.b1)), slope);
  h = tape.leaky_relu(tape.affine({{h, tape.param(net.w2)}}, tape.param(net.b2)), slope);
  return tape.affine({{h, tape.param(net.w3)}}, tape.param(net.b3));
}

template <typename T>
Var<T> taped_log_scale(ad::Tape<T>& tape, CouplingBlock<T>& block, Var<T> u1, Var<T> c) {
  Var<T> s = taped_subnet(tape, block.s, u1, c, block.slope);
  return tape.scale(tape.tanh(tape.scale(s, T(1) / block.clamp)), block.clamp);
}

template <typename T>
std::vector<int> inverse_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t j = 0; j < perm.size(); ++j) inv[perm[j]] = static_cast<int>(j);
  return inv;
}

}  // namespace detail

// Coupling in the normalizing direction; returns (v, per-row log_det).
template <typename T>
std::pair<Var<T>, Var<T>> taped_coupling_forward(ad::Tape<T>& tape, CouplingBlock<T>& block,
                                                 Var<T> u, Var<T> c) {
  Var<T> u1 = tape.slice_cols(u, 0, block.n1);
  Var<T> u2 = tape.slice_cols(u, block.n1, block.n2);
  Var<T> s_hat = detail::taped_log_scale(tape, block, u1, c);
  Var<T> t = detail::taped_subnet(tape, block.t, u1, c, block.slope);
  Var<T> v2 = tape.add(tape.mul(u2, tape.exp(s_hat)), t);
  return {tape.concat_cols(u1, v2), tape.row_sum(s_hat)};
}

template <typename T>
Var<T> taped_coupling_inverse(ad::Tape<T>& tape, CouplingBlock<T>& block, Var<T> v, Var<T> c) {
  Var<T> v1 = tape.slice_cols(v, 0, block.n1);
  Var<T> v2 = tape.slice_cols(v, block.n1, block.n2);
  Var<T> s_hat = detail::taped_log_scale(tape, block, v1, c);
  Var<T> t = detail::taped_subnet(tape, block.t, v1, c, block.slope);
  Var<T> u2 = tape.mul(tape.sub(v2, t), tape.exp(tape.neg(s_hat)));
  return tape.concat_cols(v1, u2);
}

// `x` must already carry the augmentation channel for the dim4 variant.
template <typename T>
TapedLatents<T> taped_flow_inverse(ad::Tape<T>& tape, FlowModel<T>& model, Var<T> x, Var<T> c) {
  if (!model.actnorm_ready()) throw Error("flow: ActNorm has not been initialized");
  if (tape.value(x).cols() != model.input_width())
    throw ShapeError("taped_flow_inverse: input width mismatch");
  if (tape.value(c).cols() != model.cond_len)
    throw ShapeError("taped_flow_inverse: conditioning length mismatch");
  TapedLatents<T> r;
  Var<T> h = x;
  std::optional<Var<T>> log_det;
  const int split = model.split_after();
  for (int i = 0; i < static_cast<int>(model.blocks.size()); ++i) {
    auto& b = model.blocks[i];
    if (i == split) {
      const auto w = tape.value(h).cols();
      r.split = tape.slice_cols(h, 0, 1);
      h = tape.slice_cols(h, 1, w - 1);
    }
    auto [v, ld] = taped_coupling_forward(tape, b.coupling, h, c);
    h = tape.permute_cols(v, b.permutation);
    Var<T> ls = tape.param(b.actnorm.log_scale);
    h = tape.add(tape.mul(h, tape.exp(ls)), tape.param(b.actnorm.bias));
    ld = tape.add(ld, tape.sum(ls));
    log_det = log_det ? tape.add(*log_det, ld) : ld;
  }
  r.z = h;
  r.log_det = *log_det;
  return r;
}

// `z` must have one row per conditioning row. For dim2 `split` defaults to
// zeros. Returns all generated channels.
template <typename T>
Var<T> taped_flow_forward(ad::Tape<T>& tape, FlowModel<T>& model, Var<T> z, Var<T> c,
                          std::optional<Var<T>> split = std::nullopt) {
  if (!model.actnorm_ready()) throw Error("flow: ActNorm has not been initialized");
  if (tape.value(z).cols() != model.latent_dim())
    throw ShapeError("taped_flow_forward: latent width mismatch");
  Var<T> h = z;
  const int split_at = model.split_after();
  for (int i = static_cast<int>(model.blocks.size()) - 1; i >= 0; --i) {
    auto& b = model.blocks[i];
    h = tape.sub(h, tape.param(b.actnorm.bias));
    h = tape.mul(h, tape.exp(tape.neg(tape.param(b.actnorm.log_scale))));
    h = tape.permute_cols(h, detail::inverse_permutation<T>(b.permutation));
    h = taped_coupling_inverse(tape, b.coupling, h, c);
    if (i == split_at) {
      Var<T> s = split ? *split
                       : tape.constant(Matrix<T>::Zero(tape.value(h).rows(), 1));
      h = tape.concat_cols(s, h);
    }
  }
  return h;
}

}  // namespace styleflow
