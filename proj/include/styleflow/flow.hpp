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

// Conditional invertible network over single pixels. The network is stored
// in the normalizing direction (pixel -> latent): each block applies an
// affine coupling conditioned on the pixel's PCC basis, a fixed channel
// permutation, then ActNorm. flow_inverse() runs the blocks in that order;
// flow_forward() undoes them to generate a pixel from a style latent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "styleflow/autodiff.hpp"
#include "styleflow/error.hpp"
#include "styleflow/pcc.hpp"

namespace styleflow {

template <typename T>
using Matrix = ad::Matrix<T>;
template <typename T>
using ColumnVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Variant {
  kDim2Split,      // one channel split off after half of the blocks
  kDim3,           // latent has the pixel's dimensionality
  kDim4Augmented,  // pixel augmented with one N(0, 1) channel
};

inline int latent_dim(Variant v) {
  switch (v) {
    case Variant::kDim2Split: return 2;
    case Variant::kDim3: return 3;
    case Variant::kDim4Augmented: return 4;
  }
  return 0;
}

inline int input_width(Variant v) { return v == Variant::kDim4Augmented ? 4 : 3; }

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kDim2Split: return "dim2_split";
    case Variant::kDim3: return "dim3";
    case Variant::kDim4Augmented: return "dim4_augmented";
  }
  return "unknown";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "2" || s == "dim2_split") return Variant::kDim2Split;
  if (s == "3" || s == "dim3") return Variant::kDim3;
  if (s == "4" || s == "dim4_augmented") return Variant::kDim4Augmented;
  throw ArgumentError("unknown variant '" + s + "' (expected 2, 3 or 4)");
}

struct FlowConfig {
  Variant variant = Variant::kDim3;
  int degree = 4;
  int hidden_width = 28;
  int blocks = 8;
  double clamp = 2.0;         // soft bound on coupling log-scales
  double leaky_slope = 0.01;  // subnet nonlinearity
  std::uint64_t seed = 0;
};

// Two hidden layers plus a linear head. The first layer's weight is kept as
// two blocks so the conditioning part never needs a gradient:
//   h1 = act(u1 W1u + c W1c + b1), h2 = act(h1 W2 + b2), out = h2 W3 + b3.
template <typename T>
struct SubnetMlp {
  ad::Parameter<T> w1u, w1c, b1, w2, b2, w3, b3;

  std::vector<ad::Parameter<T>*> parameters() { return {&w1u, &w1c, &b1, &w2, &b2, &w3, &b3}; }
  std::vector<const ad::Parameter<T>*> parameters() const {
    return {&w1u, &w1c, &b1, &w2, &b2, &w3, &b3};
  }
  int outputs() const { return static_cast<int>(w3.value.cols()); }
};

template <typename T>
struct CouplingBlock {
  int n1 = 0;  // passed through
  int n2 = 0;  // transformed
  T clamp = T(2);
  T slope = T(0.01);
  SubnetMlp<T> s, t;

  int width() const { return n1 + n2; }
};

template <typename T>
struct ActNormLayer {
  ad::Parameter<T> log_scale;  // 1 x width, scale = exp(log_scale)
  ad::Parameter<T> bias;       // 1 x width
  bool initialized = false;
};

template <typename T>
struct InvertibleBlock {
  CouplingBlock<T> coupling;
  std::vector<int> permutation;  // out[:, j] = in[:, permutation[j]]
  ActNormLayer<T> actnorm;

  int width() const { return coupling.width(); }
};

template <typename T>
struct FlowModel {
  FlowConfig config;
  int cond_len = 0;
  std::vector<InvertibleBlock<T>> blocks;

  Variant variant() const { return config.variant; }
  int latent_dim() const { return styleflow::latent_dim(config.variant); }
  int input_width() const { return styleflow::input_width(config.variant); }
  // Index of the first block after the split (dim2 only).
  int split_after() const {
    return config.variant == Variant::kDim2Split ? static_cast<int>(blocks.size()) / 2 : -1;
  }

  bool actnorm_ready() const {
    return std::all_of(blocks.begin(), blocks.end(),
                       [](const auto& b) { return b.actnorm.initialized; });
  }

  std::vector<ad::Parameter<T>*> parameters() {
    std::vector<ad::Parameter<T>*> out;
    for (auto& b : blocks) {
      for (auto* p : b.coupling.s.parameters()) out.push_back(p);
      for (auto* p : b.coupling.t.parameters()) out.push_back(p);
      out.push_back(&b.actnorm.log_scale);
      out.push_back(&b.actnorm.bias);
    }
    return out;
  }
  std::vector<const ad::Parameter<T>*> parameters() const {
    std::vector<const ad::Parameter<T>*> out;
    for (auto* p : const_cast<FlowModel*>(this)->parameters()) out.push_back(p);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  template <typename U>
  FlowModel<U> cast() const {
    FlowModel<U> out;
    out.config = config;
    out.cond_len = cond_len;
    for (const auto& b : blocks) {
      InvertibleBlock<U> nb;
      nb.coupling.n1 = b.coupling.n1;
      nb.coupling.n2 = b.coupling.n2;
      nb.coupling.clamp = static_cast<U>(b.coupling.clamp);
      nb.coupling.slope = static_cast<U>(b.coupling.slope);
      nb.permutation = b.permutation;
      nb.actnorm.initialized = b.actnorm.initialized;
      out.blocks.push_back(std::move(nb));
    }
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i)
      *dst[i] = ad::Parameter<U>(src[i]->name, src[i]->value.template cast<U>());
    return out;
  }
};

// --- construction -----------------------------------------------------------

namespace detail {

template <typename T>
ad::Parameter<T> kaiming(const std::string& name, int rows, int cols, int fan_in,
                         std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return {name, std::move(m)};
}

template <typename T>
ad::Parameter<T> zeros(const std::string& name, int rows, int cols) {
  return {name, Matrix<T>::Zero(rows, cols)};
}

template <typename T>
SubnetMlp<T> make_subnet(const std::string& name, int in_u, int in_c, int hidden, int out,
                         std::mt19937_64& rng) {
  SubnetMlp<T> net;
  const int fan_in = in_u + in_c;
  net.w1u = kaiming<T>(name + ".w1u", in_u, hidden, fan_in, rng);
  net.w1c = kaiming<T>(name + ".w1c", in_c, hidden, fan_in, rng);
  net.b1 = zeros<T>(name + ".b1", 1, hidden);
  net.w2 = kaiming<T>(name + ".w2", hidden, hidden, hidden, rng);
  net.b2 = zeros<T>(name + ".b2", 1, hidden);
  // Zero head: a fresh coupling is the identity map.
  net.w3 = zeros<T>(name + ".w3", hidden, out);
  net.b3 = zeros<T>(name + ".b3", 1, out);
  return net;
}

inline std::vector<int> random_permutation(int width, std::mt19937_64& rng) {
  std::vector<int> perm(width);
  for (int i = 0; i < width; ++i) perm[i] = i;
  if (width < 2) return perm;
  auto is_identity = [&] {
    for (int i = 0; i < width; ++i)
      if (perm[i] != i) return false;
    return true;
  };
  do {
    std::shuffle(perm.begin(), perm.end(), rng);
  } while (is_identity());
  return perm;
}

}  // namespace detail

// Builds an untrained model. Couplings start as the identity and ActNorm is
// left uninitialized (see initialize_actnorm / set_actnorm_identity).
template <typename T = float>
FlowModel<T> build_model(const FlowConfig& config) {
  check_degree(config.degree);
  if (config.hidden_width < 4) throw ArgumentError("build_model: hidden width must be >= 4");
  if (config.blocks < 1) throw ArgumentError("build_model: need at least one block");
  if (config.variant == Variant::kDim2Split && config.blocks < 2)
    throw ArgumentError("build_model: the split variant needs at least two blocks");
  if (!(config.clamp > 0)) throw ArgumentError("build_model: clamp must be positive");
  if (!(config.leaky_slope >= 0 && config.leaky_slope < 1))
    throw ArgumentError("build_model: leaky slope must be in [0, 1)");

  FlowModel<T> model;
  model.config = config;
  model.cond_len = pcc_basis_length(config.degree);
  std::mt19937_64 rng(config.seed);
  const int split = config.variant == Variant::kDim2Split ? config.blocks / 2 : -1;
  for (int i = 0; i < config.blocks; ++i) {
    int width = input_width(config.variant);
    if (split >= 0 && i >= split) width = 2;
    InvertibleBlock<T> block;
    auto& cp = block.coupling;
    cp.n1 = width / 2;
    cp.n2 = width - cp.n1;
    cp.clamp = static_cast<T>(config.clamp);
    cp.slope = static_cast<T>(config.leaky_slope);
    const std::string prefix = "block" + std::to_string(i);
    cp.s = detail::make_subnet<T>(prefix + ".s", cp.n1, model.cond_len, config.hidden_width,
                                  cp.n2, rng);
    cp.t = detail::make_subnet<T>(prefix + ".t", cp.n1, model.cond_len, config.hidden_width,
                                  cp.n2, rng);
    block.permutation = detail::random_permutation(width, rng);
    block.actnorm.log_scale = detail::zeros<T>(prefix + ".actnorm.log_scale", 1, width);
    block.actnorm.bias = detail::zeros<T>(prefix + ".actnorm.bias", 1, width);
    model.blocks.push_back(std::move(block));
  }
  return model;
}

// Parameter count of build_model(config) without building it.
inline std::size_t expected_parameter_count(const FlowConfig& config) {
  const int L = pcc_basis_length(config.degree);
  const int H = config.hidden_width;
  const int split = config.variant == Variant::kDim2Split ? config.blocks / 2 : -1;
  std::size_t total = 0;
  for (int i = 0; i < config.blocks; ++i) {
    int width = input_width(config.variant);
    if (split >= 0 && i >= split) width = 2;
    const int n1 = width / 2, n2 = width - n1;
    const std::size_t subnet = static_cast<std::size_t>((n1 + L) * H + H + H * H + H + H * n2 + n2);
    total += 2 * subnet + 2 * static_cast<std::size_t>(width);
  }
  return total;
}

template <typename T>
void set_actnorm_identity(FlowModel<T>& model) {
  for (auto& b : model.blocks) {
    b.actnorm.log_scale.value.setZero();
    b.actnorm.bias.value.setZero();
    b.actnorm.initialized = true;
  }
}

// --- batched evaluation (no gradients) --------------------------------------

template <typename T>
Matrix<T> subnet_eval(const SubnetMlp<T>& net, const Matrix<T>& u1, const Matrix<T>& c, T slope) {
  // slope is in [0, 1), so max(h, slope * h) is the leaky ReLU.
  Matrix<T> h1(u1.rows(), net.w1c.value.cols());
  h1.noalias() = c * net.w1c.value;
  h1.noalias() += u1 * net.w1u.value;
  h1.rowwise() += net.b1.value.row(0);
  h1 = h1.cwiseMax(slope * h1);
  Matrix<T> h2(u1.rows(), net.w2.value.cols());
  h2.noalias() = h1 * net.w2.value;
  h2.rowwise() += net.b2.value.row(0);
  h2 = h2.cwiseMax(slope * h2);
  Matrix<T> out(u1.rows(), net.w3.value.cols());
  out.noalias() = h2 * net.w3.value;
  out.rowwise() += net.b3.value.row(0);
  return out;
}

template <typename T>
Matrix<T> permute_columns(const Matrix<T>& m, const std::vector<int>& perm) {
  Matrix<T> out(m.rows(), m.cols());
  for (std::size_t j = 0; j < perm.size(); ++j) out.col(j) = m.col(perm[j]);
  return out;
}

template <typename T>
Matrix<T> unpermute_columns(const Matrix<T>& m, const std::vector<int>& perm) {
  Matrix<T> out(m.rows(), m.cols());
  for (std::size_t j = 0; j < perm.size(); ++j) out.col(perm[j]) = m.col(j);
  return out;
}

namespace detail {

// In-place coupling on h; adds the per-row log-det of the applied map.
template <typename T>
void coupling_inplace(const CouplingBlock<T>& block, Matrix<T>& h, const Matrix<T>& c, bool inverse,
                      ColumnVector<T>& log_det) {
  const Matrix<T> u1 = h.leftCols(block.n1);
  const T k = block.clamp;
  Matrix<T> s_hat = subnet_eval(block.s, u1, c, block.slope);
  s_hat = (k * (s_hat.array() / k).tanh()).matrix();
  const Matrix<T> t = subnet_eval(block.t, u1, c, block.slope);
  auto u2 = h.rightCols(block.n2);
  if (inverse) {
    u2.array() = (u2.array() - t.array()) * (-s_hat.array()).exp();
    log_det -= s_hat.rowwise().sum();
  } else {
    u2.array() = u2.array() * s_hat.array().exp() + t.array();
    log_det += s_hat.rowwise().sum();
  }
  if (!ad::all_finite(u2))
    throw NumericError(inverse ? "coupling_inverse: non-finite output" : "coupling_forward: non-finite output");
}

}  // namespace detail

template <typename T>
struct CouplingResult {
  Matrix<T> out;
  ColumnVector<T> log_det;  // per row
};

namespace detail {

template <typename T>
void check_coupling_inputs(const CouplingBlock<T>& block, const Matrix<T>& u, const Matrix<T>& c) {
  if (u.cols() != block.width())
    throw ShapeError("coupling: input has " + std::to_string(u.cols()) + " channels, block has " +
                     std::to_string(block.width()));
  if (c.cols() != block.s.w1c.value.rows())
    throw ShapeError("coupling: conditioning length " + std::to_string(c.cols()) +
                     ", expected " + std::to_string(block.s.w1c.value.rows()));
  if (c.rows() != u.rows()) throw ShapeError("coupling: row count mismatch");
}

template <typename T>
CouplingResult<T> coupling(const CouplingBlock<T>& block, const Matrix<T>& u, const Matrix<T>& c, bool inverse) {
  check_coupling_inputs(block, u, c);
  Matrix<T> h = u;
  ColumnVector<T> log_det = ColumnVector<T>::Zero(u.rows());
  coupling_inplace(block, h, c, inverse, log_det);
  return {h, std::move(log_det)};
}

}  // namespace detail

// v1 = u1, v2 = u2 * exp(s_hat) + t with s_hat = clamp * tanh(s / clamp).
// log_det is the per-row sum of s_hat.
template <typename T>
CouplingResult<T> coupling_forward(const CouplingBlock<T>& block, const Matrix<T>& u,
                                   const Matrix<T>& c) {
  return detail::coupling(block, u, c, false);
}

// u2 = (v2 - t) * exp(-s_hat). log_det is that of the inverse map.
template <typename T>
CouplingResult<T> coupling_inverse(const CouplingBlock<T>& block, const Matrix<T>& v,
                                   const Matrix<T>& c) {
  return detail::coupling(block, v, c, true);
}

// Per-pixel latents of a batch of target pixels.
template <typename T>
struct LatentBatch {
  Matrix<T> z;       // K x latent_dim (the style coordinates)
  Matrix<T> split;   // K x 1 split-off channel for dim2, empty otherwise
  ColumnVector<T> log_det;  // log |det d(latent)/d(pixel)| per row
};

namespace detail {

template <typename T>
void check_model_inputs(const FlowModel<T>& model, Eigen::Index rows, const Matrix<T>& c) {
  if (!model.actnorm_ready()) throw Error("flow: ActNorm has not been initialized");
  if (c.cols() != model.cond_len)
    throw ShapeError("flow: conditioning length " + std::to_string(c.cols()) + ", model expects " +
                     std::to_string(model.cond_len));
  if (c.rows() != rows) throw ShapeError("flow: conditioning row count mismatch");
}

template <typename T>
Matrix<T> augment(const FlowModel<T>& model, const Matrix<T>& x, const Matrix<T>* augmentation) {
  if (x.cols() != 3) throw ShapeError("flow: pixels must have 3 channels");
  if (model.variant() != Variant::kDim4Augmented) return x;
  Matrix<T> out(x.rows(), 4);
  out.leftCols(3) = x;
  if (augmentation) {
    if (augmentation->rows() != x.rows() || augmentation->cols() != 1)
      throw ShapeError("flow: augmentation must be K x 1");
    out.col(3) = augmentation->col(0);
  } else {
    out.col(3).setZero();
  }
  return out;
}

template <typename T>
void actnorm_forward(const ActNormLayer<T>& a, Matrix<T>& h) {
  h.array().rowwise() *= a.log_scale.value.row(0).array().exp();
  h.rowwise() += a.bias.value.row(0);
}

template <typename T>
void actnorm_inverse(const ActNormLayer<T>& a, Matrix<T>& h) {
  h.rowwise() -= a.bias.value.row(0);
  h.array().rowwise() *= (-a.log_scale.value.row(0).array()).exp();
}

}  // namespace detail

// Pixel -> latent. For the augmented variant `augmentation` supplies the
// extra channel (nullptr means zeros, the mode used for deterministic
// extraction; training draws it from N(0, 1)).
template <typename T>
LatentBatch<T> flow_inverse(const FlowModel<T>& model, const Matrix<T>& x, const Matrix<T>& c,
                            const Matrix<T>* augmentation = nullptr) {
  detail::check_model_inputs(model, x.rows(), c);
  Matrix<T> h = detail::augment(model, x, augmentation);
  LatentBatch<T> r;
  r.log_det = ColumnVector<T>::Zero(x.rows());
  const int split = model.split_after();
  for (int i = 0; i < static_cast<int>(model.blocks.size()); ++i) {
    if (i == split) {
      r.split = h.leftCols(1);
      h = Matrix<T>(h.rightCols(h.cols() - 1));
    }
    const auto& b = model.blocks[i];
    detail::coupling_inplace(b.coupling, h, c, false, r.log_det);
    h = permute_columns(h, b.permutation);
    detail::actnorm_forward(b.actnorm, h);
    r.log_det.array() += b.actnorm.log_scale.value.sum();
  }
  r.z = h;
  return r;
}

// Latent -> all generated channels (4 for the augmented variant). `z` may be
// a single row, which is used for every conditioning row. For dim2 `split`
// holds the split-off channel (nullptr means zeros).
template <typename T>
Matrix<T> flow_forward_full(const FlowModel<T>& model, const Matrix<T>& z, const Matrix<T>& c,
                            const Matrix<T>* split = nullptr) {
  detail::check_model_inputs(model, c.rows(), c);
  if (z.cols() != model.latent_dim())
    throw ShapeError("flow_forward: latent has " + std::to_string(z.cols()) + " dims, model has " +
                     std::to_string(model.latent_dim()));
  Matrix<T> h;
  if (z.rows() == c.rows()) h = z;
  else if (z.rows() == 1) h = z.replicate(c.rows(), 1);
  else throw ShapeError("flow_forward: latent rows must be 1 or match conditioning");
  if (split && (split->rows() != c.rows() || split->cols() != 1))
    throw ShapeError("flow_forward: split channel must be K x 1");

  ColumnVector<T> log_det = ColumnVector<T>::Zero(c.rows());
  const int split_at = model.split_after();
  for (int i = static_cast<int>(model.blocks.size()) - 1; i >= 0; --i) {
    const auto& b = model.blocks[i];
    detail::actnorm_inverse(b.actnorm, h);
    h = unpermute_columns(h, b.permutation);
    detail::coupling_inplace(b.coupling, h, c, true, log_det);
    if (i == split_at) {
      Matrix<T> joined(h.rows(), h.cols() + 1);
      if (split) joined.col(0) = split->col(0);
      else joined.col(0).setZero();
      joined.rightCols(h.cols()) = h;
      h = std::move(joined);
    }
  }
  return h;
}

// Latent -> pixel (K x 3). No clamping.
template <typename T>
Matrix<T> flow_forward(const FlowModel<T>& model, const Matrix<T>& z, const Matrix<T>& c,
                       const Matrix<T>* split = nullptr) {
  Matrix<T> full = flow_forward_full(model, z, c, split);
  if (full.cols() == 3) return full;
  return full.leftCols(3);
}

// Per-pixel convenience form.
template <typename T>
struct LatentResult {
  std::vector<T> z;
  T split = T(0);  // dim2 only
  T log_det = T(0);
};

template <typename T>
LatentResult<T> flow_inverse(const FlowModel<T>& model, const Rgb& pixel,
                             std::span<const T> conditioning, T augmentation = T(0)) {
  Matrix<T> x(1, 3);
  x << pixel.r, pixel.g, pixel.b;
  Matrix<T> c = Eigen::Map<const Matrix<T>>(conditioning.data(), 1,
                                            static_cast<Eigen::Index>(conditioning.size()));
  Matrix<T> aug = Matrix<T>::Constant(1, 1, augmentation);
  auto r = flow_inverse(model, x, c, &aug);
  LatentResult<T> out;
  out.z.assign(r.z.data(), r.z.data() + r.z.size());
  if (r.split.size()) out.split = r.split(0, 0);
  out.log_det = r.log_det(0);
  return out;
}

// Data-dependent ActNorm initialization: each layer is set so that its
// output on this batch has zero mean and unit variance per channel.
template <typename T>
void initialize_actnorm(FlowModel<T>& model, const Matrix<T>& x, const Matrix<T>& c,
                        const Matrix<T>* augmentation = nullptr) {
  if (x.rows() < 2) throw ArgumentError("initialize_actnorm: need at least two pixels");
  if (c.cols() != model.cond_len || c.rows() != x.rows())
    throw ShapeError("initialize_actnorm: conditioning shape mismatch");
  Matrix<T> h = detail::augment(model, x, augmentation);
  const int split = model.split_after();
  for (int i = 0; i < static_cast<int>(model.blocks.size()); ++i) {
    if (i == split) h = Matrix<T>(h.rightCols(h.cols() - 1));
    auto& b = model.blocks[i];
    h = permute_columns(coupling_forward(b.coupling, h, c).out, b.permutation);
    const auto n = static_cast<double>(h.rows());
    for (Eigen::Index j = 0; j < h.cols(); ++j) {
      const double mean = h.col(j).template cast<double>().sum() / n;
      const double var =
          (h.col(j).template cast<double>().array() - mean).square().sum() / n;
      const double sd = std::max(std::sqrt(var), 1e-6);
      b.actnorm.log_scale.value(0, j) = static_cast<T>(-std::log(sd));
      b.actnorm.bias.value(0, j) = static_cast<T>(-mean / sd);
    }
    h.array().rowwise() *= b.actnorm.log_scale.value.row(0).array().exp();
    h.rowwise() += b.actnorm.bias.value.row(0);
    b.actnorm.initialized = true;
  }
}

}  // namespace styleflow
