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

// Polynomial colour correction. A pixel (r, g, b) is expanded into every
// monomial r^a g^b b^c with 1 <= a+b+c <= degree. Terms are ordered by total
// degree, then by descending exponent tuple (a, b, c), so degree 1 reads
// r, g, b and degree 2 continues r^2, rg, rb, g^2, gb, b^2. This order is
// part of the model file format ("deglex-desc-v1").

#include <array>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "styleflow/autodiff.hpp"
#include "styleflow/error.hpp"
#include "styleflow/image.hpp"
#include "styleflow/parallel.hpp"

namespace styleflow {

inline constexpr int kMinPccDegree = 1;
inline constexpr int kMaxPccDegree = 4;
inline constexpr const char* kMonomialOrderId = "deglex-desc-v1";

// C(degree + 3, 3) - 1.
constexpr int pcc_basis_length(int degree) {
  return (degree + 1) * (degree + 2) * (degree + 3) / 6 - 1;
}

inline void check_degree(int degree) {
  if (degree < kMinPccDegree || degree > kMaxPccDegree)
    throw ArgumentError("pcc: unsupported degree " + std::to_string(degree) + " (expected 1..4)");
}

struct Monomial {
  int r, g, b;
};

inline std::vector<Monomial> pcc_monomials(int degree) {
  check_degree(degree);
  std::vector<Monomial> out;
  for (int d = 1; d <= degree; ++d)
    for (int a = d; a >= 0; --a)
      for (int b = d - a; b >= 0; --b) out.push_back({a, b, d - a - b});
  return out;
}

namespace detail {
inline const std::vector<Monomial>& monomial_table(int degree) {
  static const std::array<std::vector<Monomial>, 5> tables = {
      std::vector<Monomial>{}, pcc_monomials(1), pcc_monomials(2), pcc_monomials(3),
      pcc_monomials(4)};
  check_degree(degree);
  return tables[degree];
}
}  // namespace detail

// Writes the basis of (r, g, b) into out[0 .. pcc_basis_length(degree)).
template <typename T>
void pcc_basis_into(double r, double g, double b, int degree, T* out) {
  const auto& terms = detail::monomial_table(degree);
  double pr[kMaxPccDegree + 1], pg[kMaxPccDegree + 1], pb[kMaxPccDegree + 1];
  pr[0] = pg[0] = pb[0] = 1.0;
  for (int k = 1; k <= degree; ++k) {
    pr[k] = pr[k - 1] * r;
    pg[k] = pg[k - 1] * g;
    pb[k] = pb[k - 1] * b;
  }
  for (std::size_t i = 0; i < terms.size(); ++i)
    out[i] = static_cast<T>(pr[terms[i].r] * pg[terms[i].g] * pb[terms[i].b]);
}

// Same, into row `i` of a matrix of any storage order.
template <typename M>
void pcc_basis_row(double r, double g, double b, int degree, M& out, Eigen::Index i) {
  typename M::Scalar buf[pcc_basis_length(kMaxPccDegree)];
  pcc_basis_into(r, g, b, degree, buf);
  for (int k = 0; k < pcc_basis_length(degree); ++k) out(i, k) = buf[k];
}

struct PccBasisVector {
  int degree = 0;
  std::vector<double> values;
};

inline PccBasisVector pcc_basis(const Rgb& pixel, int degree) {
  check_degree(degree);
  PccBasisVector v{degree, std::vector<double>(pcc_basis_length(degree))};
  pcc_basis_into(pixel.r, pixel.g, pixel.b, degree, v.values.data());
  return v;
}

// Per-pixel basis rows for a whole image (K x basis_len), the conditioning
// input of the flow.
template <typename T = float>
ad::Matrix<T> pcc_basis_matrix(const ImageBuffer& image, int degree) {
  check_degree(degree);
  const auto n = static_cast<Eigen::Index>(image.pixel_count());
  ad::Matrix<T> out(n, pcc_basis_length(degree));
  parallel_for(0, static_cast<std::size_t>(n), 16384, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Rgb p = image.pixel(i);
      pcc_basis_row(p.r, p.g, p.b, degree, out, static_cast<Eigen::Index>(i));
    }
  });
  return out;
}

template <typename T = float>
ad::Matrix<T> pcc_basis_matrix(std::span<const Rgb> pixels, int degree) {
  check_degree(degree);
  ad::Matrix<T> out(static_cast<Eigen::Index>(pixels.size()), pcc_basis_length(degree));
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pcc_basis_row(pixels[i].r, pixels[i].g, pixels[i].b, degree, out, static_cast<Eigen::Index>(i));
  return out;
}

// --- style matrices -------------------------------------------------------

struct StyleMatrix {
  int degree = 0;
  Eigen::MatrixXd coefficients;  // basis_len x 3

  StyleMatrix() = default;
  StyleMatrix(int d, Eigen::MatrixXd m) : degree(d), coefficients(std::move(m)) {
    check_degree(d);
    if (coefficients.rows() != pcc_basis_length(d) || coefficients.cols() != 3)
      throw ShapeError("style matrix: expected " + std::to_string(pcc_basis_length(d)) +
                       "x3 for degree " + std::to_string(d));
  }

  static StyleMatrix zero(int degree) {
    return {degree, Eigen::MatrixXd::Zero(pcc_basis_length(degree), 3)};
  }
  // Linear block = identity, higher-order terms zero.
  static StyleMatrix identity(int degree) {
    StyleMatrix m = zero(degree);
    m.coefficients.topRows(3).setIdentity();
    return m;
  }

  Rgb map(const Rgb& p) const {
    double basis[pcc_basis_length(kMaxPccDegree)];
    pcc_basis_into(p.r, p.g, p.b, degree, basis);
    Rgb out;
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < coefficients.rows(); ++i) acc += basis[i] * coefficients(i, c);
      out[c] = static_cast<float>(acc);
    }
    return out;
  }

  // Row-major flattening: entry (i, c) lands at 3 * i + c.
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd v(coefficients.size());
    for (Eigen::Index i = 0; i < coefficients.rows(); ++i)
      for (Eigen::Index c = 0; c < 3; ++c) v(3 * i + c) = coefficients(i, c);
    return v;
  }
  static StyleMatrix unflatten(int degree, const Eigen::VectorXd& v) {
    const int n = pcc_basis_length(degree);
    if (v.size() != 3 * n) throw ShapeError("style matrix: flat vector has wrong length");
    Eigen::MatrixXd m(n, 3);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) m(i, c) = v(3 * i + c);
    return {degree, m};
  }
};

// Ridge added to the normal form of the least-squares problem.
inline constexpr double kPccRidge = 1e-8;

// Least-squares M minimizing sum |C(source_p) M - target_p|^2. Solved by
// Householder QR of the ridge-augmented system [A; sqrt(eps) I].
inline StyleMatrix fit_style_matrix(std::span<const Rgb> sources, std::span<const Rgb> targets,
                                    int degree) {
  check_degree(degree);
  if (sources.size() != targets.size())
    throw ShapeError("fit_style_matrix: " + std::to_string(sources.size()) + " sources vs " +
                     std::to_string(targets.size()) + " targets");
  const int n = pcc_basis_length(degree);
  const auto k = static_cast<Eigen::Index>(sources.size());
  if (k < n)
    throw ArgumentError("fit_style_matrix: underdetermined, " + std::to_string(k) +
                        " samples for " + std::to_string(n) + " basis terms");

  Eigen::MatrixXd a(k + n, n);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(k + n, 3);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Rgb& s = sources[i];
    const Rgb& t = targets[i];
    if (!std::isfinite(s.r) || !std::isfinite(s.g) || !std::isfinite(s.b) ||
        !std::isfinite(t.r) || !std::isfinite(t.g) || !std::isfinite(t.b))
      throw NumericError("fit_style_matrix: non-finite sample");
    double row[pcc_basis_length(kMaxPccDegree)];
    pcc_basis_into(s.r, s.g, s.b, degree, row);
    for (int j = 0; j < n; ++j) a(i, j) = row[j];
    rhs(i, 0) = t.r;
    rhs(i, 1) = t.g;
    rhs(i, 2) = t.b;
  }

  // Exact degeneracy (e.g. a perfectly grey image) is reported rather than
  // silently regularized away.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> rank_check(a.topRows(k));
  rank_check.setThreshold(1e-12);
  if (rank_check.rank() < n)
    throw ArgumentError("fit_style_matrix: degenerate samples, rank " +
                        std::to_string(rank_check.rank()) + " < " + std::to_string(n) +
                        "; try a lower degree");

  a.bottomRows(n) = std::sqrt(kPccRidge) * Eigen::MatrixXd::Identity(n, n);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return {degree, qr.solve(rhs)};
}

inline std::vector<Rgb> image_pixels(const ImageBuffer& image) {
  std::vector<Rgb> out(image.pixel_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = image.pixel(i);
  return out;
}

inline StyleMatrix fit_style_matrix(const ImageBuffer& source, const ImageBuffer& target,
                                    int degree) {
  if (!source.same_size(target)) throw ShapeError("fit_style_matrix: image sizes differ");
  const auto s = image_pixels(source);
  const auto t = image_pixels(target);
  return fit_style_matrix(s, t, degree);
}

// Each pixel becomes C(pixel) M, clamped to [0, 1].
inline ImageBuffer apply_style_matrix(const ImageBuffer& image, const StyleMatrix& m) {
  check_degree(m.degree);
  if (m.coefficients.rows() != pcc_basis_length(m.degree) || m.coefficients.cols() != 3)
    throw ShapeError("apply_style_matrix: matrix shape does not match its degree");
  ImageBuffer out(image.width(), image.height());
  parallel_for(0, image.pixel_count(), 8192, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Rgb p = m.map(image.pixel(i));
      for (int c = 0; c < 3; ++c) p[c] = std::clamp(p[c], 0.0f, 1.0f);
      out.set_pixel(i, p);
    }
  });
  return out;
}

// Plain text form for inspection:
//   # pcc-style-matrix degree <d> rows <n> cols 3
//   followed by n rows of 3 numbers.
inline void write_style_matrix_text(std::ostream& os, const StyleMatrix& m) {
  os << "# pcc-style-matrix degree " << m.degree << " rows " << m.coefficients.rows()
     << " cols 3\n";
  os.precision(17);
  for (Eigen::Index i = 0; i < m.coefficients.rows(); ++i)
    os << m.coefficients(i, 0) << ' ' << m.coefficients(i, 1) << ' ' << m.coefficients(i, 2)
       << '\n';
}

inline StyleMatrix read_style_matrix_text(std::istream& is) {
  std::string hash, tag, kw_degree, kw_rows, kw_cols;
  int degree = 0, rows = 0, cols = 0;
  if (!(is >> hash >> tag >> kw_degree >> degree >> kw_rows >> rows >> kw_cols >> cols) ||
      hash != "#" || tag != "pcc-style-matrix" || cols != 3)
    throw FormatError("style matrix text: bad header");
  check_degree(degree);
  if (rows != pcc_basis_length(degree)) throw FormatError("style matrix text: row count");
  Eigen::MatrixXd m(rows, 3);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < 3; ++c)
      if (!(is >> m(i, c))) throw FormatError("style matrix text: truncated");
  return {degree, m};
}

// --- PCA over flattened style matrices --------------------------------------

struct PcaReducer {
  int degree = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // k x D, orthonormal rows
  Eigen::VectorXd singular_values;

  int k() const { return static_cast<int>(components.rows()); }
};

inline PcaReducer pca_fit(std::span<const StyleMatrix> matrices, int k) {
  if (k < 1) throw ArgumentError("pca_fit: k must be positive");
  if (matrices.empty() || static_cast<std::size_t>(k) > matrices.size())
    throw ArgumentError("pca_fit: k = " + std::to_string(k) + " exceeds sample count " +
                        std::to_string(matrices.size()));
  const int degree = matrices.front().degree;
  const Eigen::Index dim = 3 * pcc_basis_length(degree);
  if (k > dim) throw ArgumentError("pca_fit: k exceeds matrix size");
  Eigen::MatrixXd data(static_cast<Eigen::Index>(matrices.size()), dim);
  for (std::size_t i = 0; i < matrices.size(); ++i) {
    if (matrices[i].degree != degree) throw ShapeError("pca_fit: mixed degrees");
    data.row(static_cast<Eigen::Index>(i)) = matrices[i].flatten().transpose();
  }
  PcaReducer r;
  r.degree = degree;
  r.mean = data.colwise().mean().transpose();
  data.rowwise() -= r.mean.transpose();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeFullV);
  r.components = svd.matrixV().leftCols(k).transpose();
  r.singular_values = svd.singularValues().head(std::min<Eigen::Index>(k, svd.singularValues().size()));
  return r;
}

inline Eigen::VectorXd pca_encode(const PcaReducer& r, const StyleMatrix& m) {
  if (m.degree != r.degree) throw ShapeError("pca_encode: degree mismatch");
  return r.components * (m.flatten() - r.mean);
}

inline StyleMatrix pca_decode(const PcaReducer& r, const Eigen::VectorXd& v) {
  if (v.size() != r.k())
    throw ShapeError("pca_decode: expected " + std::to_string(r.k()) + " coefficients");
  return StyleMatrix::unflatten(r.degree, r.mean + r.components.transpose() * v);
}

}  // namespace styleflow
