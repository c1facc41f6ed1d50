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

// Dense 2-D tensors with a reverse-mode tape. Only what the flow needs is
// here: matrix products, a handful of elementwise maps, column slicing and
// a few reductions. Broadcasting is limited to a 1-row operand on the right
// hand side of add/sub/mul, which is repeated down the rows of the left
// operand.

#include <cmath>
#include <initializer_list>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "styleflow/error.hpp"

namespace styleflow::ad {

// Column-major: the tall, narrow products of the flow run fastest this way.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

// A trainable tensor and its gradient buffer.
template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  Parameter() = default;
  Parameter(std::string n, Matrix<T> v)
      : name(std::move(n)), value(std::move(v)),
        grad(Matrix<T>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

enum class Elementwise { kAdd, kSub, kMul, kExp, kTanh, kLeakyRelu, kLog, kNeg, kSquare, kSqrt };

// x * 0 is NaN exactly when x is not finite, and NaN survives the sum.
// Unlike Eigen's allFinite() this reduction vectorizes.
template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return !std::isnan((m.array() * typename Derived::Scalar(0)).sum());
}

template <typename T>
class Tape {
 public:
  // Handle to a recorded node. Only meaningful for the tape that made it.
  struct Var {
    std::size_t id = 0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves -------------------------------------------------------------

  Var constant(Matrix<T> value) {
    return push(Op::kLeaf, std::move(value), {}, false);
  }

  // Registers `p` on the tape; repeated calls return the same node.
  Var param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end())
      return Var{it->second};
    Var v = push(Op::kParam, p.value, {}, true);
    nodes_[v.id].param = &p;
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  const Matrix<T>& value(Var v) const { return nodes_.at(v.id).value; }
  T scalar(Var v) const {
    const auto& m = value(v);
    if (m.rows() != 1 || m.cols() != 1) throw ShapeError("tape: value is not 1x1");
    return m(0, 0);
  }
  std::size_t size() const { return nodes_.size(); }

  // --- products -----------------------------------------------------------

  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols() != B.rows())
      throw ShapeError("matmul: " + shape(A) + " x " + shape(B));
    Matrix<T> out = A * B;
    return push_checked(Op::kMatMul, std::move(out), {a.id, b.id}, "matmul");
  }

  // sum_i x_i W_i + b, with b a 1 x N row broadcast over the rows.
  Var affine(std::initializer_list<std::pair<Var, Var>> products, Var bias) {
    const auto& B = value(bias);
    if (products.size() == 0) throw ShapeError("affine: no products");
    const Eigen::Index rows = value(products.begin()->first).rows();
    if (B.rows() != 1) throw ShapeError("affine: bias must be one row, got " + shape(B));
    Matrix<T> out(rows, B.cols());
    out.rowwise() = B.row(0);
    std::vector<std::size_t> inputs;
    for (const auto& [x, w] : products) {
      const auto& X = value(x);
      const auto& W = value(w);
      if (X.rows() != rows || X.cols() != W.rows() || W.cols() != B.cols())
        throw ShapeError("affine: " + shape(X) + " x " + shape(W) + " + " + shape(B));
      out.noalias() += X * W;
      inputs.push_back(x.id);
      inputs.push_back(w.id);
    }
    inputs.push_back(bias.id);
    return push_checked(Op::kAffine, std::move(out), std::move(inputs), "affine");
  }

  // --- elementwise --------------------------------------------------------

  Var elementwise(Elementwise kind, Var a, Var b) {
    switch (kind) {
      case Elementwise::kAdd: return add(a, b);
      case Elementwise::kSub: return sub(a, b);
      case Elementwise::kMul: return mul(a, b);
      default: throw ArgumentError("elementwise: operation is unary");
    }
  }

  Var elementwise(Elementwise kind, Var a, T slope = T(0.01)) {
    switch (kind) {
      case Elementwise::kExp: return exp(a);
      case Elementwise::kTanh: return tanh(a);
      case Elementwise::kLeakyRelu: return leaky_relu(a, slope);
      case Elementwise::kLog: return log(a);
      case Elementwise::kNeg: return neg(a);
      case Elementwise::kSquare: return square(a);
      case Elementwise::kSqrt: return sqrt(a);
      default: throw ArgumentError("elementwise: operation is binary");
    }
  }

  Var add(Var a, Var b) {
    const bool bc = check_broadcast(a, b, "add");
    Matrix<T> out = bc ? Matrix<T>(value(a).rowwise() + value(b).row(0)) : Matrix<T>(value(a) + value(b));
    return push_checked(Op::kAdd, std::move(out), {a.id, b.id}, "add");
  }

  Var sub(Var a, Var b) {
    const bool bc = check_broadcast(a, b, "sub");
    Matrix<T> out = bc ? Matrix<T>(value(a).rowwise() - value(b).row(0)) : Matrix<T>(value(a) - value(b));
    return push_checked(Op::kSub, std::move(out), {a.id, b.id}, "sub");
  }

  Var mul(Var a, Var b) {
    const bool bc = check_broadcast(a, b, "mul");
    Matrix<T> out = bc ? Matrix<T>(value(a).array().rowwise() * value(b).row(0).array())
                       : Matrix<T>(value(a).array() * value(b).array());
    return push_checked(Op::kMul, std::move(out), {a.id, b.id}, "mul");
  }

  Var exp(Var a) {
    return push_checked(Op::kExp, value(a).array().exp().matrix(), {a.id}, "exp");
  }
  Var tanh(Var a) {
    return push_checked(Op::kTanh, value(a).array().tanh().matrix(), {a.id}, "tanh");
  }
  Var leaky_relu(Var a, T slope) {
    const auto& A = value(a);
    Matrix<T> out = slope >= T(0) && slope <= T(1) ? Matrix<T>(A.cwiseMax(slope * A))
                                                   : Matrix<T>((A.array() > T(0)).select(A, slope * A));
    Var v = push_checked(Op::kLeakyRelu, std::move(out), {a.id}, "leaky_relu");
    nodes_[v.id].scalar = slope;
    return v;
  }
  Var log(Var a) {
    if ((value(a).array() <= T(0)).any()) throw NumericError("log: non-positive input");
    return push_checked(Op::kLog, value(a).array().log().matrix(), {a.id}, "log");
  }
  Var neg(Var a) { return push_checked(Op::kNeg, -value(a), {a.id}, "neg"); }
  Var square(Var a) {
    return push_checked(Op::kSquare, value(a).array().square().matrix(), {a.id}, "square");
  }
  Var sqrt(Var a) {
    if ((value(a).array() < T(0)).any()) throw NumericError("sqrt: negative input");
    return push_checked(Op::kSqrt, value(a).array().sqrt().matrix(), {a.id}, "sqrt");
  }
  Var scale(Var a, T k) {
    Var v = push_checked(Op::kScale, value(a) * k, {a.id}, "scale");
    nodes_[v.id].scalar = k;
    return v;
  }

  // --- structural ---------------------------------------------------------

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    const auto& A = value(a);
    if (start < 0 || count < 0 || start + count > A.cols())
      throw ShapeError("slice_cols: range outside " + shape(A));
    Var v = push(Op::kSliceCols, A.middleCols(start, count), {a.id}, tracks(a));
    nodes_[v.id].index = {static_cast<int>(start)};
    return v;
  }

  Var concat_cols(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rows() != B.rows()) throw ShapeError("concat_cols: " + shape(A) + " | " + shape(B));
    Matrix<T> out(A.rows(), A.cols() + B.cols());
    out << A, B;
    return push(Op::kConcatCols, std::move(out), {a.id, b.id}, tracks(a) || tracks(b));
  }

  // out[:, j] = a[:, perm[j]]
  Var permute_cols(Var a, const std::vector<int>& perm) {
    const auto& A = value(a);
    if (static_cast<Eigen::Index>(perm.size()) != A.cols())
      throw ShapeError("permute_cols: permutation length mismatch");
    Matrix<T> out(A.rows(), A.cols());
    for (std::size_t j = 0; j < perm.size(); ++j) out.col(j) = A.col(perm[j]);
    Var v = push(Op::kPermuteCols, std::move(out), {a.id}, tracks(a));
    nodes_[v.id].index = perm;
    return v;
  }

  // --- reductions ---------------------------------------------------------

  Var sum(Var a) {
    Matrix<T> out(1, 1);
    out(0, 0) = value(a).sum();
    return push_checked(Op::kSum, std::move(out), {a.id}, "sum");
  }
  Var mean(Var a) {
    const auto& A = value(a);
    if (A.size() == 0) throw ShapeError("mean: empty tensor");
    Matrix<T> out(1, 1);
    out(0, 0) = A.sum() / static_cast<T>(A.size());
    return push_checked(Op::kMean, std::move(out), {a.id}, "mean");
  }
  // K x C -> K x 1
  Var row_sum(Var a) {
    return push_checked(Op::kRowSum, value(a).rowwise().sum(), {a.id}, "row_sum");
  }
  // K x C -> 1 x C
  Var col_mean(Var a) {
    const auto& A = value(a);
    if (A.rows() == 0) throw ShapeError("col_mean: no rows");
    Matrix<T> out = A.colwise().sum() / static_cast<T>(A.rows());
    return push_checked(Op::kColMean, std::move(out), {a.id}, "col_mean");
  }
  // 1 x C -> rows x C
  Var broadcast_rows(Var a, Eigen::Index rows) {
    const auto& A = value(a);
    if (A.rows() != 1) throw ShapeError("broadcast_rows: expected one row, got " + shape(A));
    Matrix<T> out = A.replicate(rows, 1);
    return push(Op::kBroadcastRows, std::move(out), {a.id}, tracks(a));
  }

  // --- backward -----------------------------------------------------------

  // Propagates d(loss)/d(node) back through the tape and writes the result
  // into every registered Parameter::grad (overwriting). Parameters on the
  // tape that the loss does not depend on receive zeros.
  void backward(Var loss) {
    if (consumed_) throw Error("backward: tape already consumed");
    const auto& L = value(loss);
    if (L.rows() != 1 || L.cols() != 1)
      throw ShapeError("backward: loss must be 1x1, got " + shape(L));
    consumed_ = true;
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = Matrix<T>::Ones(1, 1);

    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.requires_grad) continue;
      propagate(n);
    }
    for (auto& n : nodes_) {
      if (n.op != Op::kParam) continue;
      if (n.grad.size() == 0) n.param->grad.setZero(n.value.rows(), n.value.cols());
      else n.param->grad = n.grad;
    }
  }

  // Gradient of the last backward pass with respect to any node (zeros if
  // unreached). Useful for checking gradients of constants in tests.
  Matrix<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Matrix<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Marks a constant leaf as differentiable so grad() reports it.
  Var variable(Matrix<T> value) { return push(Op::kLeaf, std::move(value), {}, true); }

 private:
  enum class Op {
    kLeaf, kParam, kMatMul, kAdd, kSub, kMul, kExp, kTanh, kLeakyRelu, kLog, kNeg,
    kSquare, kSqrt, kScale, kAffine, kSliceCols, kConcatCols, kPermuteCols, kSum, kMean,
    kRowSum, kColMean, kBroadcastRows
  };

  struct Node {
    Op op = Op::kLeaf;
    Matrix<T> value;
    Matrix<T> grad;
    std::vector<std::size_t> inputs;
    std::vector<int> index;
    T scalar = T(0);
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  static std::string shape(const Matrix<T>& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  }

  bool tracks(Var v) const { return nodes_[v.id].requires_grad; }

  bool check_broadcast(Var a, Var b, const char* what) const {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rows() == B.rows() && A.cols() == B.cols()) return false;
    if (B.rows() == 1 && B.cols() == A.cols()) return true;
    throw ShapeError(std::string(what) + ": " + shape(A) + " vs " + shape(B));
  }

  Var push(Op op, Matrix<T> value, std::vector<std::size_t> inputs, bool requires_grad) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push_checked(Op op, Matrix<T> value, std::vector<std::size_t> inputs, const char* what) {
    if (!all_finite(value)) throw NumericError(std::string(what) + ": non-finite result");
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
    return push(op, std::move(value), std::move(inputs), rg);
  }

  void accumulate(std::size_t id, const Matrix<T>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = g;
    else n.grad += g;
  }

  template <typename Expr>
  void accumulate_expr(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad.noalias() = g;
    else n.grad.noalias() += g;
  }

  // Gradient for a right-hand operand that may have been row-broadcast.
  void accumulate_rhs(std::size_t id, const Matrix<T>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.value.rows() == 1 && g.rows() != 1) accumulate_expr(id, g.colwise().sum());
    else accumulate(id, g);
  }

  void propagate(const Node& n) {
    const Matrix<T>& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kParam:
        return;
      case Op::kMatMul: {
        const auto& A = nodes_[n.inputs[0]].value;
        const auto& B = nodes_[n.inputs[1]].value;
        if (nodes_[n.inputs[0]].requires_grad) accumulate_expr(n.inputs[0], g * B.transpose());
        if (nodes_[n.inputs[1]].requires_grad) accumulate_expr(n.inputs[1], A.transpose() * g);
        return;
      }
      case Op::kAffine: {
        for (std::size_t k = 0; k + 1 < n.inputs.size(); k += 2) {
          const auto& X = nodes_[n.inputs[k]].value;
          const auto& W = nodes_[n.inputs[k + 1]].value;
          if (nodes_[n.inputs[k]].requires_grad) accumulate_expr(n.inputs[k], g * W.transpose());
          if (nodes_[n.inputs[k + 1]].requires_grad) accumulate_expr(n.inputs[k + 1], X.transpose() * g);
        }
        accumulate_expr(n.inputs.back(), g.colwise().sum());
        return;
      }
      case Op::kAdd:
        accumulate(n.inputs[0], g);
        accumulate_rhs(n.inputs[1], g);
        return;
      case Op::kSub:
        accumulate(n.inputs[0], g);
        accumulate_rhs(n.inputs[1], -g);
        return;
      case Op::kMul: {
        const auto& A = nodes_[n.inputs[0]].value;
        const auto& B = nodes_[n.inputs[1]].value;
        const bool bc = B.rows() == 1 && A.rows() != 1;
        if (nodes_[n.inputs[0]].requires_grad) {
          Matrix<T> ga = g;
          if (bc) ga.array().rowwise() *= B.row(0).array();
          else ga.array() *= B.array();
          accumulate(n.inputs[0], ga);
        }
        if (nodes_[n.inputs[1]].requires_grad)
          accumulate_rhs(n.inputs[1], (g.array() * A.array()).matrix());
        return;
      }
      case Op::kExp:
        accumulate_expr(n.inputs[0], (g.array() * n.value.array()).matrix());
        return;
      case Op::kTanh:
        accumulate_expr(n.inputs[0], (g.array() * (T(1) - n.value.array().square())).matrix());
        return;
      case Op::kLeakyRelu: {
        const auto& X = nodes_[n.inputs[0]].value;
        const T slope = n.scalar;
        accumulate_expr(n.inputs[0],
                        (X.array() > T(0)).select(g, slope * g));
        return;
      }
      case Op::kLog:
        accumulate_expr(n.inputs[0], (g.array() / nodes_[n.inputs[0]].value.array()).matrix());
        return;
      case Op::kNeg:
        accumulate_expr(n.inputs[0], -g);
        return;
      case Op::kSquare:
        accumulate_expr(n.inputs[0],
                        (T(2) * g.array() * nodes_[n.inputs[0]].value.array()).matrix());
        return;
      case Op::kSqrt:
        accumulate_expr(n.inputs[0], (g.array() / (T(2) * n.value.array())).matrix());
        return;
      case Op::kScale:
        accumulate_expr(n.inputs[0], g * n.scalar);
        return;
      case Op::kSliceCols: {
        const auto& X = nodes_[n.inputs[0]].value;
        Matrix<T> gx = Matrix<T>::Zero(X.rows(), X.cols());
        gx.middleCols(n.index[0], g.cols()) = g;
        accumulate(n.inputs[0], gx);
        return;
      }
      case Op::kConcatCols: {
        const auto ca = nodes_[n.inputs[0]].value.cols();
        const auto cb = nodes_[n.inputs[1]].value.cols();
        accumulate_expr(n.inputs[0], g.leftCols(ca));
        accumulate_expr(n.inputs[1], g.rightCols(cb));
        return;
      }
      case Op::kPermuteCols: {
        Matrix<T> gx(g.rows(), g.cols());
        for (std::size_t j = 0; j < n.index.size(); ++j) gx.col(n.index[j]) = g.col(j);
        accumulate(n.inputs[0], gx);
        return;
      }
      case Op::kSum: {
        const auto& X = nodes_[n.inputs[0]].value;
        accumulate_expr(n.inputs[0], Matrix<T>::Constant(X.rows(), X.cols(), g(0, 0)));
        return;
      }
      case Op::kMean: {
        const auto& X = nodes_[n.inputs[0]].value;
        accumulate_expr(n.inputs[0], Matrix<T>::Constant(X.rows(), X.cols(),
                                                         g(0, 0) / static_cast<T>(X.size())));
        return;
      }
      case Op::kRowSum: {
        const auto cols = nodes_[n.inputs[0]].value.cols();
        accumulate_expr(n.inputs[0], g.replicate(1, cols));
        return;
      }
      case Op::kColMean: {
        const auto rows = nodes_[n.inputs[0]].value.rows();
        accumulate_expr(n.inputs[0], (g / static_cast<T>(rows)).replicate(rows, 1));
        return;
      }
      case Op::kBroadcastRows:
        accumulate_expr(n.inputs[0], g.colwise().sum());
        return;
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool consumed_ = false;
};

}  // namespace styleflow::ad
