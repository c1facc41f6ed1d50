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

#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "gen.hpp"
#include "styleflow/adam.hpp"
#include "styleflow/autodiff.hpp"

namespace styleflow {
namespace {

using testing::Gen;
using Mat = ad::Matrix<double>;
using TapeD = ad::Tape<double>;
using VarD = TapeD::Var;

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// loss = sum(f(inputs) .* W) for a fixed random W; reverse-mode gradients
// against central differences for every input entry.
double max_gradient_error(const std::vector<Mat>& inputs,
                          const std::function<VarD(TapeD&, const std::vector<VarD>&)>& f, Gen& g) {
  Mat weights;
  auto eval = [&](const std::vector<Mat>& xs, std::vector<Mat>* grads) {
    TapeD tape;
    std::vector<VarD> vars;
    for (const auto& x : xs) vars.push_back(tape.variable(x));
    VarD out = f(tape, vars);
    if (weights.size() == 0) weights = g.matrix<double>(tape.value(out).rows(), tape.value(out).cols());
    VarD loss = tape.sum(tape.mul(out, tape.constant(weights)));
    const double v = tape.scalar(loss);
    if (grads) {
      tape.backward(loss);
      for (auto x : vars) grads->push_back(tape.grad(x));
    }
    return v;
  };
  std::vector<Mat> analytic;
  eval(inputs, &analytic);
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double fd = (eval(plus, nullptr) - eval(minus, nullptr)) / (2 * h);
      worst = std::max(worst, rel_err(fd, analytic[k].data()[i]));
    }
  }
  return worst;
}

struct Primitive {
  const char* name;
  int arity;
  bool positive;  // inputs drawn from (0.5, 2)
  bool row_rhs;   // second operand is a single row
  std::function<VarD(TapeD&, const std::vector<VarD>&)> f;
};

std::vector<Primitive> primitives() {
  return {
      {"add", 2, false, false, [](TapeD& t, const auto& v) { return t.add(v[0], v[1]); }},
      {"add_row", 2, false, true, [](TapeD& t, const auto& v) { return t.add(v[0], v[1]); }},
      {"sub", 2, false, false, [](TapeD& t, const auto& v) { return t.sub(v[0], v[1]); }},
      {"sub_row", 2, false, true, [](TapeD& t, const auto& v) { return t.sub(v[0], v[1]); }},
      {"mul", 2, false, false, [](TapeD& t, const auto& v) { return t.mul(v[0], v[1]); }},
      {"mul_row", 2, false, true, [](TapeD& t, const auto& v) { return t.mul(v[0], v[1]); }},
      {"exp", 1, false, false, [](TapeD& t, const auto& v) { return t.exp(v[0]); }},
      {"tanh", 1, false, false, [](TapeD& t, const auto& v) { return t.tanh(v[0]); }},
      {"leaky_relu", 1, false, false, [](TapeD& t, const auto& v) { return t.leaky_relu(v[0], 0.01); }},
      {"log", 1, true, false, [](TapeD& t, const auto& v) { return t.log(v[0]); }},
      {"neg", 1, false, false, [](TapeD& t, const auto& v) { return t.neg(v[0]); }},
      {"square", 1, false, false, [](TapeD& t, const auto& v) { return t.square(v[0]); }},
      {"sqrt", 1, true, false, [](TapeD& t, const auto& v) { return t.sqrt(v[0]); }},
      {"scale", 1, false, false, [](TapeD& t, const auto& v) { return t.scale(v[0], -2.5); }},
      {"slice_cols", 1, false, false, [](TapeD& t, const auto& v) { return t.slice_cols(v[0], 1, 2); }},
      {"concat_cols", 2, false, false, [](TapeD& t, const auto& v) { return t.concat_cols(v[0], v[1]); }},
      {"permute_cols", 1, false, false,
       [](TapeD& t, const auto& v) { return t.permute_cols(v[0], {2, 0, 3, 1}); }},
      {"sum", 1, false, false, [](TapeD& t, const auto& v) { return t.sum(v[0]); }},
      {"mean", 1, false, false, [](TapeD& t, const auto& v) { return t.mean(v[0]); }},
      {"row_sum", 1, false, false, [](TapeD& t, const auto& v) { return t.row_sum(v[0]); }},
      {"col_mean", 1, false, false, [](TapeD& t, const auto& v) { return t.col_mean(v[0]); }},
      {"broadcast_rows", 1, false, true,
       [](TapeD& t, const auto& v) { return t.broadcast_rows(t.col_mean(v[0]), 5); }},
  };
}

TEST(TapeGradient, EveryPrimitiveMatchesFiniteDifferences) {
  Gen g(7);
  for (const auto& p : primitives()) {
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const int rows = g.integer(1, 5);
      std::vector<Mat> in;
      in.push_back(p.positive ? g.matrix<double>(rows, 4, 0.5, 2.0) : g.matrix<double>(rows, 4));
      if (p.arity == 2) in.push_back(g.matrix<double>(p.row_rhs ? 1 : rows, 4));
      worst = std::max(worst, max_gradient_error(in, p.f, g));
    }
    EXPECT_LT(worst, 1e-3) << p.name;
  }
}

TEST(TapeGradient, MatmulSumGradientIsOnesTimesBTranspose) {
  Gen g(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat A = g.matrix<double>(g.integer(1, 4), 3);
    const Mat B = g.matrix<double>(3, g.integer(1, 4));
    TapeD tape;
    auto a = tape.variable(A);
    auto b = tape.variable(B);
    tape.backward(tape.sum(tape.matmul(a, b)));
    const Mat expected = Mat::Ones(A.rows(), B.cols()) * B.transpose();
    EXPECT_LT((tape.grad(a) - expected).cwiseAbs().maxCoeff(), 1e-12);
    auto f = [](TapeD& t, const std::vector<VarD>& v) { return t.matmul(v[0], v[1]); };
    EXPECT_LT(max_gradient_error({A, B}, f, g), 1e-4);
  }
}

TEST(TapeGradient, AffineMatchesFiniteDifferencesAndUnfusedOps) {
  Gen g(12);
  for (int trial = 0; trial < 50; ++trial) {
    const int rows = g.integer(1, 6), n = g.integer(1, 4);
    const Mat X1 = g.matrix<double>(rows, 3), W1 = g.matrix<double>(3, n);
    const Mat X2 = g.matrix<double>(rows, 2), W2 = g.matrix<double>(2, n);
    const Mat b = g.matrix<double>(1, n);
    auto fused = [](TapeD& t, const std::vector<VarD>& v) { return t.affine({{v[0], v[1]}, {v[2], v[3]}}, v[4]); };
    EXPECT_LT(max_gradient_error({X1, W1, X2, W2, b}, fused, g), 1e-4);
    TapeD tape;
    std::vector<VarD> v;
    for (const auto* m : {&X1, &W1, &X2, &W2, &b}) v.push_back(tape.variable(*m));
    const Mat expected = tape.value(tape.add(tape.add(tape.matmul(v[0], v[1]), tape.matmul(v[2], v[3])), v[4]));
    EXPECT_LT((tape.value(fused(tape, v)) - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
  TapeD tape;
  auto x = tape.constant(Mat::Ones(2, 3));
  EXPECT_THROW(tape.affine({{x, tape.constant(Mat::Ones(2, 2))}}, tape.constant(Mat::Ones(1, 2))), ShapeError);
  EXPECT_THROW(tape.affine({{x, tape.constant(Mat::Ones(3, 2))}}, tape.constant(Mat::Ones(2, 2))), ShapeError);
}

TEST(TapeGradient, FloatFiniteDifferencesWithCoarseStep) {
  Gen g(5);
  ad::Tape<float> tape;
  ad::Matrix<float> x = g.matrix<float>(3, 3);
  auto loss_of = [](const ad::Matrix<float>& m) {
    ad::Tape<float> t;
    auto v = t.variable(m);
    return t.scalar(t.sum(t.tanh(t.matmul(v, v))));
  };
  auto v = tape.variable(x);
  tape.backward(tape.sum(tape.tanh(tape.matmul(v, v))));
  const float h = 1e-3f;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto p = x, m = x;
    p.data()[i] += h;
    m.data()[i] -= h;
    const double fd = (static_cast<double>(loss_of(p)) - loss_of(m)) / (2.0 * h);
    EXPECT_LT(rel_err(fd, tape.grad(v).data()[i]), 1e-2);
  }
}

TEST(Tape, MatmulExamples) {
  TapeD tape;
  Mat m(3, 2);
  m << 1, 2, 3, 4, 5, 6;
  auto prod = tape.matmul(tape.constant(Mat::Identity(3, 3)), tape.constant(m));
  EXPECT_EQ(tape.value(prod), m);
  Mat a(2, 2), b(2, 1), expected(2, 1);
  a << 1, 2, 3, 4;
  b << 1, 1;
  expected << 3, 7;
  EXPECT_EQ(tape.value(tape.matmul(tape.constant(a), tape.constant(b))), expected);
  EXPECT_THROW(tape.matmul(tape.constant(a), tape.constant(m)), ShapeError);
}

TEST(Tape, ElementwiseExamples) {
  TapeD tape;
  auto zero = tape.variable(Mat::Zero(2, 2));
  EXPECT_EQ(tape.value(tape.exp(zero)), Mat::Ones(2, 2));
  auto lr = tape.leaky_relu(tape.constant(Mat::Constant(1, 1, -1.0)), 0.01);
  EXPECT_DOUBLE_EQ(tape.scalar(lr), -0.01);
  auto th = tape.sum(tape.tanh(zero));
  tape.backward(th);
  EXPECT_EQ(tape.grad(zero), Mat::Ones(2, 2));
}

TEST(Tape, ErrorsAndBroadcastRules) {
  TapeD tape;
  EXPECT_THROW(tape.log(tape.constant(Mat::Zero(1, 2))), NumericError);
  EXPECT_THROW(tape.log(tape.constant(Mat::Constant(1, 1, -3.0))), NumericError);
  EXPECT_THROW(tape.add(tape.constant(Mat::Zero(2, 3)), tape.constant(Mat::Zero(2, 2))), ShapeError);
  // Only a single-row right operand broadcasts.
  EXPECT_THROW(tape.add(tape.constant(Mat::Zero(1, 3)), tape.constant(Mat::Zero(2, 3))), ShapeError);
  EXPECT_THROW(tape.exp(tape.constant(Mat::Constant(1, 1, 1000.0))), NumericError);
  EXPECT_THROW(tape.elementwise(ad::Elementwise::kAdd, tape.constant(Mat::Zero(1, 1))), ArgumentError);
}

TEST(TapeBackward, HalfSumOfSquaresGradientIsParameter) {
  Gen g(3);
  ad::Parameter<double> p("p", g.matrix<double>(3, 4));
  TapeD tape;
  tape.backward(tape.scale(tape.sum(tape.square(tape.param(p))), 0.5));
  EXPECT_LT((p.grad - p.value).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TapeBackward, ConstantLossGivesZeroGradients) {
  ad::Parameter<double> p("p", Mat::Ones(2, 2));
  p.grad.setOnes();
  TapeD tape;
  tape.param(p);
  tape.backward(tape.sum(tape.constant(Mat::Ones(3, 3))));
  EXPECT_EQ(p.grad, Mat::Zero(2, 2));
}

TEST(TapeBackward, UnreachedParameterGetsZeroGradient) {
  ad::Parameter<double> used("used", Mat::Ones(1, 2)), unused("unused", Mat::Ones(2, 2));
  unused.grad.setConstant(5);
  TapeD tape;
  auto u = tape.param(used);
  tape.param(unused);
  tape.backward(tape.sum(u));
  EXPECT_EQ(used.grad, Mat::Ones(1, 2));
  EXPECT_EQ(unused.grad, Mat::Zero(2, 2));
}

TEST(TapeBackward, SharedParameterAccumulates) {
  ad::Parameter<double> p("p", Mat::Constant(1, 1, 3.0));
  TapeD tape;
  auto a = tape.param(p);
  auto b = tape.param(p);
  EXPECT_EQ(a.id, b.id);
  tape.backward(tape.sum(tape.mul(a, b)));
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 6.0);
}

TEST(TapeBackward, RejectsNonScalarLossAndReuse) {
  TapeD tape;
  auto x = tape.variable(Mat::Ones(2, 2));
  EXPECT_THROW(tape.backward(x), ShapeError);
  auto s = tape.sum(x);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), Error);
}

TEST(TapeBackward, Deterministic) {
  Gen g(21);
  const Mat a = g.matrix<double>(6, 5), b = g.matrix<double>(5, 4);
  auto run = [&] {
    TapeD tape;
    auto va = tape.variable(a);
    auto vb = tape.variable(b);
    tape.backward(tape.mean(tape.tanh(tape.matmul(va, vb))));
    return std::make_pair(tape.grad(va), tape.grad(vb));
  };
  const auto r1 = run(), r2 = run();
  EXPECT_EQ(r1.first, r2.first);
  EXPECT_EQ(r1.second, r2.second);
}

TEST(TapeBackward, CostIsLinearInTapeLength) {
  // A chain of n ops records n nodes plus the leaf.
  for (int n : {10, 100, 1000}) {
    TapeD tape;
    auto x = tape.variable(Mat::Constant(1, 1, 0.5));
    auto y = x;
    for (int i = 0; i < n; ++i) y = tape.tanh(y);
    EXPECT_EQ(tape.size(), static_cast<std::size_t>(n + 1));
    tape.backward(y);
    EXPECT_GT(tape.grad(x)(0, 0), 0.0);
  }
}

// --- Adam ---------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ad::Parameter<float> p("p", ad::Matrix<float>::Constant(2, 3, 1.5f));
  ad::Adam<float> opt;
  std::vector<ad::Parameter<float>*> ps{&p};
  for (int i = 0; i < 5; ++i) opt.step(ps, 0.1);
  EXPECT_EQ(p.value, ad::Matrix<float>::Constant(2, 3, 1.5f));
  EXPECT_EQ(opt.steps(), 5);
}

TEST(Adam, SingleStepMovesTowardMinimum) {
  ad::Parameter<double> x("x", Mat::Constant(1, 1, 1.0));
  x.grad(0, 0) = 2.0;  // d/dx x^2 at 1
  ad::Adam<double> opt;
  std::vector<ad::Parameter<double>*> ps{&x};
  opt.step(ps, 0.1);
  // First bias-corrected step has magnitude lr.
  EXPECT_NEAR(x.value(0, 0), 0.9, 1e-7);
}

TEST(Adam, ConvergesOnQuadratic) {
  // f(x) = 0.5 (x - m)^T Q (x - m), minimizer m.
  Mat Q(2, 2), m(1, 2);
  Q << 3.0, 0.5, 0.5, 1.0;
  m << 0.7, -1.2;
  ad::Parameter<double> x("x", Mat::Zero(1, 2));
  ad::Adam<double> opt;
  std::vector<ad::Parameter<double>*> ps{&x};
  for (int i = 0; i < 500; ++i) {
    x.grad = (x.value - m) * Q;
    opt.step(ps, i < 300 ? 0.05 : 0.005);
  }
  EXPECT_LT((x.value - m).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Adam, RejectsBadInputsWithoutSideEffects) {
  ad::Parameter<double> a("a", Mat::Ones(1, 1)), b("b", Mat::Ones(1, 1));
  a.grad(0, 0) = 1.0;
  b.grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  ad::Adam<double> opt;
  std::vector<ad::Parameter<double>*> ps{&a, &b};
  EXPECT_THROW(opt.step(ps, 0.0), ArgumentError);
  EXPECT_THROW(opt.step(ps, 0.1), NumericError);
  EXPECT_EQ(a.value(0, 0), 1.0);
  EXPECT_EQ(opt.steps(), 0);
  std::vector<ad::Parameter<double>*> fewer{&a};
  b.grad(0, 0) = 0;
  opt.step(ps, 0.1);
  EXPECT_THROW(opt.step(fewer, 0.1), ShapeError);
}

}  // namespace
}  // namespace styleflow
