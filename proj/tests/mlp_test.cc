// Copyright 2026 The MBOP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mbop/mlp.hpp"
#include "test_util.hpp"

namespace mbop {
namespace {

using testing::RandomMlp;

MatrixXd RandomMatrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  return MatrixXd::NullaryExpr(rows, cols, [&] { return g(rng); });
}

TEST(MlpTest, ZeroOutputLayerPredictsTargetMean) {
  const MatrixXd x = RandomMatrix(3, 200, 1);
  const MatrixXd y = RandomMatrix(2, 200, 2).array() * 3.0 + 5.0;
  Mlp<double> net{InitMlpParams<double>(3, {8, 8}, 2, 3),
                  NormStats<double>::FromSamples(x, y)};
  net.params.weights.back().setZero();
  net.params.biases.back().setZero();
  const MatrixXd out = net.Forward(RandomMatrix(3, 5, 4));
  for (int j = 0; j < out.cols(); ++j) {
    EXPECT_NEAR(out(0, j), y.row(0).mean(), 1e-12);
    EXPECT_NEAR(out(1, j), y.row(1).mean(), 1e-12);
  }
}

TEST(MlpTest, HandBuiltNetMatchesClosedForm) {
  // in 2 -> 1 hidden -> out 1: y = 3 * relu(x0 - 2 x1 + 0.5) - 1
  MlpParams<double> p;
  p.weights = {(MatrixXd(1, 2) << 1.0, -2.0).finished(),
               (MatrixXd(1, 1) << 3.0).finished()};
  p.biases = {(VectorXd(1) << 0.5).finished(),
              (VectorXd(1) << -1.0).finished()};
  NormStats<double> norm = NormStats<double>::Identity(2, 1);
  norm.in_mean << 1.0, 0.0;
  norm.in_std << 2.0, 1.0;
  norm.out_mean << 10.0;
  norm.out_std << 0.5;
  const Mlp<double> net{p, norm};
  const auto oracle = [](double a, double b) {
    const double xn0 = (a - 1.0) / 2.0;
    const double h = std::max(0.0, xn0 - 2.0 * b + 0.5);
    return (3.0 * h - 1.0) * 0.5 + 10.0;
  };
  for (const auto& [a, b] : std::vector<std::pair<double, double>>{
           {0.0, 0.0}, {3.0, 0.2}, {-4.0, 1.0}, {7.5, -2.25}}) {
    const MatrixXd out = net.Forward((MatrixXd(2, 1) << a, b).finished());
    EXPECT_NEAR(out(0, 0), oracle(a, b), 1e-12) << a << "," << b;
  }
}

TEST(MlpTest, BatchedForwardEqualsPerColumn) {
  const Mlp<double> net = RandomMlp<double>(4, {16, 16}, 3, 7);
  const MatrixXd x = RandomMatrix(4, 37, 8);
  const MatrixXd batched = net.Forward(x);
  for (int j = 0; j < x.cols(); ++j) {
    const MatrixXd single = net.Forward(MatrixXd(x.col(j)));
    EXPECT_LE((batched.col(j) - single.col(0)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MlpTest, GradientMatchesFiniteDifferences) {
  const Mlp<double> net = RandomMlp<double>(5, {12, 9}, 3, 11);
  const MatrixXd x = RandomMatrix(5, 17, 12);
  const MatrixXd y = RandomMatrix(3, 17, 13);
  MlpParams<double> grads = Backward(net, x, y).gradients;
  const auto loss_at = [&](const MlpParams<double>& p) {
    return Backward(Mlp<double>{p, net.norm}, x, y).loss;
  };
  const double h = 1e-5;
  double max_rel = 0.0;
  auto check = [&](auto get) {
    MlpParams<double> plus = net.params;
    MlpParams<double> minus = net.params;
    get(plus) += h;
    get(minus) -= h;
    const double numeric = (loss_at(plus) - loss_at(minus)) / (2 * h);
    const double analytic = get(grads);
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
  };
  for (int l = 0; l < net.params.num_layers(); ++l) {
    for (Eigen::Index i = 0; i < net.params.weights[l].size(); ++i) {
      check([&](MlpParams<double>& p) -> double& {
        return p.weights[l].data()[i];
      });
    }
    for (Eigen::Index i = 0; i < net.params.biases[l].size(); ++i) {
      check([&](MlpParams<double>& p) -> double& { return p.biases[l][i]; });
    }
  }
  EXPECT_LT(max_rel, 1e-4);
}

TEST(MlpTest, ExactTargetsGiveZeroGradient) {
  const Mlp<double> net = RandomMlp<double>(3, {6}, 2, 21);
  const MatrixXd x = RandomMatrix(3, 10, 22);
  const MatrixXd y = net.Forward(x);
  const auto lg = Backward(net, x, y);
  EXPECT_NEAR(lg.loss, 0.0, 1e-20);
  for (int l = 0; l < lg.gradients.num_layers(); ++l) {
    EXPECT_LE(lg.gradients.weights[l].cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(lg.gradients.biases[l].cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MlpTest, DuplicatedBatchGivesSameMeanGradient) {
  const Mlp<double> net = RandomMlp<double>(3, {6}, 2, 31);
  const MatrixXd x = RandomMatrix(3, 8, 32);
  const MatrixXd y = RandomMatrix(2, 8, 33);
  MatrixXd x2(3, 16);
  MatrixXd y2(2, 16);
  x2 << x, x;
  y2 << y, y;
  const auto a = Backward(net, x, y);
  const auto b = Backward(net, x2, y2);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  for (int l = 0; l < a.gradients.num_layers(); ++l) {
    EXPECT_LE((a.gradients.weights[l] - b.gradients.weights[l])
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);
  }
}

TEST(NormStatsTest, RoundTripIsExactToTolerance) {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd x = RandomMatrix(4, 50, 100 + trial) * 1e3;
    const MatrixXd y = RandomMatrix(3, 50, 200 + trial).array() * 1e-2 + 7.0;
    const auto norm = NormStats<double>::FromSamples(x, y);
    const MatrixXd back = norm.DenormalizeTargets(norm.NormalizeTargets(y));
    EXPECT_LE((back - y).cwiseAbs().maxCoeff(), 1e-10);
    const MatrixXd xn = norm.NormalizeInputs(x);
    EXPECT_LE(xn.rowwise().mean().cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(NormStatsTest, ConstantDimensionUsesFloor) {
  MatrixXd x = RandomMatrix(2, 30, 51);
  x.row(1).setConstant(4.0);
  const auto norm = NormStats<double>::FromSamples(x, x);
  EXPECT_DOUBLE_EQ(norm.in_std[1], kNormStdFloor);
  EXPECT_TRUE(norm.NormalizeInputs(x).allFinite());
}

TEST(AdamTest, FirstStepMovesEachParameterByLearningRate) {
  MlpParams<double> p = InitMlpParams<double>(3, {4}, 2, 61);
  const MlpParams<double> start = p;
  MlpParams<double> g = p.ZerosLike();
  Rng rng(62);
  std::uniform_real_distribution<double> mag(0.5, 2.0);
  std::bernoulli_distribution sign;
  for (auto& w : g.weights) {
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w.data()[i] = (sign(rng) ? 1 : -1) * mag(rng);
    }
  }
  for (auto& b : g.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      b[i] = (sign(rng) ? 1 : -1) * mag(rng);
    }
  }
  AdamConfig cfg;
  auto state = AdamState<double>::For(p);
  AdamStep(p, g, state, cfg);
  for (int l = 0; l < p.num_layers(); ++l) {
    const MatrixXd expected =
        start.weights[l].array() - cfg.learning_rate * g.weights[l].array().sign();
    EXPECT_LE((p.weights[l] - expected).cwiseAbs().maxCoeff(), 1e-9);
    const VectorXd expected_b =
        start.biases[l].array() - cfg.learning_rate * g.biases[l].array().sign();
    EXPECT_LE((p.biases[l] - expected_b).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(AdamTest, ZeroGradientLeavesParametersUnchanged) {
  MlpParams<double> p = InitMlpParams<double>(3, {4}, 2, 71);
  const MlpParams<double> start = p;
  auto state = AdamState<double>::For(p);
  for (int i = 0; i < 10; ++i) AdamStep(p, p.ZerosLike(), state, AdamConfig{});
  EXPECT_EQ(p, start);
}

TEST(AdamTest, MinimizesQuadratic) {
  // A linear "net" (no hidden layer) with the loss (w - target)^2.
  MlpParams<double> p;
  p.weights = {MatrixXd::Zero(1, 2)};
  p.biases = {VectorXd::Zero(1)};
  const Eigen::RowVector2d target(1.5, -0.7);
  const auto loss = [&] { return (p.weights[0] - target).squaredNorm(); };
  const double initial = loss();
  auto state = AdamState<double>::For(p);
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  for (int i = 0; i < 200; ++i) {
    MlpParams<double> g = p.ZerosLike();
    g.weights[0] = 2.0 * (p.weights[0] - target);
    AdamStep(p, g, state, cfg);
  }
  EXPECT_LT(loss(), 1e-3 * initial);
}

TEST(AdamTest, ShapeMismatchThrows) {
  MlpParams<double> p = InitMlpParams<double>(3, {4}, 2, 81);
  MlpParams<double> q = InitMlpParams<double>(3, {5}, 2, 81);
  auto state = AdamState<double>::For(p);
  EXPECT_THROW(AdamStep(p, q, state, AdamConfig{}), Error);
}

TEST(MlpTest, RejectsNonFiniteAndMisshapenInput) {
  const Mlp<double> net = RandomMlp<double>(3, {4}, 1, 91);
  MatrixXd x = MatrixXd::Zero(3, 2);
  x(1, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    net.Forward(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteInput);
  }
  try {
    net.Forward(MatrixXd::Zero(2, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(MlpTest, InitIsSeededAndBounded) {
  const auto a = InitMlpParams<double>(16, {32}, 4, 5);
  const auto b = InitMlpParams<double>(16, {32}, 4, 5);
  const auto c = InitMlpParams<double>(16, {32}, 4, 6);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  EXPECT_LE(a.weights[0].cwiseAbs().maxCoeff(), 0.25);
  EXPECT_LE(a.weights[1].cwiseAbs().maxCoeff(), 1.0 / std::sqrt(32.0));
  EXPECT_EQ(a.hidden_sizes(), std::vector<int>{32});
}

TEST(MlpTest, FloatCastTracksDouble) {
  const Mlp<double> net = RandomMlp<double>(4, {32, 32}, 2, 95);
  const Mlp<float> f{net.params.Cast<float>(), net.norm.Cast<float>()};
  const MatrixXd x = RandomMatrix(4, 20, 96);
  const MatrixXd diff = net.Forward(x) - f.Forward(x.cast<float>()).cast<double>();
  EXPECT_LE(diff.cwiseAbs().maxCoeff(), 1e-4);
}

}  // namespace
}  // namespace mbop
