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

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mbop/common.hpp"

namespace mbop {

inline constexpr double kNormStdFloor = 1e-6;

// Per-dimension affine normalization of network inputs and targets.
template <typename Scalar>
struct NormStats {
  Vector<Scalar> in_mean;
  Vector<Scalar> in_std;
  Vector<Scalar> out_mean;
  Vector<Scalar> out_std;

  static NormStats Identity(int in_dim, int out_dim) {
    return {Vector<Scalar>::Zero(in_dim), Vector<Scalar>::Ones(in_dim),
            Vector<Scalar>::Zero(out_dim), Vector<Scalar>::Ones(out_dim)};
  }

  // Column-wise statistics over samples; std is the population std, floored.
  static NormStats FromSamples(const MatrixXd& inputs,
                               const MatrixXd& targets) {
    auto stats = [](const MatrixXd& m, Vector<Scalar>& mean,
                    Vector<Scalar>& std) {
      const VectorXd mu = m.rowwise().mean();
      const VectorXd var =
          (m.colwise() - mu).array().square().rowwise().mean();
      mean = mu.cast<Scalar>();
      std = var.array().sqrt().max(kNormStdFloor).matrix().cast<Scalar>();
    };
    NormStats out;
    stats(inputs, out.in_mean, out.in_std);
    stats(targets, out.out_mean, out.out_std);
    return out;
  }

  template <typename Derived>
  Matrix<Scalar> NormalizeInputs(const Eigen::MatrixBase<Derived>& x) const {
    return ((x.colwise() - in_mean).array().colwise() / in_std.array())
        .matrix();
  }
  template <typename Derived>
  Matrix<Scalar> NormalizeTargets(const Eigen::MatrixBase<Derived>& y) const {
    return ((y.colwise() - out_mean).array().colwise() / out_std.array())
        .matrix();
  }
  template <typename Derived>
  Matrix<Scalar> DenormalizeTargets(
      const Eigen::MatrixBase<Derived>& yn) const {
    return ((yn.array().colwise() * out_std.array()).matrix().colwise() +
            out_mean);
  }

  template <typename To>
  NormStats<To> Cast() const {
    return {in_mean.template cast<To>(), in_std.template cast<To>(),
            out_mean.template cast<To>(), out_std.template cast<To>()};
  }

  bool operator==(const NormStats& o) const {
    return in_mean == o.in_mean && in_std == o.in_std &&
           out_mean == o.out_mean && out_std == o.out_std;
  }
};

// Weights and biases of a fully connected net; layer i maps
// weights[i].cols() -> weights[i].rows(). Also used for gradients and Adam
// moments, which share the shape.
template <typename Scalar>
struct MlpParams {
  std::vector<Matrix<Scalar>> weights;
  std::vector<Vector<Scalar>> biases;

  int num_layers() const { return static_cast<int>(weights.size()); }
  int in_dim() const { return static_cast<int>(weights.front().cols()); }
  int out_dim() const { return static_cast<int>(weights.back().rows()); }

  std::vector<int> hidden_sizes() const {
    std::vector<int> h;
    for (int i = 0; i + 1 < num_layers(); ++i) {
      h.push_back(static_cast<int>(weights[i].rows()));
    }
    return h;
  }

  MlpParams ZerosLike() const {
    MlpParams z;
    for (const auto& w : weights) {
      z.weights.push_back(Matrix<Scalar>::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : biases) {
      z.biases.push_back(Vector<Scalar>::Zero(b.size()));
    }
    return z;
  }

  bool SameShape(const MlpParams& o) const {
    if (o.num_layers() != num_layers()) return false;
    for (int i = 0; i < num_layers(); ++i) {
      if (weights[i].rows() != o.weights[i].rows() ||
          weights[i].cols() != o.weights[i].cols() ||
          biases[i].size() != o.biases[i].size()) {
        return false;
      }
    }
    return true;
  }

  bool AllFinite() const {
    for (const auto& w : weights) {
      if (!w.allFinite()) return false;
    }
    for (const auto& b : biases) {
      if (!b.allFinite()) return false;
    }
    return true;
  }

  template <typename To>
  MlpParams<To> Cast() const {
    MlpParams<To> out;
    for (const auto& w : weights) out.weights.push_back(w.template cast<To>());
    for (const auto& b : biases) out.biases.push_back(b.template cast<To>());
    return out;
  }

  bool operator==(const MlpParams& o) const {
    return SameShape(o) && weights == o.weights && biases == o.biases;
  }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
template <typename Scalar>
MlpParams<Scalar> InitMlpParams(int in_dim, const std::vector<int>& hidden,
                                int out_dim, std::uint64_t seed) {
  Require(in_dim > 0 && out_dim > 0, "network dims must be positive");
  Rng rng(seed);
  MlpParams<Scalar> p;
  int fan_in = in_dim;
  std::vector<int> sizes = hidden;
  sizes.push_back(out_dim);
  for (int width : sizes) {
    Require(width > 0, "layer widths must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix<Scalar> w(width, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        w(i, j) = static_cast<Scalar>(u(rng));
      }
    }
    Vector<Scalar> b(width);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      b[i] = static_cast<Scalar>(u(rng));
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
    fan_in = width;
  }
  return p;
}

// Forward pass in normalized space; ReLU between layers, linear output.
// Samples are columns.
template <typename Scalar>
Matrix<Scalar> ForwardNormalized(const MlpParams<Scalar>& p,
                                 const Matrix<Scalar>& xn) {
  Matrix<Scalar> h = xn;
  for (int i = 0; i < p.num_layers(); ++i) {
    Matrix<Scalar> z = p.weights[i] * h;
    z.colwise() += p.biases[i];
    if (i + 1 < p.num_layers()) z = z.cwiseMax(Scalar(0));
    h = std::move(z);
  }
  return h;
}

template <typename Scalar>
struct Mlp {
  MlpParams<Scalar> params;
  NormStats<Scalar> norm;

  int in_dim() const { return params.in_dim(); }
  int out_dim() const { return params.out_dim(); }

  // Raw input -> raw output (normalize, evaluate, denormalize).
  template <typename Derived>
  Matrix<Scalar> Forward(const Eigen::MatrixBase<Derived>& x) const {
    Require(x.rows() == in_dim(), "network input dimension mismatch",
            ErrorCode::kDimensionMismatch);
    Require(x.allFinite(), "non-finite network input",
            ErrorCode::kNonFiniteInput);
    return norm.DenormalizeTargets(
        ForwardNormalized(params, norm.NormalizeInputs(x)));
  }

  Vector<Scalar> Forward(const Vector<Scalar>& x) const {
    return Forward(Matrix<Scalar>(x)).col(0);
  }

  bool operator==(const Mlp&) const = default;
};

template <typename Scalar>
struct LossAndGradients {
  Scalar loss = 0;
  MlpParams<Scalar> gradients;
};

// Exact gradients of L = mean over samples and output dims of the squared
// error, with inputs and targets already normalized.
template <typename Scalar>
LossAndGradients<Scalar> BackwardNormalized(const MlpParams<Scalar>& p,
                                            const Matrix<Scalar>& xn,
                                            const Matrix<Scalar>& yn) {
  Require(xn.cols() > 0 && xn.cols() == yn.cols(),
          "backward needs a non-empty batch");
  const int layers = p.num_layers();
  // activations[i] is the input to layer i.
  std::vector<Matrix<Scalar>> activations;
  activations.reserve(layers);
  activations.push_back(xn);
  Matrix<Scalar> out;
  for (int i = 0; i < layers; ++i) {
    Matrix<Scalar> z = p.weights[i] * activations.back();
    z.colwise() += p.biases[i];
    if (i + 1 < layers) {
      activations.push_back(z.cwiseMax(Scalar(0)));
    } else {
      out = std::move(z);
    }
  }
  const Scalar denom = static_cast<Scalar>(yn.size());
  Matrix<Scalar> diff = out - yn;
  LossAndGradients<Scalar> res;
  res.loss = diff.squaredNorm() / denom;
  res.gradients = p.ZerosLike();

  Matrix<Scalar> delta = (Scalar(2) / denom) * diff;
  for (int i = layers - 1; i >= 0; --i) {
    res.gradients.weights[i].noalias() = delta * activations[i].transpose();
    res.gradients.biases[i] = delta.rowwise().sum();
    if (i > 0) {
      Matrix<Scalar> back = p.weights[i].transpose() * delta;
      // ReLU derivative: activation > 0 iff pre-activation > 0.
      delta = (activations[i].array() > Scalar(0))
                  .select(back, Scalar(0));
    }
  }
  return res;
}

// Raw-space batch; loss is measured in normalized target space.
template <typename Scalar>
LossAndGradients<Scalar> Backward(const Mlp<Scalar>& net,
                                  const Matrix<Scalar>& inputs,
                                  const Matrix<Scalar>& targets) {
  return BackwardNormalized(net.params, net.norm.NormalizeInputs(inputs),
                            net.norm.NormalizeTargets(targets));
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState {
  MlpParams<Scalar> m;
  MlpParams<Scalar> v;
  long long step = 0;

  static AdamState For(const MlpParams<Scalar>& params) {
    return {params.ZerosLike(), params.ZerosLike(), 0};
  }
};

// Adam with bias correction, applied in place.
template <typename Scalar>
void AdamStep(MlpParams<Scalar>& params, const MlpParams<Scalar>& grads,
              AdamState<Scalar>& state, const AdamConfig& config) {
  Require(params.SameShape(grads) && params.SameShape(state.m),
          "adam state shape mismatch", ErrorCode::kDimensionMismatch);
  ++state.step;
  const Scalar b1 = static_cast<Scalar>(config.beta1);
  const Scalar b2 = static_cast<Scalar>(config.beta2);
  const Scalar lr = static_cast<Scalar>(config.learning_rate);
  const Scalar eps = static_cast<Scalar>(config.epsilon);
  const double step = static_cast<double>(state.step);
  const Scalar c1 =
      static_cast<Scalar>(1.0 - std::pow(config.beta1, step));
  const Scalar c2 =
      static_cast<Scalar>(1.0 - std::pow(config.beta2, step));

  auto update = [&](auto& value, const auto& g, auto& m, auto& v) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    value.array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (int i = 0; i < params.num_layers(); ++i) {
    update(params.weights[i], grads.weights[i], state.m.weights[i],
           state.v.weights[i]);
    update(params.biases[i], grads.biases[i], state.m.biases[i],
           state.v.biases[i]);
  }
}

}  // namespace mbop
