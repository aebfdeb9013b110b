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
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbop/common.hpp"
#include "mbop/dataset.hpp"
#include "mbop/mlp.hpp"

namespace mbop {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 512;
  int epochs = 40;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<int> hidden = {500, 500};
  std::uint64_t seed = 0;

  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

// K same-topology members sharing one set of normalization statistics.
template <typename Scalar>
class EnsembleNet {
 public:
  EnsembleNet() = default;
  EnsembleNet(LearnerRole role, int obs_dim, int act_dim,
              std::vector<Mlp<Scalar>> members)
      : role_(role),
        obs_dim_(obs_dim),
        act_dim_(act_dim),
        members_(std::move(members)) {
    Require(!members_.empty(), "ensemble needs at least one member");
    Require(members_.front().in_dim() ==
                    RoleInputDim(role, obs_dim, act_dim) &&
                members_.front().out_dim() ==
                    RoleOutputDim(role, obs_dim, act_dim),
            "member dimensions do not match role",
            ErrorCode::kDimensionMismatch);
    for (const auto& m : members_) {
      Require(m.params.SameShape(members_.front().params) &&
                  m.norm == members_.front().norm,
              "ensemble members must share topology and normalization",
              ErrorCode::kTopologyMismatch);
    }
  }

  LearnerRole role() const { return role_; }
  int size() const { return static_cast<int>(members_.size()); }
  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }
  const Mlp<Scalar>& member(int i) const { return members_.at(i); }
  const std::vector<Mlp<Scalar>>& members() const { return members_; }
  const NormStats<Scalar>& norm() const { return members_.front().norm; }

  void CheckHead(int head) const {
    if (head < 0 || head >= size()) {
      throw Error(ErrorCode::kHeadOutOfRange,
                  "ensemble head " + std::to_string(head) +
                      " out of range [0, " + std::to_string(size()) + ")");
    }
  }

  // Inputs are columns of (state; action).
  template <typename Derived>
  Matrix<Scalar> Predict(int head,
                         const Eigen::MatrixBase<Derived>& inputs) const {
    CheckHead(head);
    return members_[head].Forward(inputs);
  }

  template <typename Derived>
  Matrix<Scalar> PredictMean(const Eigen::MatrixBase<Derived>& inputs) const {
    Matrix<Scalar> sum = members_.front().Forward(inputs);
    for (int i = 1; i < size(); ++i) sum += members_[i].Forward(inputs);
    return sum / static_cast<Scalar>(size());
  }

  template <typename To>
  EnsembleNet<To> Cast() const {
    std::vector<Mlp<To>> members;
    for (const auto& m : members_) {
      members.push_back({m.params.template Cast<To>(),
                         m.norm.template Cast<To>()});
    }
    return EnsembleNet<To>(role_, obs_dim_, act_dim_, std::move(members));
  }

  bool operator==(const EnsembleNet&) const = default;

 private:
  LearnerRole role_ = LearnerRole::kModel;
  int obs_dim_ = 0;
  int act_dim_ = 0;
  std::vector<Mlp<Scalar>> members_;
};

// ---------------------------------------------------------------------------
// Single-sample queries used by the planner's reference path and tests.

template <typename Scalar>
Matrix<Scalar> StackInput(const Vector<Scalar>& s, const Vector<Scalar>& a) {
  Matrix<Scalar> x(s.size() + a.size(), 1);
  x.col(0) << s, a;
  return x;
}

template <typename Scalar>
struct ModelPrediction {
  Scalar reward;
  Vector<Scalar> next_state;
};

// Member `head` predicts (r, s' - s); the state is reconstructed.
template <typename Scalar>
ModelPrediction<Scalar> ModelQuery(const EnsembleNet<Scalar>& model,
                                   const Vector<Scalar>& s,
                                   const Vector<Scalar>& a, int head) {
  const Matrix<Scalar> y = model.Predict(head, StackInput(s, a));
  return {y(0, 0), s + y.col(0).tail(model.obs_dim())};
}

template <typename Scalar>
Scalar RewardQueryMean(const EnsembleNet<Scalar>& model,
                       const Vector<Scalar>& s, const Vector<Scalar>& a) {
  const Matrix<Scalar> x = StackInput(s, a);
  Scalar sum = 0;
  for (int i = 0; i < model.size(); ++i) sum += model.Predict(i, x)(0, 0);
  return sum / static_cast<Scalar>(model.size());
}

template <typename Scalar>
Vector<Scalar> BcQuery(const EnsembleNet<Scalar>& bc, const Vector<Scalar>& s,
                       const Vector<Scalar>& a_prev, int head) {
  return bc.Predict(head, StackInput(s, a_prev)).col(0);
}

template <typename Scalar>
Scalar ValueQueryMean(const EnsembleNet<Scalar>& value,
                      const Vector<Scalar>& s, const Vector<Scalar>& a_prev) {
  const Matrix<Scalar> x = StackInput(s, a_prev);
  Scalar sum = 0;
  for (int i = 0; i < value.size(); ++i) sum += value.Predict(i, x)(0, 0);
  return sum / static_cast<Scalar>(value.size());
}

// ---------------------------------------------------------------------------
// Training.

struct MemberReport {
  std::vector<double> train_loss;  // per epoch, normalized MSE
  std::vector<double> valid_loss;  // per epoch; empty without validation rows
};

struct TrainingReport {
  LearnerRole role = LearnerRole::kModel;
  std::vector<MemberReport> members;
};

inline std::uint64_t MemberInitSeed(std::uint64_t seed, int member) {
  return seed + static_cast<std::uint64_t>(member);
}

inline std::uint64_t MemberShuffleSeed(std::uint64_t seed, int member) {
  return DeriveSeed(seed + static_cast<std::uint64_t>(member), 0x5348554646ULL);
}

template <typename Scalar>
Scalar NormalizedMse(const MlpParams<Scalar>& p, const Matrix<Scalar>& xn,
                     const Matrix<Scalar>& yn, Eigen::Index chunk = 4096) {
  double sum = 0.0;
  for (Eigen::Index c0 = 0; c0 < xn.cols(); c0 += chunk) {
    const Eigen::Index n = std::min(chunk, xn.cols() - c0);
    const Matrix<Scalar> pred =
        ForwardNormalized(p, Matrix<Scalar>(xn.middleCols(c0, n)));
    sum += static_cast<double>((pred - yn.middleCols(c0, n)).squaredNorm());
  }
  return static_cast<Scalar>(sum / static_cast<double>(yn.size()));
}

// Trains one member on already-normalized samples.
template <typename Scalar>
MlpParams<Scalar> TrainMember(const Matrix<Scalar>& xn,
                              const Matrix<Scalar>& yn,
                              const Matrix<Scalar>* valid_xn,
                              const Matrix<Scalar>* valid_yn,
                              const TrainConfig& config, int member,
                              MemberReport& report) {
  Require(config.learning_rate > 0 && config.batch_size > 0 &&
              config.epochs > 0,
          "train config values must be positive");
  MlpParams<Scalar> params = InitMlpParams<Scalar>(
      static_cast<int>(xn.rows()), config.hidden,
      static_cast<int>(yn.rows()), MemberInitSeed(config.seed, member));
  AdamState<Scalar> adam = AdamState<Scalar>::For(params);
  Rng shuffle_rng(MemberShuffleSeed(config.seed, member));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(xn.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  Matrix<Scalar> xb;
  Matrix<Scalar> yb;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto n = static_cast<Eigen::Index>(end - start);
      xb.resize(xn.rows(), n);
      yb.resize(yn.rows(), n);
      for (Eigen::Index j = 0; j < n; ++j) {
        xb.col(j) = xn.col(order[start + static_cast<std::size_t>(j)]);
        yb.col(j) = yn.col(order[start + static_cast<std::size_t>(j)]);
      }
      LossAndGradients<Scalar> lg = BackwardNormalized(params, xb, yb);
      if (!std::isfinite(static_cast<double>(lg.loss))) {
        throw Error(ErrorCode::kDivergence,
                    "ensemble member " + std::to_string(member) +
                        " diverged at epoch " + std::to_string(epoch + 1) +
                        " (non-finite loss)");
      }
      epoch_loss += static_cast<double>(lg.loss) * static_cast<double>(n);
      AdamStep(params, lg.gradients, adam, config.adam());
    }
    report.train_loss.push_back(epoch_loss /
                                static_cast<double>(order.size()));
    if (valid_xn != nullptr && valid_xn->cols() > 0) {
      report.valid_loss.push_back(
          static_cast<double>(NormalizedMse(params, *valid_xn, *valid_yn)));
    }
  }
  return params;
}

template <typename Scalar>
struct TrainedEnsemble {
  EnsembleNet<Scalar> net;
  TrainingReport report;
};

// Every member sees the full sample set; members differ only in their init
// seed (seed + i) and shuffle stream. Normalization comes from `train`.
template <typename Scalar>
TrainedEnsemble<Scalar> TrainEnsemble(const TrainingRows& train,
                                      const TrainingRows* valid,
                                      LearnerRole role, int obs_dim,
                                      int act_dim, int ensemble_size,
                                      const TrainConfig& config) {
  Require(train.size() > 0, "training rows must be non-empty");
  Require(ensemble_size >= 1, "ensemble size must be >= 1");
  Require(train.inputs.rows() == RoleInputDim(role, obs_dim, act_dim) &&
              train.targets.rows() == RoleOutputDim(role, obs_dim, act_dim),
          "training rows do not match role dimensions",
          ErrorCode::kDimensionMismatch);
  const NormStats<Scalar> norm =
      NormStats<Scalar>::FromSamples(train.inputs, train.targets);
  const Matrix<Scalar> xn = norm.NormalizeInputs(train.inputs.cast<Scalar>());
  const Matrix<Scalar> yn =
      norm.NormalizeTargets(train.targets.cast<Scalar>());
  Matrix<Scalar> vxn;
  Matrix<Scalar> vyn;
  const bool has_valid = valid != nullptr && valid->size() > 0;
  if (has_valid) {
    vxn = norm.NormalizeInputs(valid->inputs.cast<Scalar>());
    vyn = norm.NormalizeTargets(valid->targets.cast<Scalar>());
  }

  TrainedEnsemble<Scalar> out;
  out.report.role = role;
  out.report.members.resize(static_cast<std::size_t>(ensemble_size));
  std::vector<Mlp<Scalar>> members;
  for (int i = 0; i < ensemble_size; ++i) {
    MlpParams<Scalar> params = TrainMember<Scalar>(
        xn, yn, has_valid ? &vxn : nullptr, has_valid ? &vyn : nullptr,
        config, i, out.report.members[static_cast<std::size_t>(i)]);
    members.push_back({std::move(params), norm});
  }
  out.net = EnsembleNet<Scalar>(role, obs_dim, act_dim, std::move(members));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then raw little-endian parameter arrays
// (per member, per layer: weights column-major, then biases).

inline constexpr int kCheckpointVersion = 1;

template <typename Scalar>
constexpr const char* ScalarTag() {
  if constexpr (std::is_same_v<Scalar, float>) {
    return "float32";
  } else {
    static_assert(std::is_same_v<Scalar, double>);
    return "float64";
  }
}

template <typename Scalar>
void SaveEnsemble(const EnsembleNet<Scalar>& net,
                  const std::filesystem::path& path) {
  const auto& first = net.member(0);
  const auto vec = [](const Vector<Scalar>& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  nlohmann::json header = {
      {"format", "mbop-ensemble"},
      {"version", kCheckpointVersion},
      {"role", LearnerRoleName(net.role())},
      {"members", net.size()},
      {"obs_dim", net.obs_dim()},
      {"act_dim", net.act_dim()},
      {"in_dim", first.in_dim()},
      {"out_dim", first.out_dim()},
      {"hidden", first.params.hidden_sizes()},
      {"scalar", ScalarTag<Scalar>()},
      {"norm",
       {{"in_mean", vec(net.norm().in_mean)},
        {"in_std", vec(net.norm().in_std)},
        {"out_mean", vec(net.norm().out_mean)},
        {"out_std", vec(net.norm().out_std)}}}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  Require(static_cast<bool>(out), "cannot open for writing: " + path.string(),
          ErrorCode::kIo);
  out << header.dump() << '\n';
  for (const auto& m : net.members()) {
    for (int i = 0; i < m.params.num_layers(); ++i) {
      out.write(reinterpret_cast<const char*>(m.params.weights[i].data()),
                static_cast<std::streamsize>(m.params.weights[i].size() *
                                             sizeof(Scalar)));
      out.write(reinterpret_cast<const char*>(m.params.biases[i].data()),
                static_cast<std::streamsize>(m.params.biases[i].size() *
                                             sizeof(Scalar)));
    }
  }
  Require(static_cast<bool>(out), "write failed: " + path.string(),
          ErrorCode::kIo);
}

namespace internal {

template <typename Stored, typename Scalar>
void ReadArray(std::istream& in, Scalar* dst, Eigen::Index n,
               const std::string& path) {
  std::vector<Stored> buf(static_cast<std::size_t>(n));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(n * sizeof(Stored)));
  Require(in.gcount() == static_cast<std::streamsize>(n * sizeof(Stored)),
          "checkpoint truncated: " + path, ErrorCode::kTruncatedFile);
  for (Eigen::Index i = 0; i < n; ++i) {
    dst[i] = static_cast<Scalar>(buf[static_cast<std::size_t>(i)]);
  }
}

}  // namespace internal

// Loads into any Scalar; parameters stored at another precision are cast.
template <typename Scalar>
EnsembleNet<Scalar> LoadEnsemble(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), "cannot open for reading: " + path.string(),
          ErrorCode::kIo);
  std::string line;
  Require(static_cast<bool>(std::getline(in, line)),
          "empty checkpoint: " + path.string(), ErrorCode::kTruncatedFile);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kTruncatedFile,
                "unreadable checkpoint header: " + path.string());
  }
  if (h.value("format", "") != "mbop-ensemble" ||
      h.value("version", -1) != kCheckpointVersion) {
    throw Error(ErrorCode::kSchemaVersion,
                "unsupported checkpoint version in " + path.string());
  }
  const LearnerRole role = ParseLearnerRole(h.at("role").get<std::string>());
  const int k = h.at("members").get<int>();
  const int obs_dim = h.at("obs_dim").get<int>();
  const int act_dim = h.at("act_dim").get<int>();
  const int in_dim = h.at("in_dim").get<int>();
  const int out_dim = h.at("out_dim").get<int>();
  const auto hidden = h.at("hidden").get<std::vector<int>>();
  const auto tag = h.at("scalar").get<std::string>();
  Require(tag == "float32" || tag == "float64",
          "unknown checkpoint scalar type " + tag, ErrorCode::kSchemaVersion);

  auto norm_vec = [&](const char* key) {
    const auto v = h.at("norm").at(key).get<std::vector<double>>();
    return Vector<Scalar>(
        Eigen::Map<const VectorXd>(v.data(),
                                   static_cast<Eigen::Index>(v.size()))
            .cast<Scalar>());
  };
  NormStats<Scalar> norm{norm_vec("in_mean"), norm_vec("in_std"),
                         norm_vec("out_mean"), norm_vec("out_std")};
  Require(norm.in_mean.size() == in_dim && norm.out_mean.size() == out_dim,
          "checkpoint normalization has wrong size",
          ErrorCode::kDimensionMismatch);

  std::vector<Mlp<Scalar>> members;
  for (int m = 0; m < k; ++m) {
    MlpParams<Scalar> p = InitMlpParams<Scalar>(in_dim, hidden, out_dim, 0);
    for (int i = 0; i < p.num_layers(); ++i) {
      if (tag == "float32") {
        internal::ReadArray<float>(in, p.weights[i].data(),
                                   p.weights[i].size(), path.string());
        internal::ReadArray<float>(in, p.biases[i].data(), p.biases[i].size(),
                                   path.string());
      } else {
        internal::ReadArray<double>(in, p.weights[i].data(),
                                    p.weights[i].size(), path.string());
        internal::ReadArray<double>(in, p.biases[i].data(),
                                    p.biases[i].size(), path.string());
      }
    }
    members.push_back({std::move(p), norm});
  }
  return EnsembleNet<Scalar>(role, obs_dim, act_dim, std::move(members));
}

}  // namespace mbop
