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

#include <filesystem>
#include <random>
#include <string>

#include "mbop/dataset.hpp"
#include "mbop/ensemble.hpp"

namespace mbop::testing {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mbop_test_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Cart-pole-shaped episode (obs 5, act 1) with random contents.
inline Episode MakeSyntheticEpisode(int steps, int tag) {
  Rng rng(DeriveSeed(1234, tag, steps));
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Episode e;
  e.observations = MatrixXd::NullaryExpr(steps + 1, 5, [&] { return g(rng); });
  e.actions = MatrixXd::NullaryExpr(steps, 1, [&] { return u(rng) * 2 - 1; });
  e.rewards = VectorXd::NullaryExpr(steps, [&] { return u(rng); });
  e.episode_return = SumRewards(e.rewards);
  e.meta = {"cartpole", {BehaviorKind::kRandom, 0.0, 1.0},
            static_cast<std::uint64_t>(tag)};
  return e;
}

inline Dataset MakeSyntheticDataset(int episodes, int steps, int tag) {
  Dataset d{CartPoleSpec(), {}};
  for (int i = 0; i < episodes; ++i) {
    d.episodes.push_back(MakeSyntheticEpisode(steps, tag * 100000 + i));
  }
  return d;
}

template <typename Scalar>
Mlp<Scalar> RandomMlp(int in, const std::vector<int>& hidden, int out,
                      std::uint64_t seed) {
  Mlp<Scalar> m{InitMlpParams<Scalar>(in, hidden, out, seed),
                NormStats<Scalar>::Identity(in, out)};
  // Non-trivial normalization so normalize/denormalize paths are exercised.
  Rng rng(seed ^ 0xabcdef);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int i = 0; i < in; ++i) {
    m.norm.in_mean[i] = static_cast<Scalar>(u(rng) - 1.0);
    m.norm.in_std[i] = static_cast<Scalar>(u(rng));
  }
  for (int i = 0; i < out; ++i) {
    m.norm.out_mean[i] = static_cast<Scalar>(u(rng) - 1.0);
    m.norm.out_std[i] = static_cast<Scalar>(u(rng) * 0.1);
  }
  return m;
}

// Ensemble of K random members sharing the normalization of member 0.
template <typename Scalar>
EnsembleNet<Scalar> RandomEnsemble(LearnerRole role, int obs_dim, int act_dim,
                                   int k, const std::vector<int>& hidden,
                                   std::uint64_t seed) {
  const int in = RoleInputDim(role, obs_dim, act_dim);
  const int out = RoleOutputDim(role, obs_dim, act_dim);
  std::vector<Mlp<Scalar>> members;
  const Mlp<Scalar> first = RandomMlp<Scalar>(in, hidden, out, seed);
  for (int i = 0; i < k; ++i) {
    members.push_back({InitMlpParams<Scalar>(in, hidden, out, seed + 1 + i),
                       first.norm});
  }
  return EnsembleNet<Scalar>(role, obs_dim, act_dim, std::move(members));
}

}  // namespace mbop::testing
