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

#include <cstdint>
#include <string>

#include "mbop/common.hpp"

namespace mbop {

enum class BehaviorKind { kScriptedSwingup, kPdGoal, kRandom };

inline std::string_view BehaviorKindName(BehaviorKind kind) {
  switch (kind) {
    case BehaviorKind::kScriptedSwingup: return "scripted-swingup";
    case BehaviorKind::kPdGoal: return "pd-goal";
    case BehaviorKind::kRandom: return "random";
  }
  return "unknown";
}

inline BehaviorKind ParseBehaviorKind(std::string_view name) {
  if (name == "scripted-swingup") return BehaviorKind::kScriptedSwingup;
  if (name == "pd-goal") return BehaviorKind::kPdGoal;
  if (name == "random") return BehaviorKind::kRandom;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown behavior policy kind: " + std::string(name));
}

struct BehaviorPolicySpec {
  BehaviorKind kind = BehaviorKind::kScriptedSwingup;
  double noise_std = 0.0;  // action units
  double quality = 1.0;    // in [0, 1]; scales controller gains

  bool operator==(const BehaviorPolicySpec&) const = default;
};

struct EpisodeMeta {
  std::string env;
  BehaviorPolicySpec policy;
  std::uint64_t seed = 0;

  bool operator==(const EpisodeMeta&) const = default;
};

// One logged episode. Rows are time steps: observations has T+1 rows,
// actions and rewards have T.
struct Episode {
  MatrixXd observations;
  MatrixXd actions;
  VectorXd rewards;
  double episode_return = 0.0;
  EpisodeMeta meta;

  int length() const { return static_cast<int>(rewards.size()); }

  bool operator==(const Episode& other) const {
    return observations.rows() == other.observations.rows() &&
           observations.cols() == other.observations.cols() &&
           observations == other.observations &&
           actions.rows() == other.actions.rows() &&
           actions.cols() == other.actions.cols() &&
           actions == other.actions && rewards.size() == other.rewards.size() &&
           rewards == other.rewards &&
           episode_return == other.episode_return && meta == other.meta;
  }
};

// Sequential left-to-right sum; Episode::episode_return is defined as this.
inline double SumRewards(const VectorXd& rewards) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < rewards.size(); ++i) total += rewards[i];
  return total;
}

inline void ValidateEpisode(const Episode& episode) {
  const auto steps = episode.rewards.size();
  Require(episode.observations.rows() == steps + 1 &&
              episode.actions.rows() == steps,
          "episode row counts inconsistent", ErrorCode::kDimensionMismatch);
  Require(episode.episode_return == SumRewards(episode.rewards),
          "episode return differs from the sum of rewards",
          ErrorCode::kInvalidArgument);
}

}  // namespace mbop
