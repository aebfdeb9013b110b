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
#include <string>

#include <nlohmann/json.hpp>

#include "mbop/common.hpp"

namespace mbop {

enum class ObjectiveKind { kNone, kStatePenalty, kHeadingGoal };

// Secondary state -> scalar reward used to condition planning at deployment
// time. Operates on observation vectors.
//
//   state-penalty: -1 when obs[index] is on the forbidden side of threshold,
//                  0 otherwise.
//   heading-goal:  projection of the velocity (obs[vx_index], obs[vy_index])
//                  onto the unit heading.
struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::kNone;
  int index = 0;
  double threshold = 0.0;
  bool forbid_below = true;
  int vx_index = 2;
  int vy_index = 3;
  Eigen::Vector2d heading = Eigen::Vector2d(1.0, 0.0);

  static ObjectiveSpec None() { return {}; }

  static ObjectiveSpec Penalty(int index, double threshold,
                               bool forbid_below = true) {
    ObjectiveSpec o;
    o.kind = ObjectiveKind::kStatePenalty;
    o.index = index;
    o.threshold = threshold;
    o.forbid_below = forbid_below;
    return o;
  }

  static ObjectiveSpec Heading(const Eigen::Vector2d& heading,
                               int vx_index = 2, int vy_index = 3) {
    ObjectiveSpec o;
    o.kind = ObjectiveKind::kHeadingGoal;
    o.heading = heading;
    o.vx_index = vx_index;
    o.vy_index = vy_index;
    o.Validate();
    return o;
  }

  void Validate() const {
    if (kind == ObjectiveKind::kHeadingGoal) {
      Require(std::abs(heading.norm() - 1.0) < 1e-9,
              "heading vector must have unit norm");
    }
  }

  template <typename Derived>
  bool Violated(const Eigen::MatrixBase<Derived>& obs) const {
    if (kind != ObjectiveKind::kStatePenalty) return false;
    const double v = static_cast<double>(obs(index));
    return forbid_below ? v < threshold : v > threshold;
  }

  template <typename Derived>
  double Evaluate(const Eigen::MatrixBase<Derived>& obs) const {
    switch (kind) {
      case ObjectiveKind::kNone:
        return 0.0;
      case ObjectiveKind::kStatePenalty:
        return Violated(obs) ? -1.0 : 0.0;
      case ObjectiveKind::kHeadingGoal:
        return heading[0] * static_cast<double>(obs(vx_index)) +
               heading[1] * static_cast<double>(obs(vy_index));
    }
    return 0.0;
  }
};

inline nlohmann::json ObjectiveToJson(const ObjectiveSpec& o) {
  switch (o.kind) {
    case ObjectiveKind::kNone:
      return {{"kind", "none"}};
    case ObjectiveKind::kStatePenalty:
      return {{"kind", "state-penalty"},
              {"index", o.index},
              {"threshold", o.threshold},
              {"side", o.forbid_below ? "below" : "above"}};
    case ObjectiveKind::kHeadingGoal:
      return {{"kind", "heading-goal"},
              {"heading", {o.heading[0], o.heading[1]}},
              {"velocity_indices", {o.vx_index, o.vy_index}}};
  }
  return {};
}

inline ObjectiveSpec ObjectiveFromJson(const nlohmann::json& j) {
  const std::string kind = j.value("kind", "none");
  if (kind == "none") return ObjectiveSpec::None();
  if (kind == "state-penalty") {
    const std::string side = j.value("side", "below");
    Require(side == "below" || side == "above",
            "state-penalty side must be 'below' or 'above'");
    return ObjectiveSpec::Penalty(j.value("index", 0),
                                  j.value("threshold", 0.0), side == "below");
  }
  if (kind == "heading-goal") {
    const auto h = j.at("heading").get<std::vector<double>>();
    Require(h.size() == 2, "heading must have two components");
    std::vector<int> idx = j.value("velocity_indices", std::vector<int>{2, 3});
    Require(idx.size() == 2, "velocity_indices must have two entries");
    return ObjectiveSpec::Heading(Eigen::Vector2d(h[0], h[1]), idx[0], idx[1]);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown objective kind: " + kind);
}

}  // namespace mbop
