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

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "mbop/common.hpp"
#include "mbop/episode.hpp"

namespace mbop {

struct EnvSpec {
  std::string name;
  int obs_dim = 0;
  int act_dim = 0;
  VectorXd act_low;
  VectorXd act_high;
  double dt = 0.0;
  int episode_length = 0;

  bool operator==(const EnvSpec& o) const {
    return name == o.name && obs_dim == o.obs_dim && act_dim == o.act_dim &&
           act_low.size() == o.act_low.size() && act_low == o.act_low &&
           act_high.size() == o.act_high.size() && act_high == o.act_high &&
           dt == o.dt && episode_length == o.episode_length;
  }
};

// q: generalized positions, v: generalized velocities, t: step counter.
struct EnvState {
  VectorXd q;
  VectorXd v;
  int t = 0;

  bool operator==(const EnvState& o) const {
    return q.size() == o.q.size() && q == o.q && v.size() == o.v.size() &&
           v == o.v && t == o.t;
  }
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
};

inline VectorXd ClipAction(const VectorXd& action, const EnvSpec& spec) {
  Require(action.size() == spec.act_dim, "action dimension mismatch",
          ErrorCode::kDimensionMismatch);
  return action.cwiseMax(spec.act_low).cwiseMin(spec.act_high);
}

inline void CheckFiniteState(const EnvState& state, const char* where) {
  if (!state.q.allFinite() || !state.v.allFinite()) {
    throw Error(ErrorCode::kIntegrationFailure,
                std::string(where) + ": non-finite state");
  }
}

// ---------------------------------------------------------------------------
// Cart-pole. q = (x, theta), v = (x_dot, theta_dot), theta = 0 is upright.

struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double gravity = 9.81;
  double force_scale = 10.0;
  double dt = 0.01;
  int episode_length = 1000;
};

inline EnvSpec CartPoleSpec(const CartPoleParams& p = {}) {
  return {"cartpole", 5, 1,
          VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 1.0),
          p.dt, p.episode_length};
}

// Accelerations (x_ddot, theta_ddot) of the frictionless cart-pole with a
// uniform rod of half-length l.
inline std::pair<double, double> CartPoleAccelerations(
    const CartPoleParams& p, double theta, double theta_dot, double force) {
  const double total_mass = p.cart_mass + p.pole_mass;
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  const double ml = p.pole_mass * p.pole_half_length;
  const double temp = (force + ml * theta_dot * theta_dot * s) / total_mass;
  const double theta_acc =
      (p.gravity * s - c * temp) /
      (p.pole_half_length *
       (4.0 / 3.0 - p.pole_mass * c * c / total_mass));
  const double x_acc = temp - ml * theta_acc * c / total_mass;
  return {x_acc, theta_acc};
}

inline double CartPoleReward(const EnvState& state) {
  const double x = state.q[0];
  return 0.5 * (1.0 + std::cos(state.q[1])) * std::exp(-x * x / 4.0);
}

// Semi-implicit Euler step with time step `dt` (defaults to p.dt).
inline StepResult CartPoleStep(const EnvState& state, const VectorXd& action,
                               const CartPoleParams& p = {},
                               double dt = 0.0) {
  CheckFiniteState(state, "cartpole_step");
  if (dt <= 0.0) dt = p.dt;
  const double a = std::clamp(action[0], -1.0, 1.0);
  const auto [x_acc, theta_acc] =
      CartPoleAccelerations(p, state.q[1], state.v[1], p.force_scale * a);
  StepResult out;
  out.state.v = state.v;
  out.state.v[0] += dt * x_acc;
  out.state.v[1] += dt * theta_acc;
  out.state.q = state.q + dt * out.state.v;
  out.state.t = state.t + 1;
  CheckFiniteState(out.state, "cartpole_step");
  out.reward = CartPoleReward(out.state);
  return out;
}

// Total mechanical energy with the pole's potential measured from its lowest
// point, so the value is non-negative.
inline double CartPoleEnergy(const EnvState& state,
                             const CartPoleParams& p = {}) {
  const double xd = state.v[0];
  const double thd = state.v[1];
  const double c = std::cos(state.q[1]);
  const double l = p.pole_half_length;
  const double m = p.pole_mass;
  const double kinetic = 0.5 * (p.cart_mass + m) * xd * xd +
                         m * l * xd * thd * c +
                         0.5 * (4.0 / 3.0) * m * l * l * thd * thd;
  const double potential = m * p.gravity * l * (1.0 + c);
  return kinetic + potential;
}

inline VectorXd CartPoleObserve(const EnvState& state) {
  VectorXd obs(5);
  obs << state.q[0], std::cos(state.q[1]), std::sin(state.q[1]), state.v[0],
      state.v[1];
  return obs;
}

// ---------------------------------------------------------------------------
// Point mass: 2-D damped double integrator. q = (x, y), v = (vx, vy).

struct PointMassParams {
  double damping = 0.05;
  double force_scale = 1.0;
  double dt = 0.05;
  int episode_length = 400;
};

inline EnvSpec PointMassSpec(const PointMassParams& p = {}) {
  return {"pointmass", 4, 2,
          VectorXd::Constant(2, -1.0), VectorXd::Constant(2, 1.0),
          p.dt, p.episode_length};
}

inline double PointMassReward(const EnvState& state) {
  return std::clamp(state.v[0], 0.0, 1.0);
}

inline StepResult PointMassStep(const EnvState& state, const VectorXd& action,
                                const PointMassParams& p = {}) {
  CheckFiniteState(state, "pointmass_step");
  const Eigen::Vector2d a = action.head<2>().cwiseMax(-1.0).cwiseMin(1.0);
  StepResult out;
  out.state.v = state.v + p.dt * (p.force_scale * a - p.damping * state.v);
  out.state.q = state.q + p.dt * out.state.v;
  out.state.t = state.t + 1;
  CheckFiniteState(out.state, "pointmass_step");
  out.reward = PointMassReward(out.state);
  return out;
}

inline VectorXd PointMassObserve(const EnvState& state) {
  VectorXd obs(4);
  obs << state.q[0], state.q[1], state.v[0], state.v[1];
  return obs;
}

// ---------------------------------------------------------------------------

// Stateless environment: all mutable state lives in EnvState values owned by
// the caller, so one instance can be shared across threads.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual EnvState InitialState(Rng& rng) const = 0;
  virtual StepResult Step(const EnvState& state,
                          const VectorXd& action) const = 0;
  virtual VectorXd Observe(const EnvState& state) const = 0;
  // Noise-free behavior controller output before clipping.
  virtual VectorXd BehaviorAction(const EnvState& state,
                                  const BehaviorPolicySpec& policy) const = 0;
};

class CartPoleEnv final : public Environment {
 public:
  explicit CartPoleEnv(CartPoleParams params = {})
      : params_(params), spec_(CartPoleSpec(params)) {}

  const EnvSpec& spec() const override { return spec_; }
  const CartPoleParams& params() const { return params_; }

  EnvState InitialState(Rng& rng) const override {
    std::uniform_real_distribution<double> jitter(-0.2, 0.2);
    EnvState s{VectorXd::Zero(2), VectorXd::Zero(2), 0};
    s.q[0] = jitter(rng);
    s.q[1] = std::numbers::pi + jitter(rng);
    return s;
  }

  StepResult Step(const EnvState& state,
                  const VectorXd& action) const override {
    return CartPoleStep(state, action, params_);
  }

  VectorXd Observe(const EnvState& state) const override {
    return CartPoleObserve(state);
  }

  // Energy-pumping swing-up switching to LQR balance within 0.5 rad of
  // upright. `quality` scales both controller outputs.
  VectorXd BehaviorAction(const EnvState& state,
                          const BehaviorPolicySpec& policy) const override {
    Require(policy.kind == BehaviorKind::kScriptedSwingup,
            "cartpole supports scripted-swingup and random behavior only");
    const double x = state.q[0];
    const double xd = state.v[0];
    const double thd = state.v[1];
    const double theta =
        std::remainder(state.q[1], 2.0 * std::numbers::pi);
    const double q = policy.quality;
    double u = 0.0;
    if (std::cos(theta) > std::cos(kBalanceAngle)) {
      u = q * (kLqrGain[0] * x + kLqrGain[1] * theta + kLqrGain[2] * xd +
               kLqrGain[3] * thd);
    } else {
      const double m = params_.pole_mass;
      const double l = params_.pole_half_length;
      const double mgl = m * params_.gravity * l;
      // Pole energy, zero at upright rest.
      const double energy = 0.5 * (4.0 / 3.0) * m * l * l * thd * thd +
                            mgl * (std::cos(theta) - 1.0);
      const double sign = thd * std::cos(theta) >= 0.0 ? 1.0 : -1.0;
      const double pump = kEnergyGain * energy / mgl * sign -
                          kCentering * x - kCentering * xd;
      u = q * std::clamp(pump, -1.0, 1.0);
    }
    return VectorXd::Constant(1, u);
  }

 private:
  static constexpr double kBalanceAngle = 0.5;
  static constexpr double kEnergyGain = 2.0;
  static constexpr double kCentering = 0.5;
  // Continuous-time LQR about upright, Q = diag(1, 10, 0.1, 0.1), R = 1.
  static constexpr double kLqrGain[4] = {1.0, 7.81, 1.21, 1.87};

  CartPoleParams params_;
  EnvSpec spec_;
};

class PointMassEnv final : public Environment {
 public:
  explicit PointMassEnv(PointMassParams params = {})
      : params_(params), spec_(PointMassSpec(params)) {}

  const EnvSpec& spec() const override { return spec_; }
  const PointMassParams& params() const { return params_; }

  EnvState InitialState(Rng& rng) const override {
    std::normal_distribution<double> pos(0.0, 0.1);
    std::normal_distribution<double> vel(0.0, 0.05);
    EnvState s{VectorXd::Zero(2), VectorXd::Zero(2), 0};
    s.q << pos(rng), pos(rng);
    s.v << vel(rng), vel(rng);
    return s;
  }

  StepResult Step(const EnvState& state,
                  const VectorXd& action) const override {
    return PointMassStep(state, action, params_);
  }

  VectorXd Observe(const EnvState& state) const override {
    return PointMassObserve(state);
  }

  // Tracks unit forward (+x) speed while holding the lateral position.
  VectorXd BehaviorAction(const EnvState& state,
                          const BehaviorPolicySpec& policy) const override {
    Require(policy.kind == BehaviorKind::kPdGoal,
            "pointmass supports pd-goal and random behavior only");
    const double q = policy.quality;
    VectorXd u(2);
    u[0] = q * kSpeedGain * (kTargetSpeed - state.v[0]);
    u[1] = q * (-kLateralP * state.q[1] - kLateralD * state.v[1]);
    return u;
  }

 private:
  static constexpr double kTargetSpeed = 1.0;
  static constexpr double kSpeedGain = 2.0;
  static constexpr double kLateralP = 1.0;
  static constexpr double kLateralD = 2.0;

  PointMassParams params_;
  EnvSpec spec_;
};

inline std::unique_ptr<Environment> MakeEnvironment(std::string_view name) {
  if (name == "cartpole") return std::make_unique<CartPoleEnv>();
  if (name == "pointmass") return std::make_unique<PointMassEnv>();
  throw Error(ErrorCode::kInvalidArgument,
              "unknown environment: " + std::string(name));
}

// Runs the behavior policy for `n_episodes` complete episodes. Episode i uses
// the stream DeriveSeed(seed, i) for its initial state and action noise.
inline std::vector<Episode> RunBehaviorPolicy(const Environment& env,
                                              const BehaviorPolicySpec& policy,
                                              int n_episodes,
                                              std::uint64_t seed) {
  Require(n_episodes >= 1, "n_episodes must be >= 1");
  Require(policy.noise_std >= 0.0, "noise_std must be >= 0");
  Require(policy.quality >= 0.0 && policy.quality <= 1.0,
          "quality must lie in [0, 1]");
  const EnvSpec& spec = env.spec();
  std::vector<Episode> episodes;
  episodes.reserve(n_episodes);
  for (int i = 0; i < n_episodes; ++i) {
    const std::uint64_t episode_seed = DeriveSeed(seed, i);
    Rng rng(episode_seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const int steps = spec.episode_length;
    Episode ep;
    ep.observations.resize(steps + 1, spec.obs_dim);
    ep.actions.resize(steps, spec.act_dim);
    ep.rewards.resize(steps);
    ep.meta = {spec.name, policy, episode_seed};

    EnvState state = env.InitialState(rng);
    ep.observations.row(0) = env.Observe(state).transpose();
    for (int t = 0; t < steps; ++t) {
      VectorXd action(spec.act_dim);
      if (policy.kind == BehaviorKind::kRandom) {
        for (int j = 0; j < spec.act_dim; ++j) {
          action[j] = spec.act_low[j] +
                      (spec.act_high[j] - spec.act_low[j]) * unit(rng);
        }
      } else {
        action = env.BehaviorAction(state, policy);
        for (int j = 0; j < spec.act_dim; ++j) {
          action[j] += policy.noise_std * noise(rng);
        }
      }
      action = ClipAction(action, spec);
      StepResult next = env.Step(state, action);
      ep.actions.row(t) = action.transpose();
      ep.rewards[t] = next.reward;
      state = std::move(next.state);
      ep.observations.row(t + 1) = env.Observe(state).transpose();
    }
    ep.episode_return = SumRewards(ep.rewards);
    episodes.push_back(std::move(ep));
  }
  return episodes;
}

}  // namespace mbop
