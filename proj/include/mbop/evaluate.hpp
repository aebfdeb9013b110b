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

#include <chrono>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mbop/common.hpp"
#include "mbop/dataset.hpp"
#include "mbop/envs.hpp"
#include "mbop/objective.hpp"
#include "mbop/planner.hpp"

namespace mbop {

// Policy variants: the planner modes plus the bare BC prior.
enum class PolicyVariant { kMbop, kNopp, kNovf, kPddm, kBc };

inline std::string_view PolicyVariantName(PolicyVariant v) {
  switch (v) {
    case PolicyVariant::kMbop: return "MBOP";
    case PolicyVariant::kNopp: return "NOPP";
    case PolicyVariant::kNovf: return "NOVF";
    case PolicyVariant::kPddm: return "PDDM";
    case PolicyVariant::kBc: return "BC";
  }
  return "unknown";
}

inline PolicyVariant ParsePolicyVariant(std::string_view name) {
  if (name == "BC") return PolicyVariant::kBc;
  switch (ParsePlannerMode(name)) {
    case PlannerMode::kMbop: return PolicyVariant::kMbop;
    case PlannerMode::kNopp: return PolicyVariant::kNopp;
    case PlannerMode::kNovf: return PolicyVariant::kNovf;
    case PlannerMode::kPddm: return PolicyVariant::kPddm;
  }
  return PolicyVariant::kMbop;
}

inline PlannerMode VariantPlannerMode(PolicyVariant v) {
  switch (v) {
    case PolicyVariant::kNopp: return PlannerMode::kNopp;
    case PolicyVariant::kNovf: return PlannerMode::kNovf;
    case PolicyVariant::kPddm: return PlannerMode::kPddm;
    default: return PlannerMode::kMbop;
  }
}

// Ensemble-mean f_b, fed its own previous action (zero at episode start).
template <typename Scalar>
class BcPolicy {
 public:
  BcPolicy(const EnsembleNet<Scalar>& bc, ActionBounds bounds)
      : bc_(&bc), bounds_(std::move(bounds)) {
    Reset();
  }

  void Reset() { prev_ = VectorXd::Zero(bc_->act_dim()); }

  VectorXd Act(const VectorXd& observation) {
    Matrix<Scalar> x(bc_->obs_dim() + bc_->act_dim(), 1);
    x.col(0) << observation.cast<Scalar>(), prev_.cast<Scalar>();
    VectorXd a = bc_->PredictMean(x).col(0).template cast<double>();
    a = a.cwiseMax(bounds_.low).cwiseMin(bounds_.high);
    prev_ = a;
    return a;
  }

 private:
  const EnsembleNet<Scalar>* bc_;
  ActionBounds bounds_;
  VectorXd prev_;
};

struct EvalOptions {
  PolicyVariant variant = PolicyVariant::kMbop;
  PlannerConfig planner;  // mode is overridden by `variant`
  ObjectiveSpec objective;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  int episodes_per_seed = 20;
  // Truncates episodes below the env's length when > 0.
  int max_steps = 0;
  // Planner trace rows are prefixed with "seed,episode,".
  std::ostream* trace = nullptr;
};

struct EpisodeResult {
  std::uint64_t seed = 0;
  int episode = 0;
  double episode_return = 0.0;
  int steps = 0;
  int violations = 0;           // steps whose post-step state is penalized
  double objective_mean = 0.0;  // mean f_obj over post-step states
  VectorXd first_observation;   // for paired-evaluation checks
};

struct EvalMetrics {
  PolicyVariant variant = PolicyVariant::kMbop;
  std::vector<EpisodeResult> episodes;
  double policy_seconds = 0.0;  // time spent choosing actions
  double env_seconds = 0.0;     // time spent stepping the environment
  long long total_steps = 0;

  double policy_hz() const {
    return policy_seconds > 0 ? total_steps / policy_seconds : 0.0;
  }
  double total_hz() const {
    const double s = policy_seconds + env_seconds;
    return s > 0 ? total_steps / s : 0.0;
  }

  std::vector<double> returns() const {
    std::vector<double> r;
    for (const auto& e : episodes) r.push_back(e.episode_return);
    return r;
  }
  ReturnStats return_stats() const { return ComputeReturnStats(returns()); }

  // Mean return of each seed, in seed order of first appearance.
  std::vector<double> per_seed_means() const {
    std::vector<std::uint64_t> order;
    std::vector<double> sums;
    std::vector<int> counts;
    for (const auto& e : episodes) {
      auto it = std::find(order.begin(), order.end(), e.seed);
      std::size_t k = static_cast<std::size_t>(it - order.begin());
      if (it == order.end()) {
        order.push_back(e.seed);
        sums.push_back(0.0);
        counts.push_back(0);
      }
      sums[k] += e.episode_return;
      ++counts[k];
    }
    for (std::size_t k = 0; k < sums.size(); ++k) sums[k] /= counts[k];
    return sums;
  }

  double constraint_satisfaction() const {
    long long steps = 0;
    long long bad = 0;
    for (const auto& e : episodes) {
      steps += e.steps;
      bad += e.violations;
    }
    return steps > 0 ? 1.0 - static_cast<double>(bad) / steps : 1.0;
  }

  double objective_mean() const {
    double s = 0.0;
    for (const auto& e : episodes) s += e.objective_mean;
    return episodes.empty() ? 0.0 : s / episodes.size();
  }
};

inline std::uint64_t EpisodeEnvSeed(std::uint64_t seed, int episode) {
  return DeriveSeed(seed, 0x656e76ULL, static_cast<std::uint64_t>(episode));
}

inline std::uint64_t EpisodePlannerSeed(std::uint64_t seed, int episode) {
  return DeriveSeed(seed, 0x706c616eULL, static_cast<std::uint64_t>(episode));
}

// Runs `episodes_per_seed` episodes per seed. Initial states depend only on
// (seed, episode), so every variant sees the same starts.
template <typename Scalar>
EvalMetrics EvaluatePolicy(const Environment& env,
                           const LearnedModels<Scalar>& models,
                           const EvalOptions& options) {
  Require(options.episodes_per_seed >= 1 && !options.seeds.empty(),
          "evaluation needs at least one seed and one episode");
  const EnvSpec& spec = env.spec();
  Require(models.obs_dim() == spec.obs_dim && models.act_dim() == spec.act_dim,
          "models do not match environment dimensions",
          ErrorCode::kDimensionMismatch);
  const int steps = options.max_steps > 0
                        ? std::min(options.max_steps, spec.episode_length)
                        : spec.episode_length;
  const ActionBounds bounds = ActionBounds::From(spec);
  const bool is_bc = options.variant == PolicyVariant::kBc;
  if (is_bc) {
    Require(models.has_policy_prior(), "BC evaluation needs a bc ensemble");
  }

  EvalMetrics metrics;
  metrics.variant = options.variant;
  using Clock = std::chrono::steady_clock;
  for (std::uint64_t seed : options.seeds) {
    for (int ep = 0; ep < options.episodes_per_seed; ++ep) {
      Rng env_rng(EpisodeEnvSeed(seed, ep));
      EnvState state = env.InitialState(env_rng);
      VectorXd obs = env.Observe(state);

      PlannerConfig pc = options.planner;
      pc.mode = VariantPlannerMode(options.variant);
      pc.seed = EpisodePlannerSeed(seed, ep);
      std::optional<MpcController<LearnedModels<Scalar>>> mpc;
      std::optional<BcPolicy<Scalar>> bc;
      if (is_bc) {
        bc.emplace(*models.bc(), bounds);
      } else {
        mpc.emplace(models, pc, bounds, options.objective);
        mpc->set_trace(options.trace, std::to_string(seed) + ',' +
                                          std::to_string(ep) + ',');
      }

      EpisodeResult res;
      res.seed = seed;
      res.episode = ep;
      res.first_observation = obs;
      double objective_sum = 0.0;
      for (int t = 0; t < steps; ++t) {
        const auto t0 = Clock::now();
        const VectorXd action = is_bc ? bc->Act(obs) : mpc->Act(obs);
        const auto t1 = Clock::now();
        StepResult next = env.Step(state, action);
        state = std::move(next.state);
        obs = env.Observe(state);
        const auto t2 = Clock::now();
        metrics.policy_seconds += std::chrono::duration<double>(t1 - t0).count();
        metrics.env_seconds += std::chrono::duration<double>(t2 - t1).count();

        res.episode_return += next.reward;
        objective_sum += options.objective.Evaluate(obs);
        if (options.objective.Violated(obs)) ++res.violations;
        ++res.steps;
      }
      res.objective_mean = objective_sum / res.steps;
      metrics.total_steps += res.steps;
      metrics.episodes.push_back(std::move(res));
    }
  }
  return metrics;
}

}  // namespace mbop
