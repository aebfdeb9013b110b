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
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mbop/common.hpp"
#include "mbop/ensemble.hpp"
#include "mbop/envs.hpp"
#include "mbop/objective.hpp"

namespace mbop {

// MBOP: BC prior + value append. NOPP: Gaussian (zero-mean) prior.
// NOVF: no value append. PDDM: neither.
enum class PlannerMode { kMbop, kNopp, kNovf, kPddm };

inline std::string_view PlannerModeName(PlannerMode mode) {
  switch (mode) {
    case PlannerMode::kMbop: return "MBOP";
    case PlannerMode::kNopp: return "NOPP";
    case PlannerMode::kNovf: return "NOVF";
    case PlannerMode::kPddm: return "PDDM";
  }
  return "unknown";
}

inline PlannerMode ParsePlannerMode(std::string_view name) {
  if (name == "MBOP") return PlannerMode::kMbop;
  if (name == "NOPP" || name == "MBOP-NOPP") return PlannerMode::kNopp;
  if (name == "NOVF" || name == "MBOP-NOVF") return PlannerMode::kNovf;
  if (name == "PDDM") return PlannerMode::kPddm;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown planner mode: " + std::string(name));
}

struct PlannerConfig {
  int horizon = 64;
  int num_samples = 100;
  double sigma = 0.8;  // std of the i.i.d. action noise
  double beta = 0.2;
  double kappa = 0.5;
  double kappa_obj = 0.0;
  PlannerMode mode = PlannerMode::kMbop;
  // Ablation switches composed with `mode`.
  bool drop_policy_prior = false;
  bool drop_value = false;
  std::uint64_t seed = 0;
  // Rollouts are evaluated in fixed blocks of this many (0: one block of N);
  // blocks are distributed over `workers` threads.
  int block_size = 0;
  int workers = 1;

  bool use_policy_prior() const {
    return !drop_policy_prior &&
           (mode == PlannerMode::kMbop || mode == PlannerMode::kNovf);
  }
  bool use_value() const {
    return !drop_value &&
           (mode == PlannerMode::kMbop || mode == PlannerMode::kNopp);
  }

  void Validate() const {
    Require(horizon >= 1, "horizon must be >= 1");
    Require(num_samples >= 1, "num_samples must be >= 1");
    Require(sigma >= 0.0, "sigma must be >= 0");
    Require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
    Require(kappa >= 0.0, "kappa must be >= 0");
    Require(kappa_obj >= 0.0, "kappa_obj must be >= 0");
    Require(block_size >= 0, "block_size must be >= 0");
    Require(workers >= 1, "workers must be >= 1");
  }
};

// Planned action sequence carried between MPC steps: H rows x act_dim.
struct TrajectoryBuffer {
  MatrixXd actions;

  static TrajectoryBuffer Zeros(int horizon, int act_dim) {
    return {MatrixXd::Zero(horizon, act_dim)};
  }
  int horizon() const { return static_cast<int>(actions.rows()); }
};

// N sampled trajectories. Row n of `actions` holds A_{n,1..H} flattened
// time-major (H * act_dim entries).
template <typename Scalar>
struct RolloutBatch {
  Matrix<Scalar> actions;
  VectorXd returns;
  VectorXd objective_returns;
  std::vector<bool> valid;
  int horizon = 0;
  int act_dim = 0;

  int size() const { return static_cast<int>(returns.size()); }
  int num_valid() const {
    return static_cast<int>(std::count(valid.begin(), valid.end(), true));
  }
};

// Batched model interface consumed by the planner. Samples are columns;
// `heads[j]` is the ensemble member for column j.
template <typename M>
concept PlanningModels = requires(const M& m, std::span<const int> heads,
                                  const Matrix<typename M::Scalar>& x,
                                  Matrix<typename M::Scalar>& out_states,
                                  Vector<typename M::Scalar>& out_rewards) {
  typename M::Scalar;
  { m.ensemble_size() } -> std::convertible_to<int>;
  { m.obs_dim() } -> std::convertible_to<int>;
  { m.act_dim() } -> std::convertible_to<int>;
  { m.has_policy_prior() } -> std::convertible_to<bool>;
  { m.has_value() } -> std::convertible_to<bool>;
  { m.PolicyPrior(heads, x, x) } -> std::same_as<Matrix<typename M::Scalar>>;
  m.Dynamics(heads, x, x, out_states, out_rewards);
  { m.ValueMean(x, x) } -> std::same_as<Vector<typename M::Scalar>>;
};

// The three learned ensembles. Pointers are non-owning; bc and value may be
// null when the planner mode does not use them.
template <typename ScalarT>
class LearnedModels {
 public:
  using Scalar = ScalarT;

  LearnedModels(const EnsembleNet<Scalar>* model,
                const EnsembleNet<Scalar>* bc,
                const EnsembleNet<Scalar>* value)
      : model_(model), bc_(bc), value_(value) {
    Require(model_ != nullptr, "a dynamics model is required");
    Require(model_->role() == LearnerRole::kModel, "model ensemble has wrong role",
            ErrorCode::kTopologyMismatch);
    if (bc_ != nullptr) {
      Require(bc_->role() == LearnerRole::kBc && bc_->size() == model_->size() &&
                  bc_->obs_dim() == obs_dim() && bc_->act_dim() == act_dim(),
              "bc ensemble incompatible with model ensemble",
              ErrorCode::kTopologyMismatch);
    }
    if (value_ != nullptr) {
      Require(value_->role() == LearnerRole::kValue &&
                  value_->obs_dim() == obs_dim() &&
                  value_->act_dim() == act_dim(),
              "value ensemble incompatible with model ensemble",
              ErrorCode::kTopologyMismatch);
    }
  }

  int ensemble_size() const { return model_->size(); }
  int obs_dim() const { return model_->obs_dim(); }
  int act_dim() const { return model_->act_dim(); }
  bool has_policy_prior() const { return bc_ != nullptr; }
  bool has_value() const { return value_ != nullptr; }
  const EnsembleNet<Scalar>* bc() const { return bc_; }

  // Member heads[j] of f_b on (s_j, a_prev_j); columns are grouped by head.
  Matrix<Scalar> PolicyPrior(std::span<const int> heads,
                             const Matrix<Scalar>& states,
                             const Matrix<Scalar>& prev_actions) const {
    Matrix<Scalar> out(act_dim(), states.cols());
    std::vector<Eigen::Index> cols;
    for (int h = 0; h < bc_->size(); ++h) {
      cols.clear();
      for (Eigen::Index j = 0; j < states.cols(); ++j) {
        if (heads[static_cast<std::size_t>(j)] == h) cols.push_back(j);
      }
      if (cols.empty()) continue;
      Matrix<Scalar> x(obs_dim() + act_dim(),
                       static_cast<Eigen::Index>(cols.size()));
      for (std::size_t c = 0; c < cols.size(); ++c) {
        x.col(static_cast<Eigen::Index>(c)) << states.col(cols[c]),
            prev_actions.col(cols[c]);
      }
      const Matrix<Scalar> y = bc_->Predict(h, x);
      for (std::size_t c = 0; c < cols.size(); ++c) {
        out.col(cols[c]) = y.col(static_cast<Eigen::Index>(c));
      }
    }
    return out;
  }

  // Next state from member heads[j]; reward averaged over all members.
  void Dynamics(std::span<const int> heads, const Matrix<Scalar>& states,
                const Matrix<Scalar>& actions, Matrix<Scalar>& next_states,
                Vector<Scalar>& mean_rewards) const {
    Matrix<Scalar> x(obs_dim() + act_dim(), states.cols());
    x.topRows(obs_dim()) = states;
    x.bottomRows(act_dim()) = actions;
    next_states.resize(obs_dim(), states.cols());
    mean_rewards.setZero(states.cols());
    for (int i = 0; i < model_->size(); ++i) {
      const Matrix<Scalar> y = model_->Predict(i, x);
      mean_rewards += y.row(0).transpose();
      for (Eigen::Index j = 0; j < states.cols(); ++j) {
        if (heads[static_cast<std::size_t>(j)] == i) {
          next_states.col(j) = states.col(j) + y.col(j).tail(obs_dim());
        }
      }
    }
    mean_rewards /= static_cast<Scalar>(model_->size());
  }

  Vector<Scalar> ValueMean(const Matrix<Scalar>& states,
                           const Matrix<Scalar>& actions) const {
    Matrix<Scalar> x(obs_dim() + act_dim(), states.cols());
    x.topRows(obs_dim()) = states;
    x.bottomRows(act_dim()) = actions;
    return value_->PredictMean(x).row(0).transpose();
  }

 private:
  const EnsembleNet<Scalar>* model_;
  const EnsembleNet<Scalar>* bc_;
  const EnsembleNet<Scalar>* value_;
};

struct ActionBounds {
  VectorXd low;
  VectorXd high;

  static ActionBounds From(const EnvSpec& spec) {
    return {spec.act_low, spec.act_high};
  }
};

// Noise stream for rollout n at MPC step `step`; independent of how rollouts
// are scheduled.
inline std::uint64_t RolloutSeed(std::uint64_t seed, std::uint64_t step,
                                 int n) {
  return DeriveSeed(seed, step, static_cast<std::uint64_t>(n));
}

// Samples rollouts n = first .. first+count-1 from `state` (one block).
// Row j of the returned batch corresponds to rollout first + j.
template <PlanningModels Models>
RolloutBatch<typename Models::Scalar> SampleRollouts(
    int first, int count, const VectorXd& state, const TrajectoryBuffer& prev,
    const Models& models, const PlannerConfig& config,
    const ActionBounds& bounds, const ObjectiveSpec& objective,
    std::uint64_t step) {
  using Scalar = typename Models::Scalar;
  const int horizon = config.horizon;
  const int act_dim = models.act_dim();
  const int obs_dim = models.obs_dim();
  const int k = models.ensemble_size();
  const bool use_prior = config.use_policy_prior();
  const bool use_value = config.use_value();
  Require(state.size() == obs_dim, "planner state dimension mismatch",
          ErrorCode::kDimensionMismatch);
  Require(prev.horizon() == horizon && prev.actions.cols() == act_dim,
          "previous trajectory has wrong shape",
          ErrorCode::kDimensionMismatch);
  Require(!use_prior || models.has_policy_prior(),
          "planner mode needs a policy prior (bc ensemble)");
  Require(!use_value || models.has_value(),
          "planner mode needs a value ensemble");

  RolloutBatch<Scalar> batch;
  batch.horizon = horizon;
  batch.act_dim = act_dim;
  batch.actions.resize(count, static_cast<Eigen::Index>(horizon) * act_dim);
  batch.returns = VectorXd::Zero(count);
  batch.objective_returns = VectorXd::Zero(count);
  batch.valid.assign(static_cast<std::size_t>(count), true);

  std::vector<int> heads(static_cast<std::size_t>(count));
  std::vector<Rng> rngs;
  std::vector<std::normal_distribution<double>> gauss(
      static_cast<std::size_t>(count));
  rngs.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    heads[static_cast<std::size_t>(j)] = (first + j) % k;
    rngs.emplace_back(RolloutSeed(config.seed, step, first + j));
  }

  const Matrix<Scalar> prev_plan = prev.actions.cast<Scalar>();
  const Scalar beta = static_cast<Scalar>(config.beta);
  const Vector<Scalar> low = bounds.low.cast<Scalar>();
  const Vector<Scalar> high = bounds.high.cast<Scalar>();

  Matrix<Scalar> states =
      state.cast<Scalar>().replicate(1, count);  // s_t, one column per rollout
  // a_{t-1}: the previous pre-mixture sample, starting from T_0.
  Matrix<Scalar> prior_prev =
      prev_plan.row(0).transpose().replicate(1, count);
  Matrix<Scalar> sampled(act_dim, count);
  Matrix<Scalar> mixed(act_dim, count);
  Matrix<Scalar> next_states;
  Vector<Scalar> rewards;

  for (int t = 1; t <= horizon; ++t) {
    for (int j = 0; j < count; ++j) {
      if (objective.kind != ObjectiveKind::kNone) {
        batch.objective_returns[j] += objective.Evaluate(states.col(j));
      }
    }
    if (use_prior) {
      sampled = models.PolicyPrior(heads, states, prior_prev);
    } else {
      sampled.setZero();
    }
    for (int j = 0; j < count; ++j) {
      auto& rng = rngs[static_cast<std::size_t>(j)];
      auto& g = gauss[static_cast<std::size_t>(j)];
      for (int d = 0; d < act_dim; ++d) {
        sampled(d, j) += static_cast<Scalar>(config.sigma * g(rng));
      }
    }
    const Vector<Scalar> prev_col =
        prev_plan.row(std::min(t, horizon - 1)).transpose();
    mixed = ((Scalar(1) - beta) * sampled).colwise() + beta * prev_col;
    mixed = mixed.cwiseMax(low.replicate(1, count))
                .cwiseMin(high.replicate(1, count));
    batch.actions.middleCols(static_cast<Eigen::Index>(t - 1) * act_dim,
                             act_dim) = mixed.transpose();

    models.Dynamics(heads, states, mixed, next_states, rewards);
    for (int j = 0; j < count; ++j) {
      if (!batch.valid[static_cast<std::size_t>(j)]) continue;
      if (!next_states.col(j).allFinite() || !std::isfinite(rewards[j])) {
        batch.valid[static_cast<std::size_t>(j)] = false;
        continue;
      }
      batch.returns[j] += static_cast<double>(rewards[j]);
    }
    // Invalid rollouts keep running on a zero state so batched queries stay
    // finite; their returns are discarded.
    for (int j = 0; j < count; ++j) {
      if (!batch.valid[static_cast<std::size_t>(j)]) {
        next_states.col(j).setZero();
        sampled.col(j).setZero();
      }
    }
    states.swap(next_states);
    prior_prev = sampled;
  }

  if (use_value) {
    const Vector<Scalar> tail = models.ValueMean(states, mixed);
    for (int j = 0; j < count; ++j) {
      if (!std::isfinite(tail[j])) batch.valid[static_cast<std::size_t>(j)] = false;
      if (batch.valid[static_cast<std::size_t>(j)]) {
        batch.returns[j] += static_cast<double>(tail[j]);
      }
    }
  }
  for (int j = 0; j < count; ++j) {
    if (!batch.valid[static_cast<std::size_t>(j)]) {
      batch.returns[j] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return batch;
}

struct SampledTrajectory {
  MatrixXd actions;  // H x act_dim
  double primary_return = 0.0;
  double secondary_return = 0.0;
  bool valid = true;
};

// One trajectory n of the batch, evaluated on its own.
template <PlanningModels Models>
SampledTrajectory SampleTrajectory(int n, const VectorXd& state,
                                   const TrajectoryBuffer& prev,
                                   const Models& models,
                                   const PlannerConfig& config,
                                   const ActionBounds& bounds,
                                   const ObjectiveSpec& objective,
                                   std::uint64_t step = 0) {
  const auto batch = SampleRollouts(n, 1, state, prev, models, config, bounds,
                                    objective, step);
  SampledTrajectory out;
  out.actions = Eigen::Map<const Matrix<typename Models::Scalar>>(
                    batch.actions.data(), batch.act_dim, batch.horizon)
                    .transpose()
                    .template cast<double>();
  out.primary_return = batch.returns[0];
  out.secondary_return = batch.objective_returns[0];
  out.valid = batch.valid[0];
  return out;
}

struct ReweightStats {
  double best_return = 0.0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double effective_sample_size = 0.0;  // sum(w) / max(w)
  int num_valid = 0;
};

// T'_t = sum_n w_n A_{n,t} / sum_n w_n over valid rollouts, with
// w_n = exp(kappa R_n + kappa_obj R'_n - max_m(...)).
template <typename Scalar>
TrajectoryBuffer Reweight(const RolloutBatch<Scalar>& batch, double kappa,
                          double kappa_obj, ReweightStats* stats = nullptr) {
  const int n = batch.size();
  double max_score = -std::numeric_limits<double>::infinity();
  std::vector<double> score(static_cast<std::size_t>(n));
  int valid = 0;
  for (int i = 0; i < n; ++i) {
    if (!batch.valid[static_cast<std::size_t>(i)]) continue;
    score[static_cast<std::size_t>(i)] =
        kappa * batch.returns[i] + kappa_obj * batch.objective_returns[i];
    max_score = std::max(max_score, score[static_cast<std::size_t>(i)]);
    ++valid;
  }
  if (valid == 0) {
    throw Error(ErrorCode::kAllRolloutsInvalid,
                "all sampled trajectories are invalid (non-finite rollout)");
  }
  Eigen::RowVectorXd acc =
      Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(batch.horizon) *
                               batch.act_dim);
  double total = 0.0;
  double max_w = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!batch.valid[static_cast<std::size_t>(i)]) continue;
    const double w = std::exp(score[static_cast<std::size_t>(i)] - max_score);
    acc += w * batch.actions.row(i).template cast<double>();
    total += w;
    max_w = std::max(max_w, w);
  }
  acc /= total;

  TrajectoryBuffer out{MatrixXd(batch.horizon, batch.act_dim)};
  for (int t = 0; t < batch.horizon; ++t) {
    for (int d = 0; d < batch.act_dim; ++d) {
      out.actions(t, d) = acc[static_cast<Eigen::Index>(t) * batch.act_dim + d];
    }
  }
  if (stats != nullptr) {
    double best = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!batch.valid[static_cast<std::size_t>(i)]) continue;
      best = std::max(best, batch.returns[i]);
      sum += batch.returns[i];
    }
    const double mean = sum / valid;
    for (int i = 0; i < n; ++i) {
      if (!batch.valid[static_cast<std::size_t>(i)]) continue;
      sq += (batch.returns[i] - mean) * (batch.returns[i] - mean);
    }
    *stats = {best, mean, std::sqrt(sq / valid), total / max_w, valid};
  }
  return out;
}

// Runs all N rollouts in blocks and concatenates them in rollout order.
template <PlanningModels Models>
RolloutBatch<typename Models::Scalar> SampleAllRollouts(
    const VectorXd& state, const TrajectoryBuffer& prev, const Models& models,
    const PlannerConfig& config, const ActionBounds& bounds,
    const ObjectiveSpec& objective, std::uint64_t step) {
  using Scalar = typename Models::Scalar;
  const int n = config.num_samples;
  const int block = config.block_size > 0 ? std::min(config.block_size, n) : n;
  const int num_blocks = (n + block - 1) / block;
  std::vector<RolloutBatch<Scalar>> parts(static_cast<std::size_t>(num_blocks));

  auto run_block = [&](int b) {
    const int first = b * block;
    parts[static_cast<std::size_t>(b)] =
        SampleRollouts(first, std::min(block, n - first), state, prev, models,
                       config, bounds, objective, step);
  };
  const int workers = std::min(config.workers, num_blocks);
  if (workers <= 1) {
    for (int b = 0; b < num_blocks; ++b) run_block(b);
  } else {
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int b = next++; b < num_blocks; b = next++) run_block(b);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  if (num_blocks == 1) return std::move(parts.front());

  RolloutBatch<Scalar> all;
  all.horizon = config.horizon;
  all.act_dim = models.act_dim();
  all.actions.resize(n, static_cast<Eigen::Index>(all.horizon) * all.act_dim);
  all.returns.resize(n);
  all.objective_returns.resize(n);
  int row = 0;
  for (auto& p : parts) {
    all.actions.middleRows(row, p.size()) = p.actions;
    all.returns.segment(row, p.size()) = p.returns;
    all.objective_returns.segment(row, p.size()) = p.objective_returns;
    all.valid.insert(all.valid.end(), p.valid.begin(), p.valid.end());
    row += p.size();
  }
  return all;
}

struct TrajoptResult {
  TrajectoryBuffer plan;
  ReweightStats stats;
};

// One trajectory-optimization pass from `state` given the previous plan.
template <PlanningModels Models>
TrajoptResult Trajopt(const VectorXd& state, const TrajectoryBuffer& prev,
                      const Models& models, const PlannerConfig& config,
                      const ActionBounds& bounds,
                      const ObjectiveSpec& objective, std::uint64_t step = 0) {
  config.Validate();
  objective.Validate();
  const auto batch = SampleAllRollouts(state, prev, models, config, bounds,
                                       objective, step);
  TrajoptResult out;
  out.plan = Reweight(batch, config.kappa, config.kappa_obj, &out.stats);
  return out;
}

struct PolicyStep {
  VectorXd action;
  TrajectoryBuffer plan;
  ReweightStats stats;
};

// Replans from `state` and returns the first planned action; the caller
// threads `plan` into the next call.
template <PlanningModels Models>
PolicyStep MpcPolicyStep(const VectorXd& state, const TrajectoryBuffer& prev,
                         const Models& models, const PlannerConfig& config,
                         const ActionBounds& bounds,
                         const ObjectiveSpec& objective,
                         std::uint64_t step = 0) {
  TrajoptResult r =
      Trajopt(state, prev, models, config, bounds, objective, step);
  PolicyStep out;
  out.action = r.plan.actions.row(0).transpose();
  out.plan = std::move(r.plan);
  out.stats = r.stats;
  return out;
}

// MPC loop state for one episode: owns the trajectory buffer.
template <PlanningModels Models>
class MpcController {
 public:
  MpcController(const Models& models, PlannerConfig config,
                ActionBounds bounds, ObjectiveSpec objective = {})
      : models_(&models),
        config_(config),
        bounds_(std::move(bounds)),
        objective_(objective) {
    config_.Validate();
    Reset();
  }

  // Re-zeroes the plan; call at episode boundaries.
  void Reset() {
    plan_ = TrajectoryBuffer::Zeros(config_.horizon, models_->act_dim());
    step_ = 0;
  }

  VectorXd Act(const VectorXd& observation) {
    PolicyStep s = MpcPolicyStep(observation, plan_, *models_, config_,
                                 bounds_, objective_, step_++);
    plan_ = std::move(s.plan);
    last_stats_ = s.stats;
    if (trace_ != nullptr) {
      *trace_ << trace_prefix_ << (step_ - 1);
      for (Eigen::Index d = 0; d < s.action.size(); ++d) {
        *trace_ << ',' << s.action[d];
      }
      *trace_ << ',' << s.stats.best_return << ',' << s.stats.mean_return
              << ',' << s.stats.std_return << ','
              << s.stats.effective_sample_size << '\n';
    }
    return s.action;
  }

  // Per-step CSV trace: [prefix] step, action..., best_R, mean_R, std_R, ess.
  void set_trace(std::ostream* trace, std::string prefix = {}) {
    trace_ = trace;
    trace_prefix_ = std::move(prefix);
  }

  const TrajectoryBuffer& plan() const { return plan_; }
  const ReweightStats& last_stats() const { return last_stats_; }
  PlannerConfig& config() { return config_; }

 private:
  const Models* models_;
  PlannerConfig config_;
  ActionBounds bounds_;
  ObjectiveSpec objective_;
  TrajectoryBuffer plan_;
  std::uint64_t step_ = 0;
  ReweightStats last_stats_;
  std::ostream* trace_ = nullptr;
  std::string trace_prefix_;
};

}  // namespace mbop
