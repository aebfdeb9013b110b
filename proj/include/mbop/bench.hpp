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

// Run-level commands behind the command-line tool: collect, train, eval,
// sweep and bench. Each takes a RunConfig and writes its artifacts (plus the
// fully resolved config) into the run's output directory.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbop/common.hpp"
#include "mbop/dataset.hpp"
#include "mbop/ensemble.hpp"
#include "mbop/envs.hpp"
#include "mbop/evaluate.hpp"
#include "mbop/objective.hpp"
#include "mbop/planner.hpp"

namespace mbop {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct BehaviorBlock {
  BehaviorPolicySpec policy{BehaviorKind::kScriptedSwingup, 0.3, 0.6};
  int episodes = 25;
};

// Axes left empty take the base config's value.
struct SweepGrid {
  std::vector<double> kappa;
  std::vector<int> horizon;
  std::vector<double> beta;
  std::vector<double> sigma;
  std::vector<double> top_percent;

  bool empty() const {
    return kappa.empty() && horizon.empty() && beta.empty() && sigma.empty() &&
           top_percent.empty();
  }
};

struct BenchConfig {
  std::vector<int> horizons = {4, 8, 16};
  int num_samples = 100;
  int steps = 1000;   // timed steps per row
  int warmup = 20;    // untimed steps before timing starts
};

struct RunConfig {
  std::string env = "cartpole";
  std::uint64_t seed = 0;
  fs::path out = "runs/default";

  std::vector<BehaviorBlock> behaviors = {BehaviorBlock{}};

  fs::path dataset_path;                // default: <out>/dataset.jsonl
  std::vector<long long> dataset_sizes = {0};  // steps; 0 keeps everything
  double top_percent = 100.0;
  double train_fraction = 0.9;

  TrainConfig train;
  int ensemble_size = 3;
  int value_horizon = 0;                // 0: planner horizon
  fs::path checkpoint_dir;              // default: <out>

  PlannerConfig planner;
  ObjectiveSpec objective;

  std::vector<std::string> variants = {"MBOP", "BC"};
  std::vector<std::uint64_t> eval_seeds = {0, 1, 2, 3, 4};
  int episodes_per_seed = 20;
  int max_steps = 0;
  bool trace = false;
  bool data_row = true;

  SweepGrid sweep;
  BenchConfig bench;

  fs::path resolved_dataset_path() const {
    return dataset_path.empty() ? out / "dataset.jsonl" : dataset_path;
  }
  fs::path resolved_checkpoint_dir() const {
    return checkpoint_dir.empty() ? out : checkpoint_dir;
  }
  int resolved_value_horizon(int horizon) const {
    return value_horizon > 0 ? value_horizon : horizon;
  }

  void Validate() const {
    Require(!eval_seeds.empty(), "eval.seeds must be non-empty");
    Require(episodes_per_seed >= 1, "eval.episodes_per_seed must be >= 1");
    Require(!behaviors.empty(), "collect.behaviors must be non-empty");
    Require(!dataset_sizes.empty(), "dataset.sizes must be non-empty");
    for (long long n : dataset_sizes) {
      Require(n >= 0, "dataset sizes must be >= 0");
    }
    Require(top_percent > 0.0 && top_percent <= 100.0,
            "dataset.top_percent must lie in (0, 100]");
    Require(ensemble_size >= 1, "train.ensemble_size must be >= 1");
    Require(value_horizon >= 0, "train.value_horizon must be >= 0");
    for (const auto& v : variants) ParseVariantName(v);
    planner.Validate();
    objective.Validate();
  }

  // "DATA" is accepted alongside the policy variants.
  static void ParseVariantName(const std::string& v) {
    if (v != "DATA") ParsePolicyVariant(v);
  }
};

// ---------------------------------------------------------------------------
// Config JSON. Every key is optional; unknown keys are rejected.

namespace internal {

inline void CheckKeys(const nlohmann::json& j, const std::string& where,
                      std::initializer_list<const char*> allowed) {
  Require(j.is_object(), where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    Require(ok, "unknown config key: " + where + "." + key);
  }
}

template <typename T>
void Read(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key) && !j.at(key).is_null()) dst = j.at(key).get<T>();
}

inline void ReadPath(const nlohmann::json& j, const char* key, fs::path& dst) {
  if (j.contains(key) && !j.at(key).is_null()) {
    dst = j.at(key).get<std::string>();
  }
}

}  // namespace internal

inline RunConfig RunConfigFromJson(const nlohmann::json& j) {
  using internal::Read;
  RunConfig c;
  internal::CheckKeys(j, "config",
                      {"env", "seed", "out", "collect", "dataset", "train",
                       "planner", "objective", "eval", "sweep", "bench"});
  Read(j, "env", c.env);
  Read(j, "seed", c.seed);
  internal::ReadPath(j, "out", c.out);
  if (j.contains("collect")) {
    const auto& s = j.at("collect");
    internal::CheckKeys(s, "collect", {"behaviors"});
    if (s.contains("behaviors")) {
      c.behaviors.clear();
      for (const auto& b : s.at("behaviors")) {
        internal::CheckKeys(b, "collect.behaviors[]",
                            {"kind", "noise_std", "quality", "episodes"});
        BehaviorBlock block;
        block.policy = BehaviorPolicyFromJson(b);
        Read(b, "episodes", block.episodes);
        c.behaviors.push_back(block);
      }
    }
  }
  if (j.contains("dataset")) {
    const auto& s = j.at("dataset");
    internal::CheckKeys(s, "dataset",
                        {"path", "sizes", "top_percent", "train_fraction"});
    internal::ReadPath(s, "path", c.dataset_path);
    Read(s, "sizes", c.dataset_sizes);
    Read(s, "top_percent", c.top_percent);
    Read(s, "train_fraction", c.train_fraction);
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    internal::CheckKeys(s, "train",
                        {"ensemble_size", "epochs", "batch_size",
                         "learning_rate", "beta1", "beta2", "epsilon",
                         "hidden", "value_horizon", "checkpoint_dir"});
    Read(s, "ensemble_size", c.ensemble_size);
    Read(s, "epochs", c.train.epochs);
    Read(s, "batch_size", c.train.batch_size);
    Read(s, "learning_rate", c.train.learning_rate);
    Read(s, "beta1", c.train.beta1);
    Read(s, "beta2", c.train.beta2);
    Read(s, "epsilon", c.train.epsilon);
    Read(s, "hidden", c.train.hidden);
    Read(s, "value_horizon", c.value_horizon);
    internal::ReadPath(s, "checkpoint_dir", c.checkpoint_dir);
  }
  if (j.contains("planner")) {
    const auto& s = j.at("planner");
    internal::CheckKeys(s, "planner",
                        {"horizon", "num_samples", "sigma", "beta", "kappa",
                         "kappa_obj", "workers", "block_size"});
    Read(s, "horizon", c.planner.horizon);
    Read(s, "num_samples", c.planner.num_samples);
    Read(s, "sigma", c.planner.sigma);
    Read(s, "beta", c.planner.beta);
    Read(s, "kappa", c.planner.kappa);
    Read(s, "kappa_obj", c.planner.kappa_obj);
    Read(s, "workers", c.planner.workers);
    Read(s, "block_size", c.planner.block_size);
  }
  if (j.contains("objective")) c.objective = ObjectiveFromJson(j.at("objective"));
  if (j.contains("eval")) {
    const auto& s = j.at("eval");
    internal::CheckKeys(s, "eval",
                        {"variants", "seeds", "episodes_per_seed", "max_steps",
                         "trace", "data_row"});
    Read(s, "variants", c.variants);
    Read(s, "seeds", c.eval_seeds);
    Read(s, "episodes_per_seed", c.episodes_per_seed);
    Read(s, "max_steps", c.max_steps);
    Read(s, "trace", c.trace);
    Read(s, "data_row", c.data_row);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    internal::CheckKeys(s, "sweep",
                        {"kappa", "horizon", "beta", "sigma", "top_percent"});
    Read(s, "kappa", c.sweep.kappa);
    Read(s, "horizon", c.sweep.horizon);
    Read(s, "beta", c.sweep.beta);
    Read(s, "sigma", c.sweep.sigma);
    Read(s, "top_percent", c.sweep.top_percent);
  }
  if (j.contains("bench")) {
    const auto& s = j.at("bench");
    internal::CheckKeys(s, "bench",
                        {"horizons", "num_samples", "steps", "warmup"});
    Read(s, "horizons", c.bench.horizons);
    Read(s, "num_samples", c.bench.num_samples);
    Read(s, "steps", c.bench.steps);
    Read(s, "warmup", c.bench.warmup);
  }
  return c;
}

inline ojson RunConfigToJson(const RunConfig& c) {
  ojson behaviors = ojson::array();
  for (const auto& b : c.behaviors) {
    behaviors.push_back({{"kind", BehaviorKindName(b.policy.kind)},
                         {"noise_std", b.policy.noise_std},
                         {"quality", b.policy.quality},
                         {"episodes", b.episodes}});
  }
  return {
      {"env", c.env},
      {"seed", c.seed},
      {"out", c.out.string()},
      {"collect", {{"behaviors", behaviors}}},
      {"dataset",
       {{"path", c.resolved_dataset_path().string()},
        {"sizes", c.dataset_sizes},
        {"top_percent", c.top_percent},
        {"train_fraction", c.train_fraction}}},
      {"train",
       {{"ensemble_size", c.ensemble_size},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"epsilon", c.train.epsilon},
        {"hidden", c.train.hidden},
        {"value_horizon", c.resolved_value_horizon(c.planner.horizon)},
        {"checkpoint_dir", c.resolved_checkpoint_dir().string()}}},
      {"planner",
       {{"horizon", c.planner.horizon},
        {"num_samples", c.planner.num_samples},
        {"sigma", c.planner.sigma},
        {"beta", c.planner.beta},
        {"kappa", c.planner.kappa},
        {"kappa_obj", c.planner.kappa_obj},
        {"workers", c.planner.workers},
        {"block_size", c.planner.block_size}}},
      {"objective", ObjectiveToJson(c.objective)},
      {"eval",
       {{"variants", c.variants},
        {"seeds", c.eval_seeds},
        {"episodes_per_seed", c.episodes_per_seed},
        {"max_steps", c.max_steps},
        {"trace", c.trace},
        {"data_row", c.data_row}}},
      {"sweep",
       {{"kappa", c.sweep.kappa},
        {"horizon", c.sweep.horizon},
        {"beta", c.sweep.beta},
        {"sigma", c.sweep.sigma},
        {"top_percent", c.sweep.top_percent}}},
      {"bench",
       {{"horizons", c.bench.horizons},
        {"num_samples", c.bench.num_samples},
        {"steps", c.bench.steps},
        {"warmup", c.bench.warmup}}}};
}

inline RunConfig LoadRunConfig(const fs::path& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), "cannot open config: " + path.string(),
          ErrorCode::kIo);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                "config is not valid JSON: " + std::string(e.what()));
  }
  return RunConfigFromJson(j);
}

inline void WriteJson(const fs::path& path, const ojson& j) {
  std::ofstream out(path, std::ios::trunc);
  Require(static_cast<bool>(out), "cannot open for writing: " + path.string(),
          ErrorCode::kIo);
  out << j.dump(2) << '\n';
  Require(static_cast<bool>(out), "write failed: " + path.string(),
          ErrorCode::kIo);
}

inline void PrepareOutputDir(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  Require(!ec && fs::is_directory(c.out),
          "cannot create output directory: " + c.out.string(), ErrorCode::kIo);
  WriteJson(c.out / "config.resolved.json", RunConfigToJson(c));
}

// ---------------------------------------------------------------------------
// Result rows. JSON and CSV are both produced from ToJson, so the two agree
// field for field.

struct ResultRow {
  std::string env;
  long long dataset_size = 0;  // steps in the (sub-sampled) dataset
  int dataset_episodes = 0;
  std::string variant;         // MBOP | NOPP | NOVF | PDDM | BC | DATA
  double top_percent = 100.0;
  int horizon = 0;             // planner fields are 0 for BC and DATA
  int num_samples = 0;
  double kappa = 0.0;
  double kappa_obj = 0.0;
  double sigma = 0.0;
  double beta = 0.0;
  int ensemble_size = 0;
  int value_horizon = 0;
  std::string seeds;           // ';'-separated
  int episodes_per_seed = 0;
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double constraint_satisfaction = 1.0;
  double objective_mean = 0.0;
  double planning_hz = 0.0;    // policy-side steps per second
  double total_hz = 0.0;       // including simulator time

  ojson ToJson() const {
    return {{"env", env},
            {"dataset_size", dataset_size},
            {"dataset_episodes", dataset_episodes},
            {"variant", variant},
            {"top_percent", top_percent},
            {"horizon", horizon},
            {"num_samples", num_samples},
            {"kappa", kappa},
            {"kappa_obj", kappa_obj},
            {"sigma", sigma},
            {"beta", beta},
            {"ensemble_size", ensemble_size},
            {"value_horizon", value_horizon},
            {"seeds", seeds},
            {"episodes_per_seed", episodes_per_seed},
            {"episodes", episodes},
            {"mean_return", mean_return},
            {"std_return", std_return},
            {"constraint_satisfaction", constraint_satisfaction},
            {"objective_mean", objective_mean},
            {"planning_hz", planning_hz},
            {"total_hz", total_hz}};
  }
};

inline std::string CsvCell(const ojson& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

inline void WriteRowsCsv(const fs::path& path, const std::vector<ojson>& rows) {
  std::ofstream out(path, std::ios::trunc);
  Require(static_cast<bool>(out), "cannot open for writing: " + path.string(),
          ErrorCode::kIo);
  if (rows.empty()) return;
  bool first = true;
  for (const auto& [key, _] : rows.front().items()) {
    out << (first ? "" : ",") << key;
    first = false;
  }
  out << '\n';
  for (const auto& row : rows) {
    first = true;
    for (const auto& [_, value] : row.items()) {
      out << (first ? "" : ",") << CsvCell(value);
      first = false;
    }
    out << '\n';
  }
}

inline std::vector<ojson> RowsToJson(const std::vector<ResultRow>& rows) {
  std::vector<ojson> out;
  for (const auto& r : rows) out.push_back(r.ToJson());
  return out;
}

inline std::string JoinSeeds(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    s += (i ? ";" : "") + std::to_string(seeds[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// collect

inline Dataset CollectDataset(const RunConfig& c) {
  const auto env = MakeEnvironment(c.env);
  Dataset ds{env->spec(), {}};
  for (std::size_t b = 0; b < c.behaviors.size(); ++b) {
    const auto& block = c.behaviors[b];
    auto eps = RunBehaviorPolicy(*env, block.policy, block.episodes,
                                 DeriveSeed(c.seed, 0xc011ec7ULL, b));
    for (auto& e : eps) ds.episodes.push_back(std::move(e));
  }
  return ds;
}

inline ojson DatasetSummary(const Dataset& ds) {
  const ReturnStats st = ComputeReturnStats(EpisodeReturns(ds));
  return {{"env", ds.env_spec.name},
          {"episodes", ds.episodes.size()},
          {"total_steps", ds.total_steps()},
          {"mean_return", st.mean},
          {"std_return", st.std}};
}

inline ojson CmdCollect(const RunConfig& c) {
  c.Validate();
  PrepareOutputDir(c);
  const Dataset ds = CollectDataset(c);
  const fs::path path = c.resolved_dataset_path();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  SaveDataset(ds, path);
  ExportReturnsCsv(ds, c.out / "returns.csv");
  ojson summary = DatasetSummary(ds);
  summary["path"] = path.string();
  WriteJson(c.out / "dataset_summary.json", summary);
  return summary;
}

// ---------------------------------------------------------------------------
// train

// Training inputs for one (size, top_percent) setting. The dynamics model
// sees every sampled episode; the BC prior and value function see only the
// top episodes.
struct PreparedData {
  Dataset sampled;
  Dataset model_train;
  Dataset model_valid;
  Dataset policy_train;
  Dataset policy_valid;
};

inline PreparedData PrepareData(const RunConfig& c, const Dataset& full,
                                long long size, double top_percent) {
  PreparedData p;
  p.sampled = size > 0 ? Subsample(full, size, DeriveSeed(c.seed, 0x5a3ULL))
                       : full;
  Require(p.sampled.episodes.size() >= 2,
          "training needs at least 2 episodes after sub-sampling");
  auto [train, valid] =
      SplitDataset(p.sampled, {c.train_fraction, DeriveSeed(c.seed, 0x5b1ULL)});
  p.model_train = std::move(train);
  p.model_valid = std::move(valid);
  p.policy_train = FilterTopEpisodes(p.model_train, top_percent);
  p.policy_valid = p.model_valid;
  return p;
}

struct Checkpoints {
  EnsembleNet<float> model;
  EnsembleNet<float> bc;
  EnsembleNet<float> value;
};

inline fs::path CheckpointPath(const fs::path& dir, LearnerRole role) {
  return dir / (std::string(LearnerRoleName(role)) + ".ckpt");
}

// One-step next-state MSE of the ensemble mean on raw validation rows.
inline double ModelValidationMse(const EnsembleNet<float>& model,
                                 const Dataset& valid) {
  const TrainingRows rows = MakeTrainingRows(valid, LearnerRole::kModel);
  if (rows.size() == 0) return 0.0;
  const MatrixXd pred =
      model.PredictMean(rows.inputs.cast<float>()).cast<double>();
  const Eigen::Index obs = model.obs_dim();
  return (pred.bottomRows(obs) - rows.targets.bottomRows(obs))
             .array()
             .square()
             .mean();
}

// Trains (or loads, when present and `reuse` is set) the three ensembles into
// `dir`. Loss curves are appended to `losses` as role,member,epoch,train,valid.
inline Checkpoints TrainOrLoad(const RunConfig& c, const PreparedData& data,
                               int value_horizon, const fs::path& model_dir,
                               const fs::path& policy_dir, bool reuse,
                               std::ostream* losses, ojson* report) {
  const EnvSpec& spec = data.sampled.env_spec;
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  auto one = [&](LearnerRole role, const Dataset& train, const Dataset& valid,
                 int horizon, const fs::path& dir) {
    const fs::path path = CheckpointPath(dir, role);
    if (reuse && fs::exists(path)) return LoadEnsemble<float>(path);
    fs::create_directories(dir);
    const TrainingRows rows = MakeTrainingRows(train, role, horizon);
    const TrainingRows vrows = MakeTrainingRows(valid, role, horizon);
    Require(rows.size() > 0,
            std::string(LearnerRoleName(role)) +
                ": no training rows (episodes shorter than the value horizon?)");
    auto res = TrainEnsemble<float>(rows, &vrows, role, spec.obs_dim,
                                    spec.act_dim, c.ensemble_size, tc);
    SaveEnsemble(res.net, path);
    ojson members = ojson::array();
    for (std::size_t m = 0; m < res.report.members.size(); ++m) {
      const auto& mr = res.report.members[m];
      for (std::size_t e = 0; e < mr.train_loss.size(); ++e) {
        if (losses != nullptr) {
          *losses << LearnerRoleName(role) << ',' << m << ',' << e + 1 << ','
                  << mr.train_loss[e] << ','
                  << (e < mr.valid_loss.size() ? mr.valid_loss[e] : 0.0)
                  << '\n';
        }
      }
      members.push_back(
          {{"member", m},
           {"final_train_loss", mr.train_loss.back()},
           {"final_valid_loss",
            mr.valid_loss.empty() ? 0.0 : mr.valid_loss.back()}});
    }
    if (report != nullptr) {
      (*report)[std::string(LearnerRoleName(role))] = {
          {"rows", rows.size()},
          {"valid_rows", vrows.size()},
          {"skipped_episodes", rows.skipped_episodes},
          {"members", members}};
    }
    return res.net;
  };
  Checkpoints ck{
      one(LearnerRole::kModel, data.model_train, data.model_valid, 1,
          model_dir),
      one(LearnerRole::kBc, data.policy_train, data.policy_valid, 1,
          policy_dir),
      one(LearnerRole::kValue, data.policy_train, data.policy_valid,
          value_horizon, policy_dir)};
  if (report != nullptr) {
    (*report)["value_horizon"] = value_horizon;
    (*report)["model_valid_mse"] = ModelValidationMse(ck.model, data.model_valid);
  }
  return ck;
}

inline long long SingleDatasetSize(const RunConfig& c) {
  Require(c.dataset_sizes.size() == 1,
          "train/eval take one dataset size; use sweep for several");
  return c.dataset_sizes.front();
}

inline ojson CmdTrain(const RunConfig& c) {
  c.Validate();
  PrepareOutputDir(c);
  const Dataset full = LoadDataset(c.resolved_dataset_path());
  const PreparedData data =
      PrepareData(c, full, SingleDatasetSize(c), c.top_percent);
  std::ofstream losses(c.out / "losses.csv", std::ios::trunc);
  Require(static_cast<bool>(losses), "cannot write losses.csv",
          ErrorCode::kIo);
  losses << "role,member,epoch,train_loss,valid_loss\n";
  losses.precision(10);
  ojson report = {{"dataset_size", data.sampled.total_steps()},
                  {"dataset_episodes", data.sampled.episodes.size()},
                  {"policy_train_episodes", data.policy_train.episodes.size()},
                  {"top_percent", c.top_percent}};
  const fs::path dir = c.resolved_checkpoint_dir();
  TrainOrLoad(c, data, c.resolved_value_horizon(c.planner.horizon), dir, dir,
              /*reuse=*/false, &losses, &report);
  WriteJson(c.out / "train_report.json", report);
  return report;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOutcome {
  std::vector<ResultRow> rows;
  ojson paired;  // per-seed means and paired differences against BC
  std::map<std::string, EvalMetrics> metrics;
};

inline ResultRow BaseRow(const RunConfig& c, const Dataset& sampled,
                         double top_percent) {
  ResultRow r;
  r.env = c.env;
  r.dataset_size = sampled.total_steps();
  r.dataset_episodes = static_cast<int>(sampled.episodes.size());
  r.top_percent = top_percent;
  r.seeds = JoinSeeds(c.eval_seeds);
  r.episodes_per_seed = c.episodes_per_seed;
  return r;
}

inline ResultRow DataRow(const RunConfig& c, const Dataset& sampled,
                         double top_percent) {
  ResultRow r = BaseRow(c, sampled, top_percent);
  r.variant = "DATA";
  r.episodes_per_seed = 0;
  r.seeds = "";
  const ReturnStats st = ComputeReturnStats(EpisodeReturns(sampled));
  r.episodes = st.count;
  r.mean_return = st.mean;
  r.std_return = st.std;
  long long steps = 0;
  long long bad = 0;
  double obj = 0.0;
  for (const auto& e : sampled.episodes) {
    double sum = 0.0;
    for (int t = 1; t < e.observations.rows(); ++t) {
      const VectorXd o = e.observations.row(t).transpose();
      bad += c.objective.Violated(o) ? 1 : 0;
      sum += c.objective.Evaluate(o);
    }
    steps += e.length();
    obj += e.length() > 0 ? sum / e.length() : 0.0;
  }
  r.constraint_satisfaction =
      steps > 0 ? 1.0 - static_cast<double>(bad) / steps : 1.0;
  r.objective_mean = sampled.episodes.empty() ? 0.0 : obj / sampled.episodes.size();
  return r;
}

inline void WriteEpisodes(std::ostream& out, const std::string& variant,
                          const EvalMetrics& m) {
  for (const auto& e : m.episodes) {
    out << variant << ',' << e.seed << ',' << e.episode << ','
        << e.episode_return << ',' << e.steps << ',' << e.violations;
    for (Eigen::Index i = 0; i < e.first_observation.size(); ++i) {
      out << ',' << e.first_observation[i];
    }
    out << '\n';
  }
}

// Evaluates every requested variant on one set of checkpoints.
inline EvalOutcome EvaluateVariants(const RunConfig& c,
                                    const PlannerConfig& planner,
                                    const Checkpoints& ck,
                                    const Dataset& sampled, double top_percent,
                                    int value_horizon,
                                    std::ostream* episodes_csv,
                                    const fs::path& trace_dir) {
  const auto env = MakeEnvironment(c.env);
  Require(ck.model.obs_dim() == env->spec().obs_dim &&
              ck.model.act_dim() == env->spec().act_dim,
          "checkpoints do not match environment " + c.env,
          ErrorCode::kTopologyMismatch);
  const LearnedModels<float> models(&ck.model, &ck.bc, &ck.value);
  EvalOutcome out;
  for (const auto& name : c.variants) {
    if (name == "DATA") {
      out.rows.push_back(DataRow(c, sampled, top_percent));
      continue;
    }
    const PolicyVariant v = ParsePolicyVariant(name);
    EvalOptions o;
    o.variant = v;
    o.planner = planner;
    o.objective = c.objective;
    o.seeds = c.eval_seeds;
    o.episodes_per_seed = c.episodes_per_seed;
    o.max_steps = c.max_steps;
    std::ofstream trace;
    if (c.trace && v != PolicyVariant::kBc && !trace_dir.empty()) {
      fs::create_directories(trace_dir);
      trace.open(trace_dir / ("trace_" + name + ".csv"), std::ios::trunc);
      trace << "seed,episode,step";
      for (int d = 0; d < ck.model.act_dim(); ++d) trace << ",action" << d;
      trace << ",best_return,mean_return,std_return,ess\n";
      o.trace = &trace;
    }
    EvalMetrics m = EvaluatePolicy(*env, models, o);
    ResultRow r = BaseRow(c, sampled, top_percent);
    r.variant = name;
    if (v != PolicyVariant::kBc) {
      r.horizon = planner.horizon;
      r.num_samples = planner.num_samples;
      r.kappa = planner.kappa;
      r.kappa_obj = planner.kappa_obj;
      r.sigma = planner.sigma;
      r.beta = planner.beta;
      r.value_horizon = value_horizon;
    }
    r.ensemble_size = ck.model.size();
    const ReturnStats st = m.return_stats();
    r.episodes = st.count;
    r.mean_return = st.mean;
    r.std_return = st.std;
    r.constraint_satisfaction = m.constraint_satisfaction();
    r.objective_mean = m.objective_mean();
    r.planning_hz = m.policy_hz();
    r.total_hz = m.total_hz();
    out.rows.push_back(r);
    if (episodes_csv != nullptr) WriteEpisodes(*episodes_csv, name, m);
    out.metrics.emplace(name, std::move(m));
  }

  ojson seeds = ojson::object();
  for (const auto& [name, m] : out.metrics) seeds[name] = m.per_seed_means();
  out.paired = {{"seeds", c.eval_seeds}, {"per_seed_means", seeds}};
  if (out.metrics.count("BC")) {
    const auto bc = out.metrics.at("BC").per_seed_means();
    ojson diffs = ojson::object();
    for (const auto& [name, m] : out.metrics) {
      if (name == "BC") continue;
      const auto mine = m.per_seed_means();
      std::vector<double> d;
      for (std::size_t i = 0; i < mine.size(); ++i) d.push_back(mine[i] - bc[i]);
      diffs[name + "-BC"] = d;
    }
    out.paired["differences"] = diffs;
  }
  return out;
}

inline Checkpoints LoadCheckpoints(const fs::path& dir) {
  for (auto role : {LearnerRole::kModel, LearnerRole::kBc, LearnerRole::kValue}) {
    Require(fs::exists(CheckpointPath(dir, role)),
            "missing checkpoint: " + CheckpointPath(dir, role).string(),
            ErrorCode::kIo);
  }
  return {LoadEnsemble<float>(CheckpointPath(dir, LearnerRole::kModel)),
          LoadEnsemble<float>(CheckpointPath(dir, LearnerRole::kBc)),
          LoadEnsemble<float>(CheckpointPath(dir, LearnerRole::kValue))};
}

inline void WriteResults(const fs::path& out, const std::vector<ResultRow>& rows,
                         const ojson& extra) {
  const auto json_rows = RowsToJson(rows);
  ojson doc = {{"rows", json_rows}};
  for (const auto& [k, v] : extra.items()) doc[k] = v;
  WriteJson(out / "results.json", doc);
  WriteRowsCsv(out / "results.csv", json_rows);
}

inline std::ofstream OpenEpisodesCsv(const fs::path& path, int obs_dim) {
  std::ofstream f(path, std::ios::trunc);
  Require(static_cast<bool>(f), "cannot open for writing: " + path.string(),
          ErrorCode::kIo);
  f.precision(17);
  f << "variant,seed,episode,return,steps,violations";
  for (int i = 0; i < obs_dim; ++i) f << ",first_obs" << i;
  f << '\n';
  return f;
}

inline EvalOutcome CmdEval(const RunConfig& c) {
  c.Validate();
  PrepareOutputDir(c);
  const Dataset full = LoadDataset(c.resolved_dataset_path());
  const PreparedData data =
      PrepareData(c, full, SingleDatasetSize(c), c.top_percent);
  const Checkpoints ck = LoadCheckpoints(c.resolved_checkpoint_dir());
  RunConfig rc = c;
  if (c.data_row &&
      std::find(rc.variants.begin(), rc.variants.end(), "DATA") ==
          rc.variants.end()) {
    rc.variants.push_back("DATA");
  }
  std::ofstream episodes =
      OpenEpisodesCsv(c.out / "episodes.csv", ck.model.obs_dim());
  EvalOutcome res = EvaluateVariants(
      rc, c.planner, ck, data.sampled, c.top_percent,
      c.resolved_value_horizon(c.planner.horizon), &episodes,
      c.out / "traces");
  WriteResults(c.out, res.rows, {{"paired", res.paired}});
  return res;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepPoint {
  long long dataset_size;
  double top_percent;
  int horizon;
  double kappa;
  double beta;
  double sigma;
};

inline std::vector<SweepPoint> ExpandGrid(const RunConfig& c) {
  Require(!c.sweep.empty() || c.dataset_sizes.size() > 1,
          "empty sweep grid: give at least one of sweep.kappa, sweep.horizon, "
          "sweep.beta, sweep.sigma, sweep.top_percent");
  auto or_base = [](const auto& axis, auto base) {
    using T = decltype(base);
    return axis.empty() ? std::vector<T>{base}
                        : std::vector<T>(axis.begin(), axis.end());
  };
  std::vector<SweepPoint> grid;
  for (long long n : c.dataset_sizes) {
    for (double p : or_base(c.sweep.top_percent, c.top_percent)) {
      for (int h : or_base(c.sweep.horizon, c.planner.horizon)) {
        for (double k : or_base(c.sweep.kappa, c.planner.kappa)) {
          for (double b : or_base(c.sweep.beta, c.planner.beta)) {
            for (double s : or_base(c.sweep.sigma, c.planner.sigma)) {
              grid.push_back({n, p, h, k, b, s});
            }
          }
        }
      }
    }
  }
  return grid;
}

inline std::string FormatKey(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// Cartesian product over the grid. Checkpoints are trained once per
// (dataset size, top_percent, value horizon) under <out>/checkpoints and
// reused across planner settings and reruns.
inline std::vector<ResultRow> CmdSweep(const RunConfig& c) {
  c.Validate();
  const std::vector<SweepPoint> grid = ExpandGrid(c);
  PrepareOutputDir(c);
  const Dataset full = LoadDataset(c.resolved_dataset_path());
  std::ofstream episodes = OpenEpisodesCsv(c.out / "episodes.csv",
                                           full.env_spec.obs_dim);
  std::vector<ResultRow> rows;
  std::set<std::string> policy_only_done;
  ojson paired = ojson::array();
  for (double v : c.sweep.top_percent) {
    Require(v > 0.0 && v <= 100.0, "sweep.top_percent must lie in (0, 100]");
  }
  for (const auto& pt : grid) {
    PlannerConfig pc = c.planner;
    pc.horizon = pt.horizon;
    pc.kappa = pt.kappa;
    pc.beta = pt.beta;
    pc.sigma = pt.sigma;
    pc.Validate();
    const int vh = c.resolved_value_horizon(pt.horizon);
    const PreparedData data = PrepareData(c, full, pt.dataset_size, pt.top_percent);
    const fs::path size_dir =
        c.out / "checkpoints" / ("size_" + std::to_string(pt.dataset_size));
    const fs::path policy_dir =
        size_dir / ("top_" + FormatKey(pt.top_percent) + "_vh_" +
                    std::to_string(vh));
    const Checkpoints ck = TrainOrLoad(c, data, vh, size_dir, policy_dir,
                                       /*reuse=*/true, nullptr, nullptr);

    // BC and DATA rows do not depend on planner settings: once per setting.
    RunConfig rc = c;
    rc.variants.clear();
    const std::string key =
        std::to_string(pt.dataset_size) + "/" + FormatKey(pt.top_percent);
    const bool first_for_data = policy_only_done.insert(key).second;
    std::vector<std::string> wanted = c.variants;
    if (c.data_row &&
        std::find(wanted.begin(), wanted.end(), "DATA") == wanted.end()) {
      wanted.push_back("DATA");
    }
    for (const auto& v : wanted) {
      if ((v == "BC" || v == "DATA") && !first_for_data) continue;
      rc.variants.push_back(v);
    }
    if (rc.variants.empty()) continue;
    EvalOutcome res = EvaluateVariants(rc, pc, ck, data.sampled,
                                       pt.top_percent, vh, &episodes, {});
    for (auto& r : res.rows) rows.push_back(std::move(r));
    paired.push_back({{"dataset_size", pt.dataset_size},
                      {"top_percent", pt.top_percent},
                      {"horizon", pt.horizon},
                      {"kappa", pt.kappa},
                      {"beta", pt.beta},
                      {"sigma", pt.sigma},
                      {"paired", res.paired}});
  }
  WriteResults(c.out, rows, {{"grid_points", grid.size()}, {"paired", paired}});
  return rows;
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
  std::string variant;
  int horizon = 0;
  int num_samples = 0;
  int ensemble_size = 0;
  int steps = 0;
  double policy_hz = 0.0;  // 1 / median policy time per step
  double total_hz = 0.0;   // 1 / median (policy + env) time per step
  std::string weights;     // "checkpoint" or "random-init"

  ojson ToJson() const {
    return {{"variant", variant},     {"horizon", horizon},
            {"num_samples", num_samples}, {"ensemble_size", ensemble_size},
            {"steps", steps},         {"policy_hz", policy_hz},
            {"total_hz", total_hz},   {"weights", weights}};
  }
};

inline double Median(std::vector<double> v) {
  Require(!v.empty(), "median of empty sample");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double hi = v[mid];
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + mid));
}

// Nets with the configured topology whose output layer is zeroed; used for
// timing when no checkpoints exist. Cost depends only on the topology.
inline Checkpoints TimingCheckpoints(const RunConfig& c, const EnvSpec& spec) {
  auto make = [&](LearnerRole role, std::uint64_t salt) {
    const int in = RoleInputDim(role, spec.obs_dim, spec.act_dim);
    const int out = RoleOutputDim(role, spec.obs_dim, spec.act_dim);
    std::vector<Mlp<float>> members;
    for (int i = 0; i < c.ensemble_size; ++i) {
      auto p = InitMlpParams<float>(in, c.train.hidden, out,
                                    DeriveSeed(c.seed, salt, i));
      p.weights.back().setZero();
      p.biases.back().setZero();
      members.push_back({std::move(p), NormStats<float>::Identity(in, out)});
    }
    return EnsembleNet<float>(role, spec.obs_dim, spec.act_dim,
                              std::move(members));
  };
  return {make(LearnerRole::kModel, 1), make(LearnerRole::kBc, 2),
          make(LearnerRole::kValue, 3)};
}

template <typename ActFn, typename ResetFn>
BenchRow TimePolicy(const Environment& env, int warmup, int steps, ActFn act,
                    ResetFn reset) {
  using Clock = std::chrono::steady_clock;
  Rng rng(DeriveSeed(0, 0xbe4cULL));
  EnvState state = env.InitialState(rng);
  reset();
  std::vector<double> policy_t;
  std::vector<double> total_t;
  for (int i = 0; i < warmup + steps; ++i) {
    if (state.t >= env.spec().episode_length) {
      state = env.InitialState(rng);
      reset();
    }
    const auto t0 = Clock::now();
    const VectorXd a = act(env.Observe(state));
    const auto t1 = Clock::now();
    state = env.Step(state, a).state;
    const auto t2 = Clock::now();
    if (i >= warmup) {
      policy_t.push_back(std::chrono::duration<double>(t1 - t0).count());
      total_t.push_back(std::chrono::duration<double>(t2 - t0).count());
    }
  }
  BenchRow r;
  r.steps = steps;
  r.policy_hz = 1.0 / Median(policy_t);
  r.total_hz = 1.0 / Median(total_t);
  return r;
}

inline std::vector<BenchRow> CmdBench(const RunConfig& c) {
  c.Validate();
  Require(c.bench.steps >= 1 && c.bench.warmup >= 0 && c.bench.num_samples >= 1,
          "bench.steps and bench.num_samples must be >= 1");
  PrepareOutputDir(c);
  const auto env = MakeEnvironment(c.env);
  const fs::path dir = c.resolved_checkpoint_dir();
  const bool have = fs::exists(CheckpointPath(dir, LearnerRole::kModel)) &&
                    fs::exists(CheckpointPath(dir, LearnerRole::kBc)) &&
                    fs::exists(CheckpointPath(dir, LearnerRole::kValue));
  const Checkpoints ck =
      have ? LoadCheckpoints(dir) : TimingCheckpoints(c, env->spec());
  const std::string weights = have ? "checkpoint" : "random-init";
  const LearnedModels<float> models(&ck.model, &ck.bc, &ck.value);
  const ActionBounds bounds = ActionBounds::From(env->spec());

  std::vector<BenchRow> rows;
  {
    BcPolicy<float> bc(ck.bc, bounds);
    BenchRow r = TimePolicy(
        *env, c.bench.warmup, c.bench.steps,
        [&](const VectorXd& o) { return bc.Act(o); }, [&] { bc.Reset(); });
    r.variant = "BC";
    r.ensemble_size = ck.bc.size();
    r.weights = weights;
    rows.push_back(r);
  }
  for (int h : c.bench.horizons) {
    PlannerConfig pc = c.planner;
    pc.mode = PlannerMode::kMbop;
    pc.horizon = h;
    pc.num_samples = c.bench.num_samples;
    MpcController<LearnedModels<float>> mpc(models, pc, bounds, c.objective);
    BenchRow r = TimePolicy(
        *env, c.bench.warmup, c.bench.steps,
        [&](const VectorXd& o) { return mpc.Act(o); }, [&] { mpc.Reset(); });
    r.variant = "MBOP";
    r.horizon = h;
    r.num_samples = pc.num_samples;
    r.ensemble_size = ck.model.size();
    r.weights = weights;
    rows.push_back(r);
  }
  std::vector<ojson> json_rows;
  for (const auto& r : rows) json_rows.push_back(r.ToJson());
  WriteJson(c.out / "results.json", {{"rows", json_rows}});
  WriteRowsCsv(c.out / "results.csv", json_rows);
  return rows;
}

}  // namespace mbop
