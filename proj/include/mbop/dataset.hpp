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
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbop/common.hpp"
#include "mbop/envs.hpp"
#include "mbop/episode.hpp"

namespace mbop {

inline constexpr int kDatasetSchemaVersion = 1;

struct Dataset {
  EnvSpec env_spec;
  std::vector<Episode> episodes;

  long long total_steps() const {
    long long n = 0;
    for (const auto& e : episodes) n += e.length();
    return n;
  }

  bool operator==(const Dataset&) const = default;
};

inline void ValidateDataset(const Dataset& dataset) {
  for (const auto& e : dataset.episodes) {
    ValidateEpisode(e);
    Require(e.observations.cols() == dataset.env_spec.obs_dim &&
                e.actions.cols() == dataset.env_spec.act_dim,
            "episode dimensions differ from env spec",
            ErrorCode::kDimensionMismatch);
  }
}

struct ReturnStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  int count = 0;
};

inline ReturnStats ComputeReturnStats(const std::vector<double>& values) {
  ReturnStats s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.count;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / s.count);
  return s;
}

inline std::vector<double> EpisodeReturns(const Dataset& dataset) {
  std::vector<double> out;
  out.reserve(dataset.episodes.size());
  for (const auto& e : dataset.episodes) out.push_back(e.episode_return);
  return out;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON persistence: a header record, then one record per
// episode. Doubles are written in shortest round-trip form.

namespace internal {

using nlohmann::json;

inline json VectorToJson(const VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline VectorXd JsonToVector(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(values.data(),
                                    static_cast<Eigen::Index>(values.size()));
}

inline json MatrixRowsToJson(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline MatrixXd JsonToMatrixRows(const json& j, Eigen::Index cols) {
  MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const json& row = j.at(r);
    Require(static_cast<Eigen::Index>(row.size()) == cols,
            "row width differs from env spec", ErrorCode::kDimensionMismatch);
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(c).get<double>();
  }
  return m;
}

}  // namespace internal

inline nlohmann::json EnvSpecToJson(const EnvSpec& spec) {
  return {{"name", spec.name},
          {"obs_dim", spec.obs_dim},
          {"act_dim", spec.act_dim},
          {"act_low", internal::VectorToJson(spec.act_low)},
          {"act_high", internal::VectorToJson(spec.act_high)},
          {"dt", spec.dt},
          {"episode_length", spec.episode_length}};
}

inline EnvSpec EnvSpecFromJson(const nlohmann::json& j) {
  EnvSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.obs_dim = j.at("obs_dim").get<int>();
  spec.act_dim = j.at("act_dim").get<int>();
  spec.act_low = internal::JsonToVector(j.at("act_low"));
  spec.act_high = internal::JsonToVector(j.at("act_high"));
  spec.dt = j.at("dt").get<double>();
  spec.episode_length = j.at("episode_length").get<int>();
  return spec;
}

inline nlohmann::json BehaviorPolicyToJson(const BehaviorPolicySpec& p) {
  return {{"kind", BehaviorKindName(p.kind)},
          {"noise_std", p.noise_std},
          {"quality", p.quality}};
}

inline BehaviorPolicySpec BehaviorPolicyFromJson(const nlohmann::json& j) {
  BehaviorPolicySpec p;
  p.kind = ParseBehaviorKind(j.at("kind").get<std::string>());
  p.noise_std = j.value("noise_std", 0.0);
  p.quality = j.value("quality", 1.0);
  return p;
}

inline void SaveDataset(const Dataset& dataset,
                        const std::filesystem::path& path) {
  ValidateDataset(dataset);
  std::ofstream out(path, std::ios::trunc);
  Require(static_cast<bool>(out), "cannot open for writing: " + path.string(),
          ErrorCode::kIo);
  nlohmann::json header = {{"format", "mbop-dataset"},
                           {"schema_version", kDatasetSchemaVersion},
                           {"env_spec", EnvSpecToJson(dataset.env_spec)},
                           {"num_episodes", dataset.episodes.size()},
                           {"total_steps", dataset.total_steps()}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < dataset.episodes.size(); ++i) {
    const Episode& e = dataset.episodes[i];
    nlohmann::json rec = {
        {"index", i},
        {"meta",
         {{"env", e.meta.env},
          {"policy", BehaviorPolicyToJson(e.meta.policy)},
          {"seed", e.meta.seed}}},
        {"steps", e.length()},
        {"observations", internal::MatrixRowsToJson(e.observations)},
        {"actions", internal::MatrixRowsToJson(e.actions)},
        {"rewards", internal::VectorToJson(e.rewards)},
        {"return", e.episode_return}};
    out << rec.dump() << '\n';
  }
  Require(static_cast<bool>(out), "write failed: " + path.string(),
          ErrorCode::kIo);
}

inline Dataset LoadDataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), "cannot open for reading: " + path.string(),
          ErrorCode::kIo);
  std::string line;
  Require(static_cast<bool>(std::getline(in, line)),
          "missing header record: " + path.string(),
          ErrorCode::kTruncatedFile);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kTruncatedFile,
                "unreadable header record: " + std::string(e.what()));
  }
  const int version = header.value("schema_version", -1);
  if (header.value("format", "") != "mbop-dataset" ||
      version != kDatasetSchemaVersion) {
    throw Error(ErrorCode::kSchemaVersion,
                "unsupported dataset schema version " +
                    std::to_string(version) + " (expected " +
                    std::to_string(kDatasetSchemaVersion) + ")");
  }
  Dataset dataset;
  dataset.env_spec = EnvSpecFromJson(header.at("env_spec"));
  const auto count = header.at("num_episodes").get<std::size_t>();
  dataset.episodes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string where = "episode " + std::to_string(i);
    if (!std::getline(in, line)) {
      throw Error(ErrorCode::kTruncatedFile,
                  "file ends before " + where + " of " +
                      std::to_string(count));
    }
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kTruncatedFile,
                  "truncated or corrupt record at " + where);
    }
    Episode ep;
    try {
      ep.meta.env = rec.at("meta").at("env").get<std::string>();
      ep.meta.policy = BehaviorPolicyFromJson(rec.at("meta").at("policy"));
      ep.meta.seed = rec.at("meta").at("seed").get<std::uint64_t>();
      ep.observations = internal::JsonToMatrixRows(rec.at("observations"),
                                                   dataset.env_spec.obs_dim);
      ep.actions = internal::JsonToMatrixRows(rec.at("actions"),
                                              dataset.env_spec.act_dim);
      ep.rewards = internal::JsonToVector(rec.at("rewards"));
      ep.episode_return = rec.at("return").get<double>();
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kTruncatedFile,
                  "incomplete record at " + where + ": " + e.what());
    }
    try {
      ValidateEpisode(ep);
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    }
    dataset.episodes.push_back(std::move(ep));
  }
  return dataset;
}

// CSV of per-episode returns for plotting.
inline void ExportReturnsCsv(const Dataset& dataset,
                             const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  Require(static_cast<bool>(out), "cannot open for writing: " + path.string(),
          ErrorCode::kIo);
  out << "episode,steps,return,seed\n";
  out.precision(17);
  for (std::size_t i = 0; i < dataset.episodes.size(); ++i) {
    const auto& e = dataset.episodes[i];
    out << i << ',' << e.length() << ',' << e.episode_return << ','
        << e.meta.seed << '\n';
  }
}

// ---------------------------------------------------------------------------

// Draws whole episodes uniformly without replacement until the cumulative step
// count first reaches `n_steps`. Episodes appear in selection order.
inline Dataset Subsample(const Dataset& dataset, long long n_steps,
                         std::uint64_t seed) {
  Require(n_steps <= dataset.total_steps(),
          "requested " + std::to_string(n_steps) +
              " steps but dataset holds " +
              std::to_string(dataset.total_steps()));
  std::vector<std::size_t> order(dataset.episodes.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset out{dataset.env_spec, {}};
  long long taken = 0;
  for (std::size_t idx : order) {
    if (taken >= n_steps) break;
    out.episodes.push_back(dataset.episodes[idx]);
    taken += dataset.episodes[idx].length();
  }
  return out;
}

// Indices of the ceil(p * E / 100) highest-return episodes, returned in
// ascending index order. Ties prefer the earlier episode.
inline std::vector<std::size_t> TopEpisodeIndices(const Dataset& dataset,
                                                  double top_percent) {
  Require(!dataset.episodes.empty(), "cannot filter an empty dataset");
  Require(top_percent > 0.0 && top_percent <= 100.0,
          "top_percent must lie in (0, 100]");
  const std::size_t n = dataset.episodes.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return dataset.episodes[a].episode_return >
                            dataset.episodes[b].episode_return;
                   });
  auto keep = static_cast<std::size_t>(
      std::ceil(top_percent * static_cast<double>(n) / 100.0));
  keep = std::clamp<std::size_t>(keep, 1, n);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

inline Dataset FilterTopEpisodes(const Dataset& dataset, double top_percent) {
  Dataset out{dataset.env_spec, {}};
  for (std::size_t idx : TopEpisodeIndices(dataset, top_percent)) {
    out.episodes.push_back(dataset.episodes[idx]);
  }
  return out;
}

struct SplitSpec {
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
};

// Episode-level shuffle then partition; both halves are non-empty.
inline std::pair<Dataset, Dataset> SplitDataset(const Dataset& dataset,
                                                const SplitSpec& spec) {
  Require(dataset.episodes.size() >= 2, "split needs at least 2 episodes");
  Require(spec.train_fraction > 0.0 && spec.train_fraction < 1.0,
          "train_fraction must lie in (0, 1)");
  const std::size_t n = dataset.episodes.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  Dataset train{dataset.env_spec, {}};
  Dataset valid{dataset.env_spec, {}};
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? train : valid).episodes.push_back(dataset.episodes[order[i]]);
  }
  return {std::move(train), std::move(valid)};
}

// ---------------------------------------------------------------------------

enum class LearnerRole { kModel, kBc, kValue };

inline std::string_view LearnerRoleName(LearnerRole role) {
  switch (role) {
    case LearnerRole::kModel: return "model";
    case LearnerRole::kBc: return "bc";
    case LearnerRole::kValue: return "value";
  }
  return "unknown";
}

inline LearnerRole ParseLearnerRole(std::string_view name) {
  if (name == "model") return LearnerRole::kModel;
  if (name == "bc") return LearnerRole::kBc;
  if (name == "value") return LearnerRole::kValue;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown learner role: " + std::string(name));
}

// Supervised samples, one column per sample.
struct TrainingRows {
  MatrixXd inputs;
  MatrixXd targets;
  int skipped_episodes = 0;  // episodes too short for a value window

  Eigen::Index size() const { return inputs.cols(); }
};

inline int RoleInputDim(LearnerRole, int obs_dim, int act_dim) {
  return obs_dim + act_dim;
}

inline int RoleOutputDim(LearnerRole role, int obs_dim, int act_dim) {
  switch (role) {
    case LearnerRole::kModel: return 1 + obs_dim;
    case LearnerRole::kBc: return act_dim;
    case LearnerRole::kValue: return 1;
  }
  return 0;
}

// model: (s_t, a_t) -> (r_t, s_{t+1} - s_t)
// bc:    (s_t, a_{t-1}) -> a_t, with a_{-1} = 0
// value: (s_t, a_{t-1}) -> sum_{i=t}^{t+H_v-1} r_i, full windows only
inline TrainingRows MakeTrainingRows(const Dataset& dataset, LearnerRole role,
                                     int value_horizon = 1) {
  Require(role != LearnerRole::kValue || value_horizon >= 1,
          "value horizon must be >= 1");
  ValidateDataset(dataset);
  const int obs_dim = dataset.env_spec.obs_dim;
  const int act_dim = dataset.env_spec.act_dim;
  TrainingRows rows;
  long long count = 0;
  for (const auto& e : dataset.episodes) {
    const int steps = e.length();
    if (role == LearnerRole::kValue) {
      if (steps < value_horizon) {
        ++rows.skipped_episodes;
        continue;
      }
      count += steps - value_horizon + 1;
    } else {
      count += steps;
    }
  }
  rows.inputs.resize(obs_dim + act_dim, count);
  rows.targets.resize(RoleOutputDim(role, obs_dim, act_dim), count);

  Eigen::Index col = 0;
  for (const auto& e : dataset.episodes) {
    const int steps = e.length();
    if (role == LearnerRole::kValue && steps < value_horizon) continue;
    const int last = role == LearnerRole::kValue ? steps - value_horizon
                                                 : steps - 1;
    for (int t = 0; t <= last; ++t, ++col) {
      rows.inputs.col(col).head(obs_dim) = e.observations.row(t).transpose();
      switch (role) {
        case LearnerRole::kModel:
          rows.inputs.col(col).tail(act_dim) = e.actions.row(t).transpose();
          rows.targets(0, col) = e.rewards[t];
          rows.targets.col(col).tail(obs_dim) =
              (e.observations.row(t + 1) - e.observations.row(t)).transpose();
          break;
        case LearnerRole::kBc:
          rows.inputs.col(col).tail(act_dim) =
              t == 0 ? VectorXd::Zero(act_dim)
                     : VectorXd(e.actions.row(t - 1).transpose());
          rows.targets.col(col) = e.actions.row(t).transpose();
          break;
        case LearnerRole::kValue: {
          rows.inputs.col(col).tail(act_dim) =
              t == 0 ? VectorXd::Zero(act_dim)
                     : VectorXd(e.actions.row(t - 1).transpose());
          double window = 0.0;
          for (int i = t; i < t + value_horizon; ++i) window += e.rewards[i];
          rows.targets(0, col) = window;
          break;
        }
      }
    }
  }
  return rows;
}

}  // namespace mbop
