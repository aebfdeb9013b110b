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

#include "mbop/dataset.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "test_util.hpp"

namespace mbop {
namespace {

using testing::MakeSyntheticDataset;
using testing::MakeSyntheticEpisode;
using testing::TempDir;

TEST(DatasetIoTest, EmptyDatasetIsHeaderOnly) {
  TempDir dir;
  const Dataset empty{CartPoleSpec(), {}};
  const auto path = dir.path() / "empty.jsonl";
  SaveDataset(empty, path);
  std::ifstream in(path);
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 1);
  const Dataset loaded = LoadDataset(path);
  EXPECT_TRUE(loaded.episodes.empty());
  EXPECT_EQ(loaded.env_spec, empty.env_spec);
}

TEST(DatasetIoTest, CartPoleRoundTripIsBitExact) {
  TempDir dir;
  const CartPoleEnv env;
  const Dataset d{env.spec(),
                  RunBehaviorPolicy(
                      env, {BehaviorKind::kScriptedSwingup, 0.3, 0.6}, 5, 4)};
  const auto path = dir.path() / "cartpole.jsonl";
  SaveDataset(d, path);
  EXPECT_EQ(LoadDataset(path), d);
}

TEST(DatasetIoTest, CorruptLastLineReportsEpisode) {
  TempDir dir;
  const Dataset d = MakeSyntheticDataset(5, 20, 1);
  const auto path = dir.path() / "corrupt.jsonl";
  SaveDataset(d, path);
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  text.resize(text.size() - 40);  // chop the tail of the last record
  std::ofstream(path, std::ios::trunc) << text;
  try {
    LoadDataset(path);
    FAIL() << "expected truncated-file error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTruncatedFile);
    EXPECT_NE(std::string(e.what()).find("episode 4"), std::string::npos)
        << e.what();
  }
}

TEST(DatasetIoTest, MissingRecordsAreTruncation) {
  TempDir dir;
  const Dataset d = MakeSyntheticDataset(3, 10, 2);
  const auto path = dir.path() / "short.jsonl";
  SaveDataset(d, path);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  std::ofstream(path, std::ios::trunc) << header << '\n' << first << '\n';
  try {
    LoadDataset(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTruncatedFile);
    EXPECT_NE(std::string(e.what()).find("episode 1"), std::string::npos);
  }
}

TEST(DatasetIoTest, SchemaVersionMismatchIsDistinct) {
  TempDir dir;
  const auto path = dir.path() / "v2.jsonl";
  SaveDataset(MakeSyntheticDataset(1, 5, 0), path);
  std::ifstream in(path);
  std::string header, rest, line;
  std::getline(in, header);
  while (std::getline(in, line)) rest += line + '\n';
  auto j = nlohmann::json::parse(header);
  j["schema_version"] = 2;
  std::ofstream(path, std::ios::trunc) << j.dump() << '\n' << rest;
  try {
    LoadDataset(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchemaVersion);
  }
}

TEST(DatasetIoTest, DimensionMismatchIsDistinct) {
  TempDir dir;
  const auto path = dir.path() / "dims.jsonl";
  SaveDataset(MakeSyntheticDataset(2, 5, 0), path);
  std::ifstream in(path);
  std::string header, rest, line;
  std::getline(in, header);
  while (std::getline(in, line)) rest += line + '\n';
  auto j = nlohmann::json::parse(header);
  j["env_spec"]["obs_dim"] = 7;
  std::ofstream(path, std::ios::trunc) << j.dump() << '\n' << rest;
  try {
    LoadDataset(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(DatasetIoTest, ReturnsCsvHasOneRowPerEpisode) {
  TempDir dir;
  const Dataset d = MakeSyntheticDataset(4, 6, 3);
  ExportReturnsCsv(d, dir.path() / "returns.csv");
  std::ifstream in(dir.path() / "returns.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "episode,steps,return,seed");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string idx, steps, ret;
    std::getline(ss, idx, ',');
    std::getline(ss, steps, ',');
    std::getline(ss, ret, ',');
    EXPECT_EQ(std::stod(ret), d.episodes[static_cast<std::size_t>(rows)].episode_return);
    ++rows;
  }
  EXPECT_EQ(rows, 4);
}

TEST(SubsampleTest, FiveThousandStepsIsFiveEpisodes) {
  const Dataset d = MakeSyntheticDataset(10, 1000, 1);
  const Dataset s = Subsample(d, 5000, 42);
  EXPECT_EQ(s.episodes.size(), 5u);
  EXPECT_EQ(s.total_steps(), 5000);
}

TEST(SubsampleTest, FullSizeIsPermutation) {
  const Dataset d = MakeSyntheticDataset(8, 10, 2);
  const Dataset s = Subsample(d, d.total_steps(), 3);
  ASSERT_EQ(s.episodes.size(), d.episodes.size());
  std::vector<std::uint64_t> a, b;
  for (const auto& e : d.episodes) a.push_back(e.meta.seed);
  for (const auto& e : s.episodes) b.push_back(e.meta.seed);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(SubsampleTest, SameSeedSameSelection) {
  const Dataset d = MakeSyntheticDataset(20, 50, 3);
  EXPECT_EQ(Subsample(d, 300, 9), Subsample(d, 300, 9));
}

TEST(SubsampleTest, TooManyStepsIsAnError) {
  const Dataset d = MakeSyntheticDataset(2, 10, 3);
  EXPECT_THROW(Subsample(d, 21, 0), Error);
}

// Property: result size lies in [n, n + max episode length).
TEST(SubsampleTest, SizeBoundHoldsForVariableLengths) {
  Rng rng(17);
  std::uniform_int_distribution<int> len(1, 40);
  Dataset d{CartPoleSpec(), {}};
  int max_len = 0;
  for (int i = 0; i < 60; ++i) {
    const int l = len(rng);
    max_len = std::max(max_len, l);
    d.episodes.push_back(MakeSyntheticEpisode(l, i));
  }
  for (long long n : {1LL, 17LL, 250LL, 700LL, d.total_steps()}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const long long got = Subsample(d, n, seed).total_steps();
      EXPECT_GE(got, n);
      EXPECT_LT(got, n + max_len);
    }
  }
}

Dataset WithReturns(const std::vector<double>& returns) {
  Dataset d{CartPoleSpec(), {}};
  for (std::size_t i = 0; i < returns.size(); ++i) {
    Episode e = MakeSyntheticEpisode(1, static_cast<int>(i));
    e.rewards[0] = returns[i];
    e.episode_return = returns[i];
    d.episodes.push_back(e);
  }
  return d;
}

TEST(FilterTest, TopHalfOfFour) {
  const Dataset d = WithReturns({10, 20, 30, 40});
  const Dataset f = FilterTopEpisodes(d, 50);
  std::vector<double> kept = EpisodeReturns(f);
  std::sort(kept.begin(), kept.end());
  EXPECT_EQ(kept, (std::vector<double>{30, 40}));
}

TEST(FilterTest, HundredPercentIsIdentity) {
  const Dataset d = MakeSyntheticDataset(7, 5, 1);
  EXPECT_EQ(FilterTopEpisodes(d, 100), d);
}

TEST(FilterTest, TiesKeepEarlierEpisodes) {
  const auto idx = TopEpisodeIndices(WithReturns({5, 7, 5, 5}), 50);
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1}));
}

TEST(FilterTest, EmptyDatasetIsAnError) {
  EXPECT_THROW(FilterTopEpisodes(Dataset{CartPoleSpec(), {}}, 10), Error);
  EXPECT_THROW(FilterTopEpisodes(WithReturns({1}), 0), Error);
}

TEST(FilterTest, TopOnePercentMatchesSortOracle) {
  Rng rng(23);
  std::normal_distribution<double> g(100.0, 30.0);
  std::vector<double> returns(5000);
  for (auto& r : returns) r = std::round(g(rng));  // plenty of ties
  const Dataset d = WithReturns(returns);
  const auto kept = TopEpisodeIndices(d, 1);
  ASSERT_EQ(kept.size(), 50u);

  // Oracle: full sort of (return desc, index asc), take the first 50.
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < returns.size(); ++i) {
    all.push_back({-returns[i], i});
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected;
  for (std::size_t i = 0; i < 50; ++i) expected.push_back(all[i].second);
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(kept, expected);

  double kept_min = 1e300, dropped_max = -1e300;
  std::vector<bool> is_kept(returns.size(), false);
  for (auto i : kept) is_kept[i] = true;
  for (std::size_t i = 0; i < returns.size(); ++i) {
    if (is_kept[i]) kept_min = std::min(kept_min, returns[i]);
    else dropped_max = std::max(dropped_max, returns[i]);
  }
  EXPECT_GE(kept_min, dropped_max);
}

// Property: raising top_percent never drops a kept episode.
TEST(FilterTest, MonotoneInPercent) {
  Rng rng(5);
  std::uniform_int_distribution<int> r(0, 20);
  std::vector<double> returns(137);
  for (auto& x : returns) x = r(rng);
  const Dataset d = WithReturns(returns);
  std::vector<std::size_t> prev;
  for (double p = 1; p <= 100; p += 3) {
    const auto cur = TopEpisodeIndices(d, p);
    EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()))
        << "at p=" << p;
    prev = cur;
  }
}

TEST(SplitTest, NinetyTenOfTen) {
  const auto [train, valid] =
      SplitDataset(MakeSyntheticDataset(10, 5, 1), {0.9, 3});
  EXPECT_EQ(train.episodes.size(), 9u);
  EXPECT_EQ(valid.episodes.size(), 1u);
}

TEST(SplitTest, HalfOfTwo) {
  const auto [train, valid] =
      SplitDataset(MakeSyntheticDataset(2, 5, 1), {0.5, 0});
  EXPECT_EQ(train.episodes.size(), 1u);
  EXPECT_EQ(valid.episodes.size(), 1u);
}

TEST(SplitTest, PartitionIsDisjointAndExhaustive) {
  const Dataset d = MakeSyntheticDataset(31, 3, 8);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto [train, valid] = SplitDataset(d, {0.7, seed});
    std::map<std::uint64_t, int> count;
    for (const auto& e : d.episodes) ++count[e.meta.seed];
    for (const auto& e : train.episodes) --count[e.meta.seed];
    for (const auto& e : valid.episodes) --count[e.meta.seed];
    for (const auto& [k, v] : count) EXPECT_EQ(v, 0);
  }
  EXPECT_THROW(SplitDataset(MakeSyntheticDataset(1, 3, 0), {}), Error);
}

TEST(TrainingRowsTest, ValueWindowsOfFour) {
  Dataset d{CartPoleSpec(), {MakeSyntheticEpisode(4, 0)}};
  d.episodes[0].rewards << 1, 2, 3, 4;
  d.episodes[0].episode_return = 10;
  const TrainingRows rows = MakeTrainingRows(d, LearnerRole::kValue, 2);
  ASSERT_EQ(rows.size(), 3);
  EXPECT_EQ(rows.targets(0, 0), 3);
  EXPECT_EQ(rows.targets(0, 1), 5);
  EXPECT_EQ(rows.targets(0, 2), 7);
}

TEST(TrainingRowsTest, FirstBcRowHasZeroPreviousAction) {
  const Dataset d = MakeSyntheticDataset(3, 6, 2);
  for (LearnerRole role : {LearnerRole::kBc, LearnerRole::kValue}) {
    const TrainingRows rows = MakeTrainingRows(d, role, 2);
    const int obs = d.env_spec.obs_dim;
    const int act = d.env_spec.act_dim;
    const int per_episode = role == LearnerRole::kBc ? 6 : 5;
    for (int e = 0; e < 3; ++e) {
      const Eigen::Index col = e * per_episode;
      EXPECT_TRUE(rows.inputs.col(col).tail(act).isZero(0.0));
      EXPECT_EQ(rows.inputs.col(col + 1).tail(act),
                d.episodes[static_cast<std::size_t>(e)].actions.row(0).transpose());
      EXPECT_EQ(rows.inputs.col(col).head(obs),
                d.episodes[static_cast<std::size_t>(e)].observations.row(0).transpose());
    }
  }
}

TEST(TrainingRowsTest, ModelRowsUseStateDeltas) {
  const Dataset d = MakeSyntheticDataset(2, 4, 5);
  const TrainingRows rows = MakeTrainingRows(d, LearnerRole::kModel);
  ASSERT_EQ(rows.size(), 8);
  const Episode& e = d.episodes[1];
  const Eigen::Index col = 4 + 2;
  EXPECT_EQ(rows.targets(0, col), e.rewards[2]);
  EXPECT_EQ(rows.targets.col(col).tail(5),
            (e.observations.row(3) - e.observations.row(2)).transpose());
  EXPECT_EQ(rows.inputs.col(col).tail(1), e.actions.row(2).transpose());
}

TEST(TrainingRowsTest, ValueTargetsMatchWindowSumOracle) {
  Rng rng(101);
  std::uniform_int_distribution<int> len(1, 30);
  Dataset d{CartPoleSpec(), {}};
  for (int i = 0; i < 100; ++i) d.episodes.push_back(MakeSyntheticEpisode(len(rng), i));
  const int h = 7;
  const TrainingRows rows = MakeTrainingRows(d, LearnerRole::kValue, h);
  Eigen::Index col = 0;
  int skipped = 0;
  for (const auto& e : d.episodes) {
    if (e.length() < h) {
      ++skipped;
      continue;
    }
    std::vector<double> r(e.rewards.data(), e.rewards.data() + e.rewards.size());
    for (int t = 0; t + h <= e.length(); ++t, ++col) {
      const double oracle = std::accumulate(r.begin() + t, r.begin() + t + h, 0.0);
      ASSERT_EQ(rows.targets(0, col), oracle);
    }
  }
  EXPECT_EQ(col, rows.size());
  EXPECT_EQ(rows.skipped_episodes, skipped);
  EXPECT_GT(skipped, 0);
}

TEST(TrainingRowsTest, ConstantRewardGivesScaledTargets) {
  // A dyadic constant, so H_v * c is exactly representable.
  const double c = 0.375;
  Dataset d = MakeSyntheticDataset(4, 50, 1);
  for (auto& e : d.episodes) {
    e.rewards.setConstant(c);
    e.episode_return = SumRewards(e.rewards);
  }
  const TrainingRows rows = MakeTrainingRows(d, LearnerRole::kValue, 8);
  ASSERT_EQ(rows.size(), 4 * 43);
  for (Eigen::Index col = 0; col < rows.size(); ++col) {
    EXPECT_EQ(rows.targets(0, col), 8 * c);
  }
}

}  // namespace
}  // namespace mbop
