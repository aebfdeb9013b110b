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

#include <gtest/gtest.h>

#include <fstream>
#include <limits>

#include "mbop/ensemble.hpp"
#include "test_util.hpp"

namespace mbop {
namespace {

using testing::MakeSyntheticDataset;
using testing::RandomEnsemble;
using testing::TempDir;

TrainConfig SmallConfig(std::uint64_t seed = 0) {
  TrainConfig c;
  c.hidden = {16, 16};
  c.epochs = 3;
  c.batch_size = 64;
  c.seed = seed;
  return c;
}

TrainingRows ModelRows(int episodes = 4, int steps = 50) {
  return MakeTrainingRows(MakeSyntheticDataset(episodes, steps, 3),
                          LearnerRole::kModel, 0);
}

TEST(EnsembleTest, DefaultsMatchTrainingRecipe) {
  const TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.batch_size, 512);
  EXPECT_EQ(c.epochs, 40);
  EXPECT_EQ(c.hidden, (std::vector<int>{500, 500}));
  EXPECT_EQ(MemberInitSeed(10, 2), 12u);
}

TEST(EnsembleTest, SeededTrainingIsBitReproducible) {
  const TrainingRows rows = ModelRows();
  const auto a = TrainEnsemble<double>(rows, nullptr, LearnerRole::kModel, 5,
                                       1, 3, SmallConfig(7));
  const auto b = TrainEnsemble<double>(rows, nullptr, LearnerRole::kModel, 5,
                                       1, 3, SmallConfig(7));
  const auto c = TrainEnsemble<double>(rows, nullptr, LearnerRole::kModel, 5,
                                       1, 3, SmallConfig(8));
  EXPECT_TRUE(a.net == b.net);
  EXPECT_FALSE(a.net == c.net);
  EXPECT_EQ(a.report.members[2].train_loss, b.report.members[2].train_loss);
  // Members differ because their init seeds differ.
  EXPECT_FALSE(a.net.member(0).params == a.net.member(1).params);
  // Member i of seed s is member i-1 of seed s+1 at init; shuffles differ.
  EXPECT_EQ(InitMlpParams<double>(6, {16, 16}, 6, MemberInitSeed(7, 1)),
            InitMlpParams<double>(6, {16, 16}, 6, MemberInitSeed(8, 0)));
}

TEST(EnsembleTest, LossDecreasesAndValidationIsReported) {
  const Dataset ds = MakeSyntheticDataset(6, 60, 5);
  const auto split = SplitDataset(ds, {0.9, 1});
  const TrainingRows train = MakeTrainingRows(split.first, LearnerRole::kBc, 0);
  const TrainingRows valid = MakeTrainingRows(split.second, LearnerRole::kBc, 0);
  TrainConfig cfg = SmallConfig(1);
  cfg.epochs = 20;
  const auto res =
      TrainEnsemble<double>(train, &valid, LearnerRole::kBc, 5, 1, 2, cfg);
  ASSERT_EQ(res.report.members.size(), 2u);
  for (const auto& m : res.report.members) {
    ASSERT_EQ(m.train_loss.size(), 20u);
    ASSERT_EQ(m.valid_loss.size(), 20u);
    EXPECT_LT(m.train_loss.back(), m.train_loss.front());
  }
}

TEST(EnsembleTest, SingleMemberMeanEqualsHead) {
  const auto net =
      RandomEnsemble<double>(LearnerRole::kModel, 5, 1, 1, {8}, 11);
  const MatrixXd x = MatrixXd::Random(6, 9);
  EXPECT_EQ(net.PredictMean(x), net.Predict(0, x));
}

TEST(EnsembleTest, IdenticalMembersAgreeWithMean) {
  const auto one = RandomEnsemble<double>(LearnerRole::kValue, 5, 1, 1, {8}, 12);
  std::vector<Mlp<double>> members(3, one.member(0));
  const EnsembleNet<double> net(LearnerRole::kValue, 5, 1, members);
  const MatrixXd x = MatrixXd::Random(6, 9);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(net.Predict(k, x), net.Predict(0, x));
  EXPECT_LE((net.PredictMean(x) - net.Predict(0, x)).cwiseAbs().maxCoeff(),
            1e-14);
}

TEST(EnsembleTest, MeanMatchesPerHeadAverageOracle) {
  const auto net = RandomEnsemble<double>(LearnerRole::kModel, 5, 1, 3,
                                          {16, 16}, 13);
  Rng rng(14);
  std::normal_distribution<double> g;
  const MatrixXd x = MatrixXd::NullaryExpr(6, 1000, [&] { return g(rng); });
  const MatrixXd mean = net.PredictMean(x);
  for (int j = 0; j < x.cols(); ++j) {
    const VectorXd s = x.col(j).head(5);
    const VectorXd a = x.col(j).tail(1);
    double r = 0.0;
    VectorXd next = VectorXd::Zero(5);
    for (int k = 0; k < 3; ++k) {
      const auto p = ModelQuery(net, s, a, k);
      r += p.reward / 3.0;
      next += p.next_state / 3.0;
    }
    EXPECT_NEAR(mean(0, j), r, 1e-12);
    EXPECT_NEAR(RewardQueryMean(net, s, a), r, 1e-12);
    EXPECT_LE((s + mean.col(j).tail(5) - next).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(EnsembleTest, HeadOutOfRangeIsTyped) {
  const auto net = RandomEnsemble<double>(LearnerRole::kBc, 5, 1, 3, {4}, 15);
  for (int head : {-1, 3, 100}) {
    try {
      net.Predict(head, MatrixXd::Zero(6, 1));
      FAIL() << head;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kHeadOutOfRange);
    }
  }
}

TEST(EnsembleTest, MismatchedMembersRejected) {
  const auto a = RandomEnsemble<double>(LearnerRole::kBc, 5, 1, 1, {4}, 16);
  const auto b = RandomEnsemble<double>(LearnerRole::kBc, 5, 1, 1, {5}, 16);
  try {
    EnsembleNet<double>(LearnerRole::kBc, 5, 1, {a.member(0), b.member(0)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTopologyMismatch);
  }
  EXPECT_THROW(EnsembleNet<double>(LearnerRole::kModel, 5, 1, {a.member(0)}),
               Error);
}

TEST(CheckpointTest, RoundTripIsExact) {
  TempDir dir;
  const auto net = RandomEnsemble<float>(LearnerRole::kModel, 5, 1, 3,
                                         {12, 7}, 17);
  const auto path = dir.path() / "model.ckpt";
  SaveEnsemble(net, path);
  const auto back = LoadEnsemble<float>(path);
  EXPECT_TRUE(back == net);
  // float32 parameters widen exactly.
  const auto wide = LoadEnsemble<double>(path);
  EXPECT_TRUE(wide.Cast<float>() == net);
  EXPECT_EQ(back.role(), LearnerRole::kModel);

  const auto dnet = RandomEnsemble<double>(LearnerRole::kValue, 4, 2, 2, {}, 18);
  SaveEnsemble(dnet, dir.path() / "v.ckpt");
  EXPECT_TRUE(LoadEnsemble<double>(dir.path() / "v.ckpt") == dnet);
}

TEST(CheckpointTest, VersionAndTruncationErrors) {
  TempDir dir;
  const auto net = RandomEnsemble<float>(LearnerRole::kBc, 5, 1, 2, {8}, 19);
  const auto path = dir.path() / "bc.ckpt";
  SaveEnsemble(net, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto expect_code = [&](const std::string& content, ErrorCode code) {
    const auto p = dir.path() / "bad.ckpt";
    std::ofstream(p, std::ios::binary | std::ios::trunc) << content;
    try {
      LoadEnsemble<float>(p);
      FAIL() << ErrorCodeName(code);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code) << e.what();
    }
  };
  std::string v2 = bytes;
  v2.replace(v2.find("\"version\":1"), 11, "\"version\":2");
  expect_code(v2, ErrorCode::kSchemaVersion);
  expect_code(bytes.substr(0, bytes.size() - 3), ErrorCode::kTruncatedFile);
  expect_code("", ErrorCode::kTruncatedFile);
  try {
    LoadEnsemble<float>(dir.path() / "missing.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

TEST(EnsembleTest, DivergenceIsReported) {
  TrainingRows rows = ModelRows(2, 20);
  TrainConfig cfg = SmallConfig(0);
  cfg.learning_rate = 1e300;
  cfg.epochs = 50;
  try {
    TrainEnsemble<double>(rows, nullptr, LearnerRole::kModel, 5, 1, 1, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
  }
}

TEST(EnsembleTest, RejectsBadShapesAndConfig) {
  const TrainingRows rows = ModelRows(2, 20);
  EXPECT_THROW(TrainEnsemble<double>(rows, nullptr, LearnerRole::kBc, 5, 1, 1,
                                     SmallConfig()),
               Error);
  TrainConfig cfg = SmallConfig();
  cfg.batch_size = 0;
  EXPECT_THROW(TrainEnsemble<double>(rows, nullptr, LearnerRole::kModel, 5, 1,
                                     1, cfg),
               Error);
  EXPECT_THROW(TrainEnsemble<double>(rows, nullptr, LearnerRole::kModel, 5, 1,
                                     0, SmallConfig()),
               Error);
}

}  // namespace
}  // namespace mbop
