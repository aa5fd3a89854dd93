/*
 * Copyright 2026 The SplitMark Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gtest/gtest.h"
#include "splitmark/common/errors.h"
#include "splitmark/data/dataset.h"
#include "splitmark/data/trigger.h"
#include "splitmark/sfl/protocol.h"
#include "splitmark/sfl/split_pair.h"
#include "splitmark/sfl/trainer.h"
#include "splitmark/watermark/verification.h"
#include "support/random_models.h"
#include "support/split_oracle.h"

namespace splitmark::sfl {
namespace {

using testing::RandomBatch;
using testing::RandomLabels;
using testing::Randomize;

TEST(SplitPairTest, ConcatReconstructsMonolithic) {
  nn::Model full = ReferenceNet({});
  full.Initialize(3);
  const auto pair = SplitModelPair::FromMonolithic(full, kReferenceSplit);
  pair.Validate();
  const nn::Model back = pair.Monolithic();
  ASSERT_TRUE(back.SameArchitecture(full));
  const auto a = back.StateTensors();
  const auto b = full.StateTensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
  EXPECT_THROW(SplitModelPair::FromMonolithic(full, 0), ConfigError);
  EXPECT_THROW(SplitModelPair::FromMonolithic(full, full.num_layers()),
               ConfigError);
}

TEST(ProtocolTest, SplitEquivalenceOverRandomModels) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    EXPECT_LT(testing::SplitEquivalenceError(seed), 1e-5) << seed;
  }
}

TEST(ProtocolTest, ForwardWithoutNoiseIsPlainForward) {
  auto pair = testing::RandomSplitPair(4);
  Rng rng(1);
  const auto x = RandomBatch<float>(pair.bottom.input_shape(), 3, rng);
  nn::Model ref = pair.bottom;
  const auto msg = ClientForward(pair.bottom, x, {0, 1, 0}, 2, 7);
  EXPECT_EQ(msg.activations, ref.Forward(x, nn::Mode::kTrain));
  EXPECT_EQ(msg.client, 2u);
  EXPECT_EQ(msg.round, 7u);
  EXPECT_THROW(ClientForward(pair.bottom, x, {0, 1}, 0, 0), ShapeError);
}

TEST(ProtocolTest, NoiseIsClippedFirst) {
  auto pair = testing::RandomSplitPair(5);
  Rng data(2);
  const auto x = RandomBatch<float>(pair.bottom.input_shape(), 4, data, 5.0);
  DpConfig dp;
  dp.sigma = 1e-7;
  dp.clip = 0.05;
  Rng rng(3);
  const auto msg = ClientForward(pair.bottom, x, {0, 0, 0, 0}, 0, 0, dp, &rng);
  for (float v : msg.activations.data()) EXPECT_LE(std::abs(v), 0.05 + 1e-5);
  EXPECT_THROW(ClientForward(pair.bottom, x, {0, 0, 0, 0}, 0, 0, dp),
               ConfigError);
  dp.sigma = -1;
  EXPECT_THROW(dp.Validate(), ConfigError);
}

TEST(ProtocolTest, NoiseHasZeroMean) {
  // One wide activation vector, 10^4 noisy draws of it.
  nn::Model bottom({8}, {nn::Layer::Relu()});
  const nn::Tensor x({1, 8}, {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f});
  DpConfig dp;
  dp.sigma = 0.5;
  dp.clip = 10.0;
  Rng rng(9);
  double sum = 0.0;
  std::size_t n = 0;
  for (int draw = 0; draw < 10000; ++draw) {
    const auto msg = ClientForward(bottom, x, {0}, 0, 0, dp, &rng);
    for (std::size_t i = 0; i < 8; ++i) {
      sum += msg.activations[i] - x[i];
      ++n;
    }
  }
  EXPECT_LT(std::abs(sum / double(n)), 3 * dp.sigma / 100);
}

TEST(ProtocolTest, UniformLogitsGiveLnFour) {
  nn::Model top({5}, {nn::Layer::Dense(5, 4)});
  top.Initialize(1);
  top.Parameters()[0]->value.Fill(0.0f);
  ForwardMsg msg;
  msg.activations = nn::Tensor({2, 5}, 0.3f);
  msg.labels = {1, 3};
  const auto bwd = ServerStep(top, msg);
  EXPECT_NEAR(bwd.loss, std::log(4.0), 1e-12);
  EXPECT_EQ(bwd.grad.shape(), msg.activations.shape());
  msg.labels = {1, 4};
  EXPECT_THROW(ServerStep(top, msg), DataError);
}

TEST(ProtocolTest, ClientBackwardContracts) {
  auto pair = testing::RandomSplitPair(6);
  Rng rng(4);
  const auto x = RandomBatch<float>(pair.bottom.input_shape(), 3, rng);
  BackwardMsg zero;
  zero.grad = nn::Tensor(
      [&] {
        nn::Shape s{3};
        const auto& o = pair.bottom.output_shape();
        s.insert(s.end(), o.begin(), o.end());
        return s;
      }());
  EXPECT_THROW(ClientBackward(pair.bottom, zero), StateError);

  ClientForward(pair.bottom, x, {0, 0, 0}, 0, 0);
  ClientBackward(pair.bottom, zero);
  for (const auto* p : pair.bottom.Parameters()) {
    for (float g : p->grad.data()) EXPECT_EQ(g, 0.0f);
  }

  // Two exchanges without an SGD step accumulate.
  pair.bottom.ZeroGrad();
  const auto y = RandomLabels(3, pair.top.output_shape()[0], rng);
  auto once = pair;
  const auto b1 = ServerStep(once.top, ClientForward(once.bottom, x, y, 0, 0));
  ClientBackward(once.bottom, b1);
  for (int rep = 0; rep < 2; ++rep) {
    const auto b = ServerStep(pair.top, ClientForward(pair.bottom, x, y, 0, 0));
    ClientBackward(pair.bottom, b);
  }
  const auto p1 = once.bottom.Parameters();
  const auto p2 = pair.bottom.Parameters();
  for (std::size_t p = 0; p < p1.size(); ++p) {
    for (std::size_t i = 0; i < p1[p]->grad.size(); ++i) {
      EXPECT_NEAR(p2[p]->grad[i], 2 * p1[p]->grad[i],
                  1e-5 * (1 + std::abs(p1[p]->grad[i])));
    }
  }
  BackwardMsg wrong;
  wrong.grad = nn::Tensor({1, 1});
  EXPECT_THROW(ClientBackward(pair.bottom, wrong), ShapeError);
}

TEST(MessageTest, RoundTrip) {
  ForwardMsg f{3, 9, nn::Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), {1, 0}};
  const auto fb = EncodeMessage(f);
  EXPECT_EQ(MessageTag(fb), kForwardTag);
  const auto f2 = DecodeForward(fb);
  EXPECT_EQ(f2.client, 3u);
  EXPECT_EQ(f2.round, 9u);
  EXPECT_EQ(f2.activations, f.activations);
  EXPECT_EQ(f2.labels, f.labels);
  EXPECT_THROW(DecodeBackward(fb), FormatError);

  BackwardMsg b{1, 2, nn::Tensor({1, 2}, {0.5f, -0.25f}), 1.25};
  const auto bb = EncodeMessage(b);
  EXPECT_EQ(MessageTag(bb), kBackwardTag);
  const auto b2 = DecodeBackward(bb);
  EXPECT_EQ(b2.grad, b.grad);
  EXPECT_EQ(b2.loss, 1.25);
  auto bad = bb;
  bad[8] ^= 1;
  EXPECT_THROW(DecodeBackward(bad), FormatError);
}

TEST(FedAvgTest, ConvexCombinations) {
  nn::Model a = ReferenceNet({});
  nn::Model b = a;
  Randomize(a, 1);
  Randomize(b, 2);
  const nn::Model* same[] = {&a, &a, &a};
  const double w3[] = {1, 2, 3};
  const auto s = FedAvg(same, w3);
  for (std::size_t t = 0; t < s.StateTensors().size(); ++t) {
    const auto x = s.StateTensors()[t]->data();
    const auto y = a.StateTensors()[t]->data();
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(x[i], y[i]);
  }
  const nn::Model* two[] = {&a, &b};
  for (auto [wa, wb, ca] : {std::tuple{1.0, 1.0, 0.5}, {100.0, 300.0, 0.25}}) {
    const double w[] = {wa, wb};
    const auto m = FedAvg(two, w);
    const auto ms = m.StateTensors();
    for (std::size_t t = 0; t < ms.size(); ++t) {
      const auto x = ms[t]->data();
      const auto pa = a.StateTensors()[t]->data();
      const auto pb = b.StateTensors()[t]->data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double want = ca * pa[i] + (1 - ca) * double(pb[i]);
        EXPECT_NEAR(x[i], want, 1e-6 * (1 + std::abs(want)));
      }
    }
  }
}

TEST(FedAvgTest, PermutationInvariant) {
  std::vector<nn::Model> models(5, ReferenceNet({}));
  std::vector<double> w = {10, 20, 5, 40, 25};
  for (std::size_t k = 0; k < models.size(); ++k) Randomize(models[k], k);
  std::vector<std::size_t> perm(5);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<const nn::Model*> ptrs;
  for (auto& m : models) ptrs.push_back(&m);
  const auto ref = FedAvg(ptrs, w);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<const nn::Model*> p;
    std::vector<double> pw;
    for (std::size_t k : perm) {
      p.push_back(&models[k]);
      pw.push_back(w[k]);
    }
    const auto got = FedAvg(p, pw);
    for (std::size_t t = 0; t < ref.StateTensors().size(); ++t) {
      const auto x = got.StateTensors()[t]->data();
      const auto y = ref.StateTensors()[t]->data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_LE(std::abs(x[i] - y[i]),
                  1e-6 * std::max(1.0f, std::abs(y[i])));
      }
    }
  }
}

TEST(FedAvgTest, Errors) {
  nn::Model a = ReferenceNet({});
  ReferenceArch other;
  other.hidden = 8;
  nn::Model b = ReferenceNet(other);
  const nn::Model* two[] = {&a, &b};
  const double w[] = {1, 1};
  EXPECT_THROW(FedAvg(two, w), AggregationError);
  const nn::Model* one[] = {&a};
  const double zero[] = {0};
  EXPECT_THROW(FedAvg(one, zero), AggregationError);
  const double neg[] = {-1};
  EXPECT_THROW(FedAvg(one, neg), AggregationError);
  EXPECT_THROW(FedAvg(std::span<const nn::Model* const>{},
                      std::span<const double>{}),
               AggregationError);
}

// Small end-to-end fixture: 4 classes of 8x8 images, a narrow reference net.
struct Scenario {
  ReferenceArch arch;
  data::LabeledDataset train;
  data::LabeledDataset test;

  static Scenario Make(std::uint64_t seed, std::size_t per_class = 60) {
    data::DatasetSpec s;
    s.height = 8;
    s.width = 8;
    s.samples_per_class = per_class + 100;
    s.seed = seed;
    const auto ds = data::GenerateSynthetic(s);
    const std::size_t counts[] = {per_class, 100};
    auto parts = data::StratifiedSplit(ds, counts, seed);
    ReferenceArch a;
    a.height = 8;
    a.width = 8;
    a.hidden = 48;
    return {a, parts[0], parts[1]};
  }
};

TrainConfig QuickConfig(std::size_t rounds) {
  TrainConfig c;
  c.rounds = rounds;
  c.batch_size = 16;
  c.seed = 5;
  c.eval_every = 1;
  return c;
}

TEST(TrainTest, HistoryHasOneEntryPerRound) {
  const auto sc = Scenario::Make(1);
  const auto shards = data::RandomPartition(sc.train, 2, 1);
  int evals = 0;
  auto cfg = QuickConfig(4);
  cfg.eval_every = 3;
  const auto res = Train(cfg, MakeReferencePair(sc.arch, 1), shards, nullptr,
                         [&](const SplitModelPair&, RoundRecord& r) {
                           ++evals;
                           r.acc_main = 0.5;
                         });
  ASSERT_EQ(res.history.size(), 4u);
  EXPECT_EQ(evals, 2);  // round 3 and the final round
  EXPECT_EQ(res.history[2].acc_main, 0.5);
  EXPECT_TRUE(std::isnan(res.history[1].acc_main));
  for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(res.history[r].round, r + 1);
}

TEST(TrainTest, SingleClientMatchesCentralizedTraining) {
  const auto sc = Scenario::Make(2);
  const auto cfg = QuickConfig(8);
  const auto init = MakeReferencePair(sc.arch, 2);
  const data::LabeledDataset one[] = {sc.train};
  const auto res = Train(cfg, init, one);
  const nn::Model central = TrainCentralized(cfg, init.Monolithic(), sc.train);
  const auto central_pair =
      SplitModelPair::FromMonolithic(central, init.split_index);
  const double split_acc = wm::Accuracy(res.pair.bottom, res.pair.top, sc.test);
  const double central_acc =
      wm::Accuracy(central_pair.bottom, central_pair.top, sc.test);
  EXPECT_LE(std::abs(split_acc - central_acc), 0.02);
  EXPECT_GT(central_acc, 0.9);
}

TEST(TrainTest, SequentialTrainingIsBitwiseDeterministic) {
  const auto sc = Scenario::Make(3);
  const auto shards = data::RandomPartition(sc.train, 3, 3);
  auto cfg = QuickConfig(3);
  cfg.dp.sigma = 0.1;
  const auto fw = wm::GenerateFeatureWatermark(
      1, 16, {kReferenceWatermarkLayer}, MakeReferencePair(sc.arch, 3).top,
      0.1);
  const auto a = Train(cfg, MakeReferencePair(sc.arch, 3), shards, &fw);
  const auto b = Train(cfg, MakeReferencePair(sc.arch, 3), shards, &fw);
  const auto sa = a.pair.Monolithic().StateTensors();
  const auto sb = b.pair.Monolithic().StateTensors();
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(*sa[i], *sb[i]);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(a.history[r].client_loss, b.history[r].client_loss);
  }
}

TEST(TrainTest, WatermarkEmbedsAndCleanRunStaysAtChance) {
  const auto sc = Scenario::Make(4);
  const auto shards = data::RandomPartition(sc.train, 2, 4);
  const auto init = MakeReferencePair(sc.arch, 4);
  // 32 signs in the 48 scale entries of the narrow net.
  auto fw = wm::GenerateFeatureWatermark(9, 32, {kReferenceWatermarkLayer},
                                         init.top, 0.5);
  const auto cfg = QuickConfig(10);
  const auto dual = Train(cfg, init, shards, &fw);
  EXPECT_EQ(dual.history.back().theta_f, 1.0);
  EXPECT_EQ(wm::VerifyTop(dual.pair.top, fw), 1.0);

  // Same secret, alpha = 0: the signature is never pushed.
  auto inert = fw;
  inert.alpha = 0.0;
  const auto clean = Train(cfg, init, shards, &inert);
  const double chance = wm::VerifyTop(clean.pair.top, fw);
  EXPECT_GE(chance, 0.35);
  EXPECT_LE(chance, 0.65);
}

TEST(TrainTest, BackdoorIsLearnedWithoutHurtingAccuracy) {
  const auto sc = Scenario::Make(5, 100);
  auto shards = data::RandomPartition(sc.train, 2, 5);
  data::TriggerSpec ts;
  ts.height = 8;
  ts.width = 8;
  ts.patch = 1;  // 1/64 of the pixels
  ts.seed = 5;
  const auto trig = data::MakeTrigger(ts);
  const auto init = MakeReferencePair(sc.arch, 5);
  const auto cfg = QuickConfig(20);
  const auto clean = Train(cfg, init, shards);
  const double clean_acc =
      wm::Accuracy(clean.pair.bottom, clean.pair.top, sc.test);
  const double clean_theta =
      wm::VerifyBottom(clean.pair.bottom, clean.pair.top, trig, sc.test, 1.0,
                       0.8, 1)
          .theta_b;
  shards[0] = data::Poison(shards[0], trig, 0.2, 5).dataset;
  const auto marked = Train(cfg, init, shards);
  const auto rep = wm::VerifyBottom(marked.pair.bottom, marked.pair.top, trig,
                                    sc.test, 1.0, 0.8, 1);
  EXPECT_GT(rep.theta_b, clean_theta + 0.3);
  EXPECT_LE(std::abs(rep.clean_accuracy - clean_acc), 0.05);
}

TEST(TrainTest, ParallelModeTrains) {
  const auto sc = Scenario::Make(6);
  const auto shards = data::RandomPartition(sc.train, 4, 6);
  auto cfg = QuickConfig(8);
  cfg.parallel = true;
  const auto init = MakeReferencePair(sc.arch, 6);
  const auto fw = wm::GenerateFeatureWatermark(
      2, 32, {kReferenceWatermarkLayer}, init.top, 0.5);
  const auto res = Train(cfg, init, shards, &fw);
  EXPECT_EQ(wm::VerifyTop(res.pair.top, fw), 1.0);
  EXPECT_GT(wm::Accuracy(res.pair.bottom, res.pair.top, sc.test), 0.9);
}

TEST(TrainTest, PassiveClientsContributeTheGlobalBottom) {
  const auto sc = Scenario::Make(7);
  const auto shards = data::RandomPartition(sc.train, 2, 7);
  auto cfg = QuickConfig(1);
  const auto init = MakeReferencePair(sc.arch, 7);
  cfg.passive_clients = {0, 1};
  const auto idle = Train(cfg, init, shards);
  const auto a = idle.pair.bottom.StateTensors();
  const auto b = init.bottom.StateTensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
  EXPECT_TRUE(std::isnan(idle.history[0].client_loss[0]));
  cfg.passive_clients = {2};
  EXPECT_THROW(Train(cfg, init, shards), ConfigError);
}

TEST(TrainTest, ConfigErrors) {
  const auto sc = Scenario::Make(8);
  const data::LabeledDataset one[] = {sc.train};
  const auto init = MakeReferencePair(sc.arch, 8);
  auto cfg = QuickConfig(1);
  cfg.lr = 0;
  EXPECT_THROW(Train(cfg, init, one), ConfigError);
  cfg = QuickConfig(0);
  EXPECT_THROW(Train(cfg, init, one), ConfigError);
  EXPECT_THROW(Train(QuickConfig(1), init, {}), ConfigError);
}

}  // namespace
}  // namespace splitmark::sfl
