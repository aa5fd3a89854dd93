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


#ifndef SPLITMARK_SFL_TRAINER_H_
#define SPLITMARK_SFL_TRAINER_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "splitmark/data/dataset.h"
#include "splitmark/sfl/protocol.h"
#include "splitmark/sfl/split_pair.h"
#include "splitmark/watermark/feature_watermark.h"

namespace splitmark::sfl {

struct TrainConfig {
  std::size_t rounds = 60;
  std::size_t batch_size = 32;
  double lr = 0.15;
  // The watermark step runs after every client's service unless this is
  // set, in which case it runs once per round after the last client.
  bool wm_per_round_only = false;
  // Serve clients from concurrent threads; top updates stay serialized.
  bool parallel = false;
  DpConfig dp;
  std::uint64_t seed = 1;
  // Clients that skip local training and return the global bottom as-is.
  std::vector<ClientId> passive_clients;
  // Evaluation hook cadence in rounds; the last round is always evaluated.
  std::size_t eval_every = 10;

  void Validate(std::size_t num_clients) const;
};

inline constexpr double kNotMeasured = std::numeric_limits<double>::quiet_NaN();

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  std::vector<double> client_loss;  // mean main loss per client
  double loss_wm = kNotMeasured;    // L_WM after the round
  double theta_f = kNotMeasured;
  // Filled by the evaluation hook.
  double acc_main = kNotMeasured;
  std::vector<double> theta_b;

  double MeanLoss() const;
};

using EvalHook = std::function<void(const SplitModelPair&, RoundRecord&)>;

struct TrainResult {
  SplitModelPair pair;
  std::vector<RoundRecord> history;
};

// Split federated training from `init`. Each round every client starts from
// the global bottom, runs one shuffled epoch of local batches through the
// split protocol with SGD on both halves, and the server takes a watermark
// step with strength fw->alpha when `fw` is set. Bottoms are averaged with
// weights |D_k| at the end of the round.
TrainResult Train(const TrainConfig& cfg, SplitModelPair init,
                  std::span<const data::LabeledDataset> clients,
                  const wm::FeatureWatermark* fw = nullptr,
                  const EvalHook& eval = {});

// Plain minibatch SGD on the monolithic model over one dataset, following
// the same shuffle schedule as a single-client Train(); the centralized
// baseline.
nn::Model TrainCentralized(const TrainConfig& cfg, nn::Model model,
                           const data::LabeledDataset& ds);

// Batch order of client `k` in round `r` (1-based).
std::vector<std::size_t> EpochOrder(std::size_t n, std::uint64_t seed,
                                    std::size_t round, ClientId k);

}  // namespace splitmark::sfl

#endif  // SPLITMARK_SFL_TRAINER_H_
