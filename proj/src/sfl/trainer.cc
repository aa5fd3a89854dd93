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


#include "splitmark/sfl/trainer.h"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <string>
#include <thread>

#include "splitmark/common/errors.h"
#include "splitmark/common/random.h"
#include "splitmark/nn/loss.h"

namespace splitmark::sfl {

namespace {

// [begin, end) batch bounds; a trailing single sample joins the previous
// batch so normalization never sees a batch of one.
std::vector<std::pair<std::size_t, std::size_t>> Batches(std::size_t n,
                                                         std::size_t b) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < n; s += b) out.emplace_back(s, std::min(n, s + b));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

double WatermarkStep(nn::Model& top, const wm::FeatureWatermark& fw,
                     double lr) {
  top.ZeroGrad();
  const double loss = wm::AccumulateWatermarkGradient(top, fw);
  if (fw.alpha > 0.0) {
    nn::SgdStep(top, lr);
  } else {
    top.ZeroGrad();
  }
  return loss;
}

}  // namespace

void TrainConfig::Validate(std::size_t num_clients) const {
  if (num_clients == 0) throw ConfigError("need at least one client");
  if (rounds == 0) throw ConfigError("rounds must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ConfigError("learning rate must be positive and finite");
  }
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  dp.Validate();
  for (ClientId k : passive_clients) {
    if (k >= num_clients) {
      throw ConfigError("passive client " + std::to_string(k) +
                        " does not exist");
    }
  }
}

double RoundRecord::MeanLoss() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : client_loss) {
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  return n == 0 ? kNotMeasured : sum / static_cast<double>(n);
}

std::vector<std::size_t> EpochOrder(std::size_t n, std::uint64_t seed,
                                    std::size_t round, ClientId k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(DeriveSeed(seed, {kStreamShuffle, round, k}));
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

TrainResult Train(const TrainConfig& cfg, SplitModelPair init,
                  std::span<const data::LabeledDataset> clients,
                  const wm::FeatureWatermark* fw, const EvalHook& eval) {
  cfg.Validate(clients.size());
  init.Validate();
  if (fw != nullptr) {
    fw->Validate();
    wm::ExtractWeights(init.top, *fw);
  }
  for (const auto& ds : clients) {
    if (ds.sample_shape() != init.bottom.input_shape()) {
      throw ConfigError("client data shape " +
                        nn::ShapeString(ds.sample_shape()) +
                        " does not match the bottom model input");
    }
  }
  const std::size_t num_clients = clients.size();
  std::vector<bool> passive(num_clients, false);
  for (ClientId k : cfg.passive_clients) passive[k] = true;
  std::vector<double> weights;
  for (const auto& ds : clients) weights.push_back(double(ds.size()));

  TrainResult res{std::move(init), {}};
  SplitModelPair& pair = res.pair;
  std::mutex top_mu;

  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    RoundRecord rec;
    rec.round = r;
    rec.client_loss.assign(num_clients, kNotMeasured);
    std::vector<nn::Model> locals(num_clients, pair.bottom);

    auto serve = [&](ClientId k) {
      if (passive[k]) return;
      const auto& ds = clients[k];
      nn::Model& bottom = locals[k];
      Rng dp_rng(DeriveSeed(cfg.seed, {kStreamDpNoise, r, k}));
      const auto order = EpochOrder(ds.size(), cfg.seed, r, k);
      double loss = 0.0;
      std::size_t seen = 0;
      for (auto [b, e] : Batches(order.size(), cfg.batch_size)) {
        const std::span<const std::size_t> idx(order.data() + b, e - b);
        const auto fwd =
            ClientForward(bottom, ds.Gather(idx), ds.GatherLabels(idx), k,
                          static_cast<std::uint32_t>(r), cfg.dp, &dp_rng);
        BackwardMsg bwd;
        {
          std::lock_guard lock(top_mu);
          bwd = ServerStep(pair.top, fwd);
          nn::SgdStep(pair.top, cfg.lr);
        }
        ClientBackward(bottom, bwd);
        nn::SgdStep(bottom, cfg.lr);
        loss += bwd.loss * double(e - b);
        seen += e - b;
      }
      bottom.ClearCache();
      rec.client_loss[k] = loss / double(seen);
      if (fw != nullptr && !cfg.wm_per_round_only) {
        std::lock_guard lock(top_mu);
        WatermarkStep(pair.top, *fw, cfg.lr);
      }
    };

    if (cfg.parallel && num_clients > 1) {
      std::vector<std::jthread> pool;
      std::vector<std::exception_ptr> errors(num_clients);
      for (ClientId k = 0; k < num_clients; ++k) {
        pool.emplace_back([&, k] {
          try {
            serve(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        });
      }
      pool.clear();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    } else {
      for (ClientId k = 0; k < num_clients; ++k) serve(k);
    }
    if (fw != nullptr && cfg.wm_per_round_only) {
      WatermarkStep(pair.top, *fw, cfg.lr);
    }
    pair.top.ClearCache();

    std::vector<const nn::Model*> ptrs;
    for (const auto& m : locals) ptrs.push_back(&m);
    pair.bottom = FedAvg(ptrs, weights);

    if (fw != nullptr) {
      const auto w = wm::ExtractWeights(pair.top, *fw);
      rec.loss_wm = wm::WmLoss(w, *fw).loss;
      rec.theta_f = wm::ThetaF(wm::WmResponse(w, *fw), fw->Signs());
    }
    if (eval && (r % cfg.eval_every == 0 || r == cfg.rounds)) eval(pair, rec);
    res.history.push_back(std::move(rec));
  }
  return res;
}

nn::Model TrainCentralized(const TrainConfig& cfg, nn::Model model,
                           const data::LabeledDataset& ds) {
  cfg.Validate(1);
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    const auto order = EpochOrder(ds.size(), cfg.seed, r, 0);
    for (auto [b, e] : Batches(order.size(), cfg.batch_size)) {
      const std::span<const std::size_t> idx(order.data() + b, e - b);
      const auto logits = model.Forward(ds.Gather(idx), nn::Mode::kTrain);
      const auto ce = nn::SoftmaxCrossEntropy(logits, ds.GatherLabels(idx));
      model.Backward(ce.grad);
      nn::SgdStep(model, cfg.lr);
    }
  }
  model.ClearCache();
  return model;
}

}  // namespace splitmark::sfl
