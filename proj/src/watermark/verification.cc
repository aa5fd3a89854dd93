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


#include "splitmark/watermark/verification.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "splitmark/common/errors.h"
#include "splitmark/common/random.h"
#include "splitmark/nn/loss.h"

namespace splitmark::wm {

namespace {
constexpr std::size_t kChunk = 256;

void CheckUnit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ConfigError(std::string(what) + " must lie in [0, 1]");
  }
}
}  // namespace

std::vector<ClassId> Predict(const nn::Model& bottom, const nn::Model& top,
                             const data::LabeledDataset& ds,
                             std::span<const std::size_t> indices,
                             const data::TriggerPattern* stamp) {
  std::vector<ClassId> out;
  out.reserve(indices.size());
  for (std::size_t off = 0; off < indices.size(); off += kChunk) {
    const auto part =
        indices.subspan(off, std::min(kChunk, indices.size() - off));
    nn::Tensor x = ds.Gather(part);
    if (stamp != nullptr) {
      const std::size_t s = ds.sample_size();
      for (std::size_t k = 0; k < part.size(); ++k) {
        data::StampInPlace(x.data().subspan(k * s, s), *stamp);
      }
    }
    const auto pred = nn::Argmax(top.Infer(bottom.Infer(x)));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

double Accuracy(const nn::Model& bottom, const nn::Model& top,
                const data::LabeledDataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const auto pred = Predict(bottom, top, ds, all);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ds.label(i);
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

BottomReport VerifyBottom(const nn::Model& bottom, const nn::Model& top,
                          const data::TriggerPattern& trig,
                          const data::LabeledDataset& test, double rho,
                          double tau, std::uint64_t seed) {
  CheckUnit(rho, "verification rho");
  CheckUnit(tau, "tau");
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.label(i) != trig.target) pool.push_back(i);
  }
  Rng rng(DeriveSeed(seed, {kStreamVerify, trig.owner}));
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(data::PoisonCount(rho, pool.size()));
  if (pool.empty()) {
    throw VerificationError("no test samples left to trigger (rho too small "
                            "or every sample already has the target label)");
  }
  std::sort(pool.begin(), pool.end());

  const auto pred = Predict(bottom, top, test, pool, &trig);
  BottomReport r;
  r.n_triggered = pool.size();
  r.theta_b = static_cast<double>(std::count(pred.begin(), pred.end(),
                                             trig.target)) /
              static_cast<double>(pool.size());
  r.tau = tau;
  r.decision = r.theta_b >= tau;
  r.clean_accuracy = Accuracy(bottom, top, test);
  return r;
}

std::vector<AuditResult> FreeRiderAudit(
    std::span<const OwnershipClaim> claims, const nn::Model& bottom,
    const nn::Model& top, const data::LabeledDataset& probe, double tau) {
  CheckUnit(tau, "tau");
  std::vector<AuditResult> out;
  for (const auto& c : claims) {
    AuditResult a;
    a.client = c.client;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (probe.label(i) != c.declared) idx.push_back(i);
    }
    if (!idx.empty() && c.trigger.pattern.shape() == probe.sample_shape()) {
      const auto trig = Predict(bottom, top, probe, idx, &c.trigger);
      const auto clean = Predict(bottom, top, probe, idx);
      const double n = static_cast<double>(idx.size());
      a.triggered_rate = std::count(trig.begin(), trig.end(), c.declared) / n;
      a.clean_rate = std::count(clean.begin(), clean.end(), c.declared) / n;
      a.pass = a.triggered_rate >= tau && a.clean_rate < tau;
    }
    out.push_back(a);
  }
  return out;
}

nlohmann::json TopReportJson(double theta_f, double threshold) {
  return {{"theta_F", theta_f},
          {"tau", threshold},
          {"decision", theta_f >= threshold}};
}

nlohmann::json BottomReportJson(const BottomReport& r) {
  return {{"theta_B", r.theta_b},
          {"tau", r.tau},
          {"decision", r.decision},
          {"n_triggered", r.n_triggered},
          {"clean_accuracy", r.clean_accuracy}};
}

}  // namespace splitmark::wm
