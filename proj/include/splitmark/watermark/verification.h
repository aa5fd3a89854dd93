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


#ifndef SPLITMARK_WATERMARK_VERIFICATION_H_
#define SPLITMARK_WATERMARK_VERIFICATION_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitmark/common/types.h"
#include "splitmark/data/dataset.h"
#include "splitmark/data/trigger.h"
#include "splitmark/nn/model.h"

namespace splitmark::wm {

inline constexpr double kDefaultTau = 0.8;

// Eval-mode predictions of top(bottom(x)) for the chosen samples, optionally
// stamped with `stamp` first. Runs in chunks; models are not modified.
std::vector<ClassId> Predict(const nn::Model& bottom, const nn::Model& top,
                             const data::LabeledDataset& ds,
                             std::span<const std::size_t> indices,
                             const data::TriggerPattern* stamp = nullptr);

// Clean top-1 accuracy over the whole dataset.
double Accuracy(const nn::Model& bottom, const nn::Model& top,
                const data::LabeledDataset& ds);

struct BottomReport {
  double theta_b = 0.0;
  double tau = kDefaultTau;
  bool decision = false;
  std::size_t n_triggered = 0;
  // Accuracy of the same pair on the untouched test set.
  double clean_accuracy = 0.0;
};

// Stamps a seeded rho fraction of the test samples whose true label differs
// from the trigger target and reports the share predicted as the target.
// Throws VerificationError if that subset is empty, ConfigError on rho or
// tau outside [0, 1].
BottomReport VerifyBottom(const nn::Model& bottom, const nn::Model& top,
                          const data::TriggerPattern& trig,
                          const data::LabeledDataset& test, double rho,
                          double tau, std::uint64_t seed);

struct OwnershipClaim {
  ClientId client = 0;
  data::TriggerPattern trigger;
  ClassId declared = 0;
};

struct AuditResult {
  ClientId client = 0;
  double triggered_rate = 0.0;  // triggered probes predicted as declared
  double clean_rate = 0.0;      // the same probes, clean, predicted as declared
  bool pass = false;            // false flags a free-rider
};

// A claim passes when its trigger drives the probes (true label != declared)
// to the declared class at rate >= tau while the clean probes do not.
std::vector<AuditResult> FreeRiderAudit(
    std::span<const OwnershipClaim> claims, const nn::Model& bottom,
    const nn::Model& top, const data::LabeledDataset& probe, double tau);

nlohmann::json TopReportJson(double theta_f, double threshold);
nlohmann::json BottomReportJson(const BottomReport& r);

}  // namespace splitmark::wm

#endif  // SPLITMARK_WATERMARK_VERIFICATION_H_
