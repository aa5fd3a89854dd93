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


#ifndef SPLITMARK_HARNESS_EXPERIMENT_H_
#define SPLITMARK_HARNESS_EXPERIMENT_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "splitmark/attack/attacks.h"
#include "splitmark/data/dataset.h"
#include "splitmark/data/trigger.h"
#include "splitmark/harness/config.h"
#include "splitmark/sfl/split_pair.h"
#include "splitmark/sfl/trainer.h"
#include "splitmark/watermark/feature_watermark.h"
#include "splitmark/watermark/verification.h"

namespace splitmark::harness {

inline constexpr char kNoAttack[] = "none";

// One line of metrics.csv. Unmeasured values are NaN.
struct MetricsRow {
  std::uint64_t seed = 0;
  std::string stage;
  std::size_t round = 0;
  double acc_main = sfl::kNotMeasured;
  double theta_f = sfl::kNotMeasured;
  double theta_b_mean = sfl::kNotMeasured;
  double theta_b_min = sfl::kNotMeasured;
  double loss_main = sfl::kNotMeasured;
  double loss_wm = sfl::kNotMeasured;
  std::string attack = kNoAttack;
  std::string attack_param;
  // Not part of the CSV.
  std::vector<double> theta_b;
  double wall_seconds = 0.0;
  std::string note;
};

// Everything a seed's stages share: one dataset, one partition, one set of
// triggers, one feature watermark and one initialization.
struct SeedSetup {
  std::uint64_t seed = 0;
  data::LabeledDataset train;
  data::LabeledDataset attacker;
  data::LabeledDataset test;
  std::vector<data::LabeledDataset> shards;    // clean, one per client
  std::vector<data::LabeledDataset> poisoned;  // triggered, one per client
  std::vector<data::TriggerPattern> triggers;
  wm::FeatureWatermark fw;
  sfl::SplitModelPair init;
};

SeedSetup PrepareSeed(const ExperimentConfig& cfg, std::uint64_t seed);

// Accuracy, theta_F and per-client theta_B of `pair` against the setup.
MetricsRow Measure(const ExperimentConfig& cfg, const SeedSetup& setup,
                   const sfl::SplitModelPair& pair);

struct StageRun {
  Stage stage = Stage::kClean;
  sfl::SplitModelPair pair;
  MetricsRow final;
  std::vector<MetricsRow> history;  // one row per evaluated round
};

// Trains one stage. `dp_sigma` overrides cfg.train.dp.sigma when >= 0.
StageRun RunStage(const ExperimentConfig& cfg, const SeedSetup& setup,
                  Stage stage, double dp_sigma = -1.0);

// Epochs that spend `budget` of the training sample-gradient count on
// `attacker_size` samples, rounded up.
std::size_t FinetuneEpochs(const ExperimentConfig& cfg, std::size_t train_size,
                           std::size_t attacker_size);

struct NcSummary {
  std::vector<double> mask_l1;
  std::vector<double> asr;
  std::vector<double> anomaly_index;
  std::vector<ClassId> flagged;
  std::vector<ClassId> true_targets;  // distinct client target classes
  double detection_rate = 0.0;        // share of true targets flagged
  std::size_t false_positives = 0;    // flagged classes no client targets
  std::vector<ClassId> unlearned;     // classes used by the "nc" attack
};

struct AttackRun {
  std::vector<MetricsRow> rows;
  std::optional<NcSummary> nc;
  std::vector<attack::ReversedTrigger> reversed;
};

// Runs the configured attack grid against a watermarked pair.
AttackRun RunAttacks(const ExperimentConfig& cfg, const SeedSetup& setup,
                     const sfl::SplitModelPair& marked);

// Runs one attack kind ("finetune", "prune", "quantize", "nc", "nc_all",
// "unlearn_true"); `nc` may carry reversed triggers from an earlier call.
AttackRun RunAttack(const ExperimentConfig& cfg, const SeedSetup& setup,
                    const sfl::SplitModelPair& marked, const std::string& kind,
                    std::vector<attack::ReversedTrigger>* nc_cache = nullptr);

struct SeedReport {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;  // stage rows, then attack and DP rows
  std::map<std::string, std::vector<MetricsRow>> history;  // by stage
  std::optional<NcSummary> nc;
  std::vector<ClassId> targets;  // per client
  std::string error;
  // Filled when models are kept: the dual-watermark pair and its setup.
  std::shared_ptr<const SeedSetup> setup;
  std::shared_ptr<const sfl::SplitModelPair> marked;
};

SeedReport RunSeed(const ExperimentConfig& cfg, std::uint64_t seed,
                   bool keep_models = false);

struct SignificanceTest {
  std::string name;
  std::string a_stage;  // alternative: values of a exceed values of b
  std::string b_stage;
  std::string metric;
  double u = 0.0;
  double p = 1.0;
  bool exact = false;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<SeedReport> seeds;
  std::vector<SignificanceTest> tests;
};

RunReport RunExperiment(const ExperimentConfig& cfg, bool keep_models = false);

// Final-row values of `metric` ("acc_main", "theta_F", "theta_B_mean",
// "theta_B_min") for a stage across seeds, in seed order.
std::vector<double> StageValues(const RunReport& report,
                                const std::string& stage,
                                const std::string& metric);

// Mann-Whitney comparisons between stages present in the report.
std::vector<SignificanceTest> CompareStages(const RunReport& report);

enum class FreeRiderRole { kBenign, kPassive, kForger };
std::string RoleName(FreeRiderRole r);

struct FreeRiderClient {
  ClientId client = 0;
  FreeRiderRole role = FreeRiderRole::kBenign;
  ClassId declared = 0;
  wm::AuditResult audit;
  std::vector<std::pair<std::size_t, double>> theta_b_history;  // round, rate
  std::size_t forged_at_round = 0;  // forgers only
};

struct FreeRiderReport {
  std::uint64_t seed = 0;
  std::vector<FreeRiderClient> clients;
  MetricsRow final;
};

// Dual-watermark training where the last type1 + type2 clients are
// free-riders that never train. Type I declares its own, never embedded,
// trigger; Type II reverse-engineers a trigger for its declared class from
// the mid-training model and its own data, cut down to a binary mask within
// the stealth budget so it is a well-formed claim. Everyone is audited on the
// final model.
FreeRiderReport RunFreeRiders(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace splitmark::harness

#endif  // SPLITMARK_HARNESS_EXPERIMENT_H_
