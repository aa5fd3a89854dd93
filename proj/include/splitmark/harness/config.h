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


#ifndef SPLITMARK_HARNESS_CONFIG_H_
#define SPLITMARK_HARNESS_CONFIG_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "splitmark/data/dataset.h"
#include "splitmark/sfl/split_pair.h"
#include "splitmark/sfl/trainer.h"

namespace splitmark::harness {

enum class Stage { kClean, kRise, kClientOnly, kServerOnly };

std::string StageName(Stage s);
Stage ParseStage(std::string_view name);

struct DataConfig {
  data::DatasetSpec spec;  // samples_per_class is derived from the splits
  std::size_t train_per_class = 200;
  std::size_t attacker_per_class = 40;
  std::size_t test_per_class = 500;
};

struct WatermarkConfig {
  std::size_t bits = 128;
  double alpha = 0.1;
  std::vector<std::uint16_t> layers = {sfl::kReferenceWatermarkLayer};
  double tau = 0.8;
  double top_threshold = 0.9;
  double rho = 0.1;
  std::size_t patch = 3;
  // Share of the eligible test samples stamped for bottom verification.
  double verify_rho = 0.5;
};

struct AttackGrid {
  std::vector<std::string> run = {"finetune", "prune", "quantize", "nc"};
  // Fine-tuning length as a share of the training sample-gradient budget.
  double finetune_budget = 0.25;
  double finetune_lr = 0.15;
  std::vector<double> prune_rates = {0.1, 0.2, 0.3, 0.4, 0.5,
                                     0.6, 0.7, 0.8, 0.9};
  std::vector<std::string> quant = {"fp16", "int32", "int8"};
  std::size_t nc_iterations = 500;
  double nc_lambda = 0.01;
  double nc_step = 0.5;
  double anomaly_threshold = 2.0;
  double unlearn_fraction = 0.2;
  // Free-rider audit population: the last clients take these roles.
  std::size_t type1_freeriders = 1;
  std::size_t type2_freeriders = 1;
};

struct ExperimentConfig {
  DataConfig data;
  sfl::ReferenceArch arch;
  std::size_t clients = 4;
  sfl::TrainConfig train;
  std::vector<Stage> stages = {Stage::kClean, Stage::kRise, Stage::kClientOnly,
                               Stage::kServerOnly};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  // Noise levels for the smashed-data DP sweep of the dual-watermark run.
  std::vector<double> dp_sweep;
  bool parallel_seeds = false;
  WatermarkConfig wm;
  AttackGrid attacks;
  std::filesystem::path output_dir = "splitmark_out";
  bool write_history = true;
  bool save_models = true;

  // Throws ConfigError naming the offending field.
  void Validate() const;
  data::DatasetSpec DatasetFor(std::uint64_t seed) const;
};

// Flat sectioned key = value text:
//
//   # comment
//   [train]
//   rounds = 60
//   seeds = 1, 2, 3
//
// Sections: dataset, train, watermark, attacks, output. Unknown sections or
// keys, repeated keys and malformed values are ConfigErrors that carry the
// line number. Keys not given keep their defaults.
ExperimentConfig ParseConfig(std::string_view text);
ExperimentConfig LoadConfig(const std::filesystem::path& path);

// SPLITMARK_SEED, when set, replaces the seed list with that single seed.
void ApplyEnvironment(ExperimentConfig& cfg);

// Canonical text form; ParseConfig(FormatConfig(c)) reproduces c.
std::string FormatConfig(const ExperimentConfig& cfg);

}  // namespace splitmark::harness

#endif  // SPLITMARK_HARNESS_CONFIG_H_
