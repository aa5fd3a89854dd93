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


#ifndef SPLITMARK_HARNESS_REPORT_H_
#define SPLITMARK_HARNESS_REPORT_H_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitmark/harness/experiment.h"

namespace splitmark::harness {

inline constexpr char kMetricsHeader[] =
    "seed,stage,round,acc_main,theta_F,theta_B_mean,theta_B_min,loss_main,"
    "loss_wm,attack,attack_param";

// One CSV line without the newline. Rates have 4 decimals, NaN is empty.
std::string FormatMetricsRow(const MetricsRow& row);
// Header plus rows.
std::string FormatMetricsCsv(std::span<const MetricsRow> rows);
// Inverse of FormatMetricsCsv for the CSV columns. Throws FormatError.
std::vector<MetricsRow> ParseMetricsCsv(std::string_view text);
std::vector<MetricsRow> ReadMetricsCsv(const std::filesystem::path& path);
// Appends rows, writing the header first if the file is new.
void AppendMetricsCsv(const std::filesystem::path& path,
                      std::span<const MetricsRow> rows);

nlohmann::json RowJson(const MetricsRow& row);
nlohmann::json ReportJson(const RunReport& report);
nlohmann::json FreeRiderJson(const FreeRiderReport& rep);

// metrics.csv, report.json, config.ini and history/<seed>_<stage>.csv.
// Models and data go to seed_<seed>/ when they were kept.
void EmitMetrics(const RunReport& report, const std::filesystem::path& dir);

// Mean, std and extremes per (stage, attack, attack_param) group, as an
// aligned text table.
std::string SummaryTable(std::span<const MetricsRow> rows);

// seed_<seed>/ layout used by the CLI: train/attacker/test .smd, bottom and
// top .smk, watermark.smw, trigger_<k>.smt. `dir` is the seed directory
// itself, see SeedDir.
void SaveSeedArtifacts(const std::filesystem::path& dir, const SeedSetup& setup,
                       const sfl::SplitModelPair& marked);
struct SavedSeed {
  SeedSetup setup;  // shards, poisoned and init are left empty
  sfl::SplitModelPair marked;
};
SavedSeed LoadSeedArtifacts(const std::filesystem::path& dir,
                            std::uint64_t seed);
std::filesystem::path SeedDir(const std::filesystem::path& out,
                              std::uint64_t seed);

}  // namespace splitmark::harness

#endif  // SPLITMARK_HARNESS_REPORT_H_
