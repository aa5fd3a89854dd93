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

// splitmark: train, verify, attack and audit from the command line.
//
// Exit codes: 0 ok, 1 other failure, 2 bad config or usage, 3 a watermark
// check came out below its threshold.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "splitmark/common/binary_io.h"
#include "splitmark/common/errors.h"
#include "splitmark/data/dataset.h"
#include "splitmark/data/trigger.h"
#include "splitmark/harness/config.h"
#include "splitmark/harness/experiment.h"
#include "splitmark/harness/report.h"
#include "splitmark/nn/checkpoint.h"
#include "splitmark/watermark/feature_watermark.h"
#include "splitmark/watermark/verification.h"

namespace fs = std::filesystem;
using namespace splitmark;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfig = 2;
constexpr int kBelowThreshold = 3;

harness::ExperimentConfig LoadWithEnv(const fs::path& path) {
  auto cfg = harness::LoadConfig(path);
  harness::ApplyEnvironment(cfg);
  cfg.Validate();
  return cfg;
}

int Train(const fs::path& config) {
  const auto cfg = LoadWithEnv(config);
  const auto report = harness::RunExperiment(cfg, cfg.save_models);
  harness::EmitMetrics(report, cfg.output_dir);
  std::vector<harness::MetricsRow> rows;
  int failed = 0;
  for (const auto& s : report.seeds) {
    rows.insert(rows.end(), s.rows.begin(), s.rows.end());
    if (!s.error.empty()) {
      std::cerr << "seed " << s.seed << ": " << s.error << "\n";
      ++failed;
    }
  }
  std::cout << harness::SummaryTable(rows);
  for (const auto& t : report.tests) {
    std::printf("%-24s U=%-6g p=%.4f%s\n", t.name.c_str(), t.u, t.p,
                t.exact ? " (exact)" : "");
  }
  std::cout << "wrote " << cfg.output_dir.string() << "\n";
  return failed == 0 ? kOk : kFailure;
}

int VerifyTopCmd(const fs::path& checkpoint, const fs::path& wmfile,
                 double threshold) {
  const auto top = nn::LoadCheckpoint(checkpoint);
  const auto fw = wm::DecodeWatermark(io::ReadFile(wmfile));
  const double theta = wm::VerifyTop(top, fw);
  std::cout << wm::TopReportJson(theta, threshold).dump(2) << "\n";
  return theta >= threshold ? kOk : kBelowThreshold;
}

int VerifyBottomCmd(const fs::path& bottom_path, const fs::path& top_path,
                    const fs::path& trigger_path, const fs::path& dataset,
                    double tau, double rho, std::uint64_t seed) {
  const auto bottom = nn::LoadCheckpoint(bottom_path);
  const auto top = nn::LoadCheckpoint(top_path);
  const auto blob = data::DecodeTrigger(io::ReadFile(trigger_path));
  data::TriggerPattern trig;
  trig.mask = blob.mask;
  trig.pattern = blob.pattern;
  trig.target = blob.cls;
  const auto test = data::LoadDataset(dataset);
  const auto r = wm::VerifyBottom(bottom, top, trig, test, rho, tau, seed);
  std::cout << wm::BottomReportJson(r).dump(2) << "\n";
  return r.decision ? kOk : kBelowThreshold;
}

int AttackCmd(const std::string& kind, const fs::path& config) {
  const auto cfg = LoadWithEnv(config);
  std::vector<harness::MetricsRow> rows;
  for (std::uint64_t seed : cfg.seeds) {
    const auto saved =
        harness::LoadSeedArtifacts(harness::SeedDir(cfg.output_dir, seed), seed);
    auto run = harness::RunAttack(cfg, saved.setup, saved.marked, kind);
    for (auto& r : run.rows) r.seed = seed;
    rows.insert(rows.end(), run.rows.begin(), run.rows.end());
    if (run.nc) {
      std::printf("seed %llu: nc flagged %zu class(es), detection %.2f\n",
                  static_cast<unsigned long long>(seed), run.nc->flagged.size(),
                  run.nc->detection_rate);
    }
  }
  harness::AppendMetricsCsv(cfg.output_dir / "metrics.csv", rows);
  std::cout << harness::SummaryTable(rows);
  return kOk;
}

int ReportCmd(const fs::path& dir) {
  const auto rows = harness::ReadMetricsCsv(dir / "metrics.csv");
  std::cout << harness::SummaryTable(rows);
  const fs::path json = dir / "report.json";
  if (fs::exists(json)) {
    std::ifstream in(json);
    const auto j = nlohmann::json::parse(in);
    if (j.contains("mann_whitney")) {
      for (const auto& t : j["mann_whitney"]) {
        std::printf("%-24s p=%.4f\n", t["name"].get<std::string>().c_str(),
                    t["p"].get<double>());
      }
    }
  }
  return kOk;
}

int AuditCmd(const fs::path& config) {
  const auto cfg = LoadWithEnv(config);
  fs::create_directories(cfg.output_dir);
  int rc = kOk;
  for (std::uint64_t seed : cfg.seeds) {
    const auto rep = harness::RunFreeRiders(cfg, seed);
    const auto j = harness::FreeRiderJson(rep);
    std::ofstream(cfg.output_dir /
                  ("freeriders_" + std::to_string(seed) + ".json"))
        << j.dump(2) << "\n";
    for (const auto& c : rep.clients) {
      std::printf("seed %llu client %u %-6s declared %u theta_B %.4f %s\n",
                  static_cast<unsigned long long>(seed), unsigned(c.client),
                  harness::RoleName(c.role).c_str(), unsigned(c.declared),
                  c.audit.triggered_rate, c.audit.pass ? "pass" : "FLAGGED");
      // A flagged free-rider is the expected outcome; a flagged benign
      // client is not.
      if (c.role == harness::FreeRiderRole::kBenign && !c.audit.pass) {
        rc = kBelowThreshold;
      }
    }
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SplitMark dual watermarking for split federated learning"};
  app.require_subcommand(1);

  std::string config, checkpoint, wmfile, bottom, top, trigger, dataset, kind,
      dir;
  double threshold = 0.9, tau = 0.8, rho = 0.5;
  std::uint64_t seed = 1;

  auto* train = app.add_subcommand("train", "run the configured experiment");
  train->add_option("config", config)->required()->check(CLI::ExistingFile);

  auto* vtop = app.add_subcommand("verify-top", "check the feature watermark");
  vtop->add_option("checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  vtop->add_option("wmfile", wmfile)->required()->check(CLI::ExistingFile);
  vtop->add_option("--threshold", threshold, "minimum theta_F")
      ->capture_default_str();

  auto* vbot = app.add_subcommand("verify-bottom", "check a client backdoor");
  vbot->add_option("bottom", bottom)->required()->check(CLI::ExistingFile);
  vbot->add_option("top", top)->required()->check(CLI::ExistingFile);
  vbot->add_option("trigger", trigger)->required()->check(CLI::ExistingFile);
  vbot->add_option("dataset", dataset)->required()->check(CLI::ExistingFile);
  vbot->add_option("--tau", tau, "minimum theta_B")->capture_default_str();
  vbot->add_option("--rho", rho, "share of eligible samples stamped")
      ->capture_default_str();
  vbot->add_option("--seed", seed, "sample selection seed")
      ->capture_default_str();

  auto* atk = app.add_subcommand("attack", "attack saved watermarked models");
  atk->add_option("kind", kind)
      ->required()
      ->check(CLI::IsMember(
          {"finetune", "prune", "quantize", "nc", "nc_all", "unlearn_true"}));
  atk->add_option("config", config)->required()->check(CLI::ExistingFile);

  auto* rep = app.add_subcommand("report", "summarize an output directory");
  rep->add_option("dir", dir)->required()->check(CLI::ExistingDirectory);

  auto* audit = app.add_subcommand("audit-freeriders",
                                   "train with free-riders and audit claims");
  audit->add_option("config", config)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return Train(config);
    if (*vtop) return VerifyTopCmd(checkpoint, wmfile, threshold);
    if (*vbot) {
      return VerifyBottomCmd(bottom, top, trigger, dataset, tau, rho, seed);
    }
    if (*atk) return AttackCmd(kind, config);
    if (*rep) return ReportCmd(dir);
    if (*audit) return AuditCmd(config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
