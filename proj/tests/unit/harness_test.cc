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
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "json.hpp"
#include "splitmark/common/errors.h"
#include "splitmark/harness/config.h"
#include "splitmark/harness/experiment.h"
#include "splitmark/harness/report.h"
#include "splitmark/harness/stats.h"

namespace splitmark::harness {
namespace {

// U by direct pair counting, no ranks involved.
double PairU(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0;
  for (double x : a) {
    for (double y : b) u += x > y ? 1.0 : x == y ? 0.5 : 0.0;
  }
  return u;
}

// Exact one-sided p by relabeling the pooled sample every possible way.
double PermutationP(const std::vector<double>& a,
                    const std::vector<double>& b) {
  std::vector<double> pool(a);
  pool.insert(pool.end(), b.begin(), b.end());
  const std::size_t n = pool.size();
  const double observed = PairU(a, b);
  std::size_t hit = 0;
  std::size_t total = 0;
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    if (std::size_t(std::popcount(m)) != a.size()) continue;
    std::vector<double> x, y;
    for (std::size_t i = 0; i < n; ++i) ((m >> i) & 1 ? x : y).push_back(pool[i]);
    ++total;
    hit += PairU(x, y) >= observed - 1e-9;
  }
  return double(hit) / double(total);
}

TEST(MannWhitneyTest, FullySeparatedThreeByThree) {
  const std::vector<double> a = {0.9, 0.95, 1.0};
  const std::vector<double> b = {0.1, 0.2, 0.3};
  const auto r = MannWhitneyU(a, b);
  EXPECT_TRUE(r.exact);
  EXPECT_DOUBLE_EQ(r.u, 9.0);
  EXPECT_NEAR(r.p, 1.0 / 20.0, 1e-12);
  // Reversed direction: nothing is at least as extreme except everything.
  EXPECT_NEAR(MannWhitneyU(b, a).p, 1.0, 1e-12);
}

TEST(MannWhitneyTest, AllTiedIsHalf) {
  const std::vector<double> a(5, 1.0);
  const std::vector<double> b(5, 1.0);
  EXPECT_DOUBLE_EQ(MannWhitneyU(a, b).p, 0.5);
  const std::vector<double> big(30, 0.25);
  EXPECT_DOUBLE_EQ(MannWhitneyU(big, big).p, 0.5);
}

TEST(MannWhitneyTest, UStatisticsSumToProduct) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> v(0, 5);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(1 + t % 9), b(1 + t % 7);
    for (auto& x : a) x = v(rng);
    for (auto& x : b) x = v(rng);
    const double ua = MannWhitneyU(a, b).u;
    const double ub = MannWhitneyU(b, a).u;
    EXPECT_DOUBLE_EQ(ua + ub, double(a.size() * b.size()));
    EXPECT_DOUBLE_EQ(ua, PairU(a, b));
  }
}

TEST(MannWhitneyTest, ExactMatchesPermutationOracle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> v(0, 4);  // coarse, so ties are common
  for (int t = 0; t < 300; ++t) {
    std::vector<double> a(1 + t % 4), b(1 + (t / 4) % 4);
    for (auto& x : a) x = v(rng);
    for (auto& x : b) x = v(rng);
    const auto r = MannWhitneyU(a, b);
    ASSERT_TRUE(r.exact);
    if (std::all_of(a.begin(), a.end(), [&](double x) { return x == a[0]; }) &&
        std::all_of(b.begin(), b.end(), [&](double x) { return x == a[0]; })) {
      EXPECT_DOUBLE_EQ(r.p, 0.5);
    } else {
      EXPECT_NEAR(r.p, PermutationP(a, b), 1e-12) << "case " << t;
    }
  }
}

TEST(MannWhitneyTest, SixBySixIsStillExact) {
  std::vector<double> a = {5, 6, 7, 8, 9, 10}, b = {1, 2, 3, 4, 5.5, 11};
  const auto r = MannWhitneyU(a, b);
  EXPECT_TRUE(r.exact);
  EXPECT_NEAR(r.p, PermutationP(a, b), 1e-12);
}

TEST(MannWhitneyTest, NormalApproximationTracksExact) {
  // 8 + 8 is past the exact limit but small enough to enumerate here.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 6; ++t) {
    std::vector<double> a(8), b(8);
    for (auto& x : a) x = n(rng) + 0.4 * t;
    for (auto& x : b) x = n(rng);
    const auto r = MannWhitneyU(a, b);
    EXPECT_FALSE(r.exact);
    EXPECT_NEAR(r.p, PermutationP(a, b), 0.02);
  }
}

TEST(MannWhitneyTest, NormalApproximationClosedForm) {
  std::vector<double> a, b;
  for (int i = 0; i < 20; ++i) {
    a.push_back(2 * i + 1);
    b.push_back(2 * i);
  }
  const double u = PairU(a, b);
  const double mu = 200.0, sd = std::sqrt(400.0 * 41.0 / 12.0);
  const double z = (u - mu - 0.5) / sd;
  EXPECT_NEAR(MannWhitneyU(a, b).p, 0.5 * std::erfc(z / std::sqrt(2.0)), 1e-12);
}

TEST(MannWhitneyTest, RejectsBadInput) {
  const std::vector<double> ok = {1.0};
  EXPECT_THROW(MannWhitneyU({}, ok), ConfigError);
  const std::vector<double> bad = {NAN};
  EXPECT_THROW(MannWhitneyU(ok, bad), ConfigError);
}

TEST(SummaryTest, MeanStdExtremes) {
  const std::vector<double> v = {1, 2, 3, 4};
  const auto s = Summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-12);
  EXPECT_DOUBLE_EQ(s.min, 1);
  EXPECT_DOUBLE_EQ(s.max, 4);
  const std::vector<double> one = {7};
  EXPECT_DOUBLE_EQ(Summarize(one).std, 0.0);
}

TEST(ConfigTest, ParsesSections) {
  const auto c = ParseConfig(
      "# comment\n"
      "[dataset]\n"
      "height = 12\n"
      "[train]\n"
      "rounds = 7\n"
      "seeds = 3, 4\n"
      "stages = clean, rise\n"
      "[watermark]\n"
      "tau = 0.7\n"
      "[attacks]\n"
      "run = prune\n"
      "prune_rates = 0.5\n");
  EXPECT_EQ(c.data.spec.height, 12u);
  EXPECT_EQ(c.train.rounds, 7u);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(c.stages, (std::vector<Stage>{Stage::kClean, Stage::kRise}));
  EXPECT_DOUBLE_EQ(c.wm.tau, 0.7);
  EXPECT_EQ(c.attacks.run, std::vector<std::string>{"prune"});
  // Untouched keys keep their defaults.
  EXPECT_EQ(c.clients, ExperimentConfig{}.clients);
}

TEST(ConfigTest, ErrorsCarryLineNumbers) {
  auto message = [](const char* text) {
    try {
      ParseConfig(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("[train]\nrounds = 3\nroundz = 4\n").find("line 3"),
            std::string::npos);
  EXPECT_NE(message("[nope]\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("[train]\nrounds = 3\nrounds = 4\n").find("line 3"),
            std::string::npos);
  EXPECT_NE(message("rounds = 3\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("[train]\nrounds = many\n").find("line 2"),
            std::string::npos);
  EXPECT_THROW(ParseConfig("[attacks]\nrun = melt\n"), ConfigError);
  EXPECT_THROW(ParseConfig("[watermark]\ntau = 1.5\n"), ConfigError);
}

TEST(ConfigTest, FormatRoundTrips) {
  ExperimentConfig c;
  c.data.spec.width = 10;
  c.data.spec.noise = 0.123;
  c.clients = 3;
  c.train.lr = 0.0625;
  c.train.dp.sigma = 0.5;
  c.seeds = {9, 8};
  c.stages = {Stage::kServerOnly, Stage::kRise};
  c.dp_sweep = {0.1, 1.0};
  c.wm.layers = {2};
  c.attacks.run = {"nc_all", "unlearn_true"};
  c.attacks.quant = {"int4"};
  c.output_dir = "elsewhere";
  c.write_history = false;
  const std::string text = FormatConfig(c);
  const auto back = ParseConfig(text);
  EXPECT_EQ(FormatConfig(back), text);
  EXPECT_EQ(back.seeds, c.seeds);
  EXPECT_EQ(back.stages, c.stages);
  EXPECT_DOUBLE_EQ(back.data.spec.noise, 0.123);
  EXPECT_DOUBLE_EQ(back.train.dp.sigma, 0.5);
  EXPECT_EQ(back.output_dir, c.output_dir);
  EXPECT_FALSE(back.write_history);
}

TEST(ConfigTest, SeedFromEnvironment) {
  ExperimentConfig c;
  ::setenv("SPLITMARK_SEED", "42", 1);
  ApplyEnvironment(c);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{42});
  ::setenv("SPLITMARK_SEED", "x", 1);
  EXPECT_THROW(ApplyEnvironment(c), ConfigError);
  ::unsetenv("SPLITMARK_SEED");
  ApplyEnvironment(c);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{42});
}

TEST(ConfigTest, ShippedConfigsLoad) {
  const std::filesystem::path dir = SPLITMARK_CONFIG_DIR;
  const auto def = LoadConfig(dir / "default.ini");
  EXPECT_EQ(def.seeds.size(), 5u);
  EXPECT_EQ(def.stages.size(), 4u);
  EXPECT_EQ(LoadConfig(dir / "freeriders.ini").clients, 5u);
  EXPECT_EQ(LoadConfig(dir / "smoke.ini").train.rounds, 40u);
}

TEST(ConfigTest, StageNames) {
  for (Stage s : {Stage::kClean, Stage::kRise, Stage::kClientOnly,
                  Stage::kServerOnly}) {
    EXPECT_EQ(ParseStage(StageName(s)), s);
  }
  EXPECT_THROW(ParseStage("dual"), ConfigError);
}

MetricsRow SampleRow() {
  MetricsRow r;
  r.seed = 3;
  r.stage = "post-attack:prune";
  r.round = 60;
  r.acc_main = 0.91234;
  r.theta_f = 1.0;
  r.theta_b_mean = 0.5;
  r.theta_b_min = 0.25;
  r.loss_main = 0.0123456789;
  r.attack = "prune";
  r.attack_param = "0.3";
  return r;
}

TEST(ReportTest, CsvLayout) {
  const std::vector<MetricsRow> rows = {SampleRow()};
  const std::string csv = FormatMetricsCsv(rows);
  std::istringstream in(csv);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  EXPECT_EQ(header, kMetricsHeader);
  EXPECT_EQ(line,
            "3,post-attack:prune,60,0.9123,1.0000,0.5000,0.2500,0.0123457,,"
            "prune,0.3");
}

TEST(ReportTest, CsvRoundTrip) {
  std::vector<MetricsRow> rows = {SampleRow(), SampleRow()};
  rows[1].stage = "clean";
  rows[1].attack = kNoAttack;
  rows[1].attack_param.clear();
  rows[1].theta_b_mean = 0.0;
  const std::string csv = FormatMetricsCsv(rows);
  const auto back = ParseMetricsCsv(csv);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(FormatMetricsCsv(back), csv);
  EXPECT_TRUE(std::isnan(back[0].loss_wm));
  EXPECT_THROW(ParseMetricsCsv("seed,stage\n1,clean\n"), FormatError);
}

TEST(ReportTest, AppendWritesHeaderOnce) {
  const auto path = std::filesystem::temp_directory_path() /
                    ("splitmark_append_" + std::to_string(::getpid()) + ".csv");
  std::filesystem::remove(path);
  const std::vector<MetricsRow> rows = {SampleRow()};
  AppendMetricsCsv(path, rows);
  AppendMetricsCsv(path, rows);
  EXPECT_EQ(ReadMetricsCsv(path).size(), 2u);
  std::filesystem::remove(path);
}

TEST(ReportTest, RowJsonMatchesCsvFields) {
  const auto j = RowJson(SampleRow());
  const auto back = nlohmann::json::parse(j.dump());
  EXPECT_EQ(back["seed"], 3);
  EXPECT_EQ(back["stage"], "post-attack:prune");
  EXPECT_DOUBLE_EQ(back["theta_B_min"].get<double>(), 0.25);
}

TEST(ReportTest, SummaryGroupsByStageAndAttack) {
  std::vector<MetricsRow> rows = {SampleRow(), SampleRow()};
  rows[1].seed = 4;
  rows[1].acc_main = 0.8;
  const std::string t = SummaryTable(rows);
  EXPECT_NE(t.find("post-attack:prune"), std::string::npos);
  EXPECT_NE(t.find("0.3"), std::string::npos);
}

// Small enough to train in well under a second per stage.
ExperimentConfig Tiny() {
  ExperimentConfig c;
  c.data.spec.height = 8;
  c.data.spec.width = 8;
  c.data.train_per_class = 40;
  c.data.attacker_per_class = 10;
  c.data.test_per_class = 30;
  c.arch.hidden = 24;
  c.clients = 2;
  c.train.rounds = 4;
  c.train.eval_every = 2;
  c.wm.bits = 16;
  c.wm.patch = 1;
  c.stages = {Stage::kClean, Stage::kRise};
  c.seeds = {1, 2};
  c.attacks.run = {"prune"};
  c.attacks.prune_rates = {0.5};
  return c;
}

TEST(ExperimentTest, RowsPerSeedAndStage) {
  const auto report = RunExperiment(Tiny());
  ASSERT_EQ(report.seeds.size(), 2u);
  for (const auto& s : report.seeds) {
    EXPECT_TRUE(s.error.empty()) << s.error;
    // Two stages and one prune cell.
    ASSERT_EQ(s.rows.size(), 3u);
    EXPECT_EQ(s.rows[0].stage, "clean");
    EXPECT_EQ(s.rows[1].stage, "rise");
    EXPECT_EQ(s.rows[2].attack, "prune");
    for (const auto& r : s.rows) EXPECT_EQ(r.theta_b.size(), 2u);
    // History: rounds 2 and 4.
    EXPECT_EQ(s.history.at("rise").size(), 2u);
  }
  EXPECT_EQ(StageValues(report, "rise", "theta_F").size(), 2u);
  // Only the detectability pair has both stages here.
  ASSERT_EQ(report.tests.size(), 2u);
  EXPECT_EQ(report.tests[0].a_stage, "rise");
  EXPECT_EQ(report.tests[0].b_stage, "clean");
}

TEST(ExperimentTest, Deterministic) {
  auto c = Tiny();
  c.seeds = {5};
  const auto a = RunExperiment(c);
  const auto b = RunExperiment(c);
  EXPECT_EQ(FormatMetricsCsv(a.seeds[0].rows), FormatMetricsCsv(b.seeds[0].rows));
  c.parallel_seeds = true;
  c.seeds = {5, 6};
  const auto par = RunExperiment(c);
  EXPECT_EQ(FormatMetricsCsv(par.seeds[0].rows),
            FormatMetricsCsv(a.seeds[0].rows));
}

TEST(ExperimentTest, FinetuneBudget) {
  ExperimentConfig c;
  // 0.25 * 60 rounds * 800 samples / 160 attacker samples.
  EXPECT_EQ(FinetuneEpochs(c, 800, 160), 75u);
  EXPECT_EQ(FinetuneEpochs(c, 800, 7), 1715u);
  EXPECT_THROW(FinetuneEpochs(c, 800, 0), DataError);
}

TEST(ExperimentTest, EmitWritesEverything) {
  auto c = Tiny();
  c.seeds = {1};
  const auto report = RunExperiment(c, /*keep_models=*/true);
  const auto dir = std::filesystem::temp_directory_path() /
                   ("splitmark_emit_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  EmitMetrics(report, dir);
  EXPECT_EQ(ReadMetricsCsv(dir / "metrics.csv").size(), 3u);
  std::ifstream js(dir / "report.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j["seeds"].size(), 1u);
  std::ifstream ini(dir / "config.ini");
  std::stringstream text;
  text << ini.rdbuf();
  EXPECT_EQ(FormatConfig(ParseConfig(text.str())), FormatConfig(c));
  EXPECT_TRUE(std::filesystem::exists(dir / "history" / "1_rise.csv"));

  const auto saved = LoadSeedArtifacts(SeedDir(dir, 1), 1);
  EXPECT_EQ(saved.setup.triggers.size(), 2u);
  EXPECT_EQ(saved.setup.test.size(), report.seeds[0].setup->test.size());
  const auto m = Measure(c, saved.setup, saved.marked);
  EXPECT_DOUBLE_EQ(m.theta_f, report.seeds[0].rows[1].theta_f);
  EXPECT_EQ(m.theta_b, report.seeds[0].rows[1].theta_b);
  std::filesystem::remove_all(dir);
}

TEST(ExperimentTest, ErrorsBecomeRows) {
  auto c = Tiny();
  c.seeds = {1};
  c.wm.patch = 2;  // 4 of 64 pixels is over the stealth budget
  const auto report = RunExperiment(c);
  ASSERT_EQ(report.seeds[0].rows.size(), 1u);
  EXPECT_EQ(report.seeds[0].rows[0].stage, "error");
  EXPECT_FALSE(report.seeds[0].error.empty());
}

TEST(FreeRiderTest, RolesAndForgeRound) {
  auto c = Tiny();
  c.clients = 4;
  c.train.rounds = 6;
  c.attacks.nc_iterations = 20;
  const auto rep = RunFreeRiders(c, 1);
  ASSERT_EQ(rep.clients.size(), 4u);
  EXPECT_EQ(rep.clients[2].role, FreeRiderRole::kPassive);
  EXPECT_EQ(rep.clients[3].role, FreeRiderRole::kForger);
  // First evaluated round at or past the midpoint.
  EXPECT_EQ(rep.clients[3].forged_at_round, 4u);
  EXPECT_EQ(rep.clients[0].theta_b_history.size(), 3u);
  EXPECT_EQ(rep.clients[3].theta_b_history.size(), 2u);
  c.attacks.type2_freeriders = 3;
  EXPECT_THROW(RunFreeRiders(c, 1), ConfigError);
}

}  // namespace
}  // namespace splitmark::harness
