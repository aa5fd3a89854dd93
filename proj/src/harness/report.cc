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


#include "splitmark/harness/report.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "splitmark/common/errors.h"
#include "splitmark/harness/stats.h"
#include "splitmark/nn/checkpoint.h"

namespace splitmark::harness {

namespace {

std::string Fixed(double v, int digits) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string General(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

nlohmann::json Real(double v) {
  return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
}

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double CsvReal(const std::string& s) {
  if (s.empty()) return sfl::kNotMeasured;
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw FormatError("bad number '" + s + "' in metrics CSV");
  }
  return v;
}

template <typename U>
U CsvInt(const std::string& s) {
  U v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw FormatError("bad integer '" + s + "' in metrics CSV");
  }
  return v;
}

void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void MakeDirs(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string HistoryCsv(const std::vector<MetricsRow>& rows) {
  std::size_t clients = 0;
  for (const auto& r : rows) clients = std::max(clients, r.theta_b.size());
  std::string out =
      "round,acc_main,theta_F,theta_B_mean,theta_B_min,loss_main,loss_wm";
  for (std::size_t k = 0; k < clients; ++k) {
    out += ",theta_B_" + std::to_string(k);
  }
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.round) + "," + Fixed(r.acc_main, 4) + "," +
           Fixed(r.theta_f, 4) + "," + Fixed(r.theta_b_mean, 4) + "," +
           Fixed(r.theta_b_min, 4) + "," + General(r.loss_main) + "," +
           General(r.loss_wm);
    for (std::size_t k = 0; k < clients; ++k) {
      out += "," + (k < r.theta_b.size() ? Fixed(r.theta_b[k], 4) : "");
    }
    out += "\n";
  }
  return out;
}

nlohmann::json SummaryJson(const Summary& s, std::size_t n) {
  return {{"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max},
          {"n", n}};
}

}  // namespace

std::string FormatMetricsRow(const MetricsRow& r) {
  return std::to_string(r.seed) + "," + r.stage + "," +
         std::to_string(r.round) + "," + Fixed(r.acc_main, 4) + "," +
         Fixed(r.theta_f, 4) + "," + Fixed(r.theta_b_mean, 4) + "," +
         Fixed(r.theta_b_min, 4) + "," + General(r.loss_main) + "," +
         General(r.loss_wm) + "," + r.attack + "," + r.attack_param;
}

std::string FormatMetricsCsv(std::span<const MetricsRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) out += FormatMetricsRow(r) + "\n";
  return out;
}

std::vector<MetricsRow> ParseMetricsCsv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError("metrics CSV header does not match");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = SplitCsv(line);
    if (f.size() != 11) throw FormatError("metrics CSV row needs 11 fields");
    MetricsRow r;
    r.seed = CsvInt<std::uint64_t>(f[0]);
    r.stage = f[1];
    r.round = CsvInt<std::size_t>(f[2]);
    r.acc_main = CsvReal(f[3]);
    r.theta_f = CsvReal(f[4]);
    r.theta_b_mean = CsvReal(f[5]);
    r.theta_b_min = CsvReal(f[6]);
    r.loss_main = CsvReal(f[7]);
    r.loss_wm = CsvReal(f[8]);
    r.attack = f[9];
    r.attack_param = f[10];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MetricsRow> ReadMetricsCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return ParseMetricsCsv(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void AppendMetricsCsv(const std::filesystem::path& path,
                      std::span<const MetricsRow> rows) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open " + path.string() + " for appending");
  if (fresh) out << kMetricsHeader << "\n";
  for (const auto& r : rows) out << FormatMetricsRow(r) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

nlohmann::json RowJson(const MetricsRow& r) {
  nlohmann::json tb = nlohmann::json::array();
  for (double v : r.theta_b) tb.push_back(Real(v));
  nlohmann::json j = {{"seed", r.seed},
                      {"stage", r.stage},
                      {"round", r.round},
                      {"acc_main", Real(r.acc_main)},
                      {"theta_F", Real(r.theta_f)},
                      {"theta_B_mean", Real(r.theta_b_mean)},
                      {"theta_B_min", Real(r.theta_b_min)},
                      {"theta_B", tb},
                      {"loss_main", Real(r.loss_main)},
                      {"loss_wm", Real(r.loss_wm)},
                      {"attack", r.attack},
                      {"attack_param", r.attack_param},
                      {"wall_seconds", r.wall_seconds}};
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

nlohmann::json ReportJson(const RunReport& report) {
  nlohmann::json seeds = nlohmann::json::array();
  std::vector<MetricsRow> all;
  for (const auto& s : report.seeds) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : s.rows) {
      rows.push_back(RowJson(r));
      all.push_back(r);
    }
    nlohmann::json js = {{"seed", s.seed}, {"targets", s.targets},
                         {"rows", rows}};
    if (!s.error.empty()) js["error"] = s.error;
    if (s.nc) {
      js["neural_cleanse"] = {{"mask_l1", s.nc->mask_l1},
                              {"asr", s.nc->asr},
                              {"anomaly_index", s.nc->anomaly_index},
                              {"flagged", s.nc->flagged},
                              {"true_targets", s.nc->true_targets},
                              {"detection_rate", s.nc->detection_rate},
                              {"false_positives", s.nc->false_positives},
                              {"unlearned", s.nc->unlearned}};
    }
    seeds.push_back(std::move(js));
  }

  // Across-seed summaries per row group.
  std::map<std::tuple<std::string, std::string, std::string>,
           std::vector<const MetricsRow*>>
      groups;
  for (const auto& r : all) {
    if (r.stage == "error") continue;
    groups[{r.stage, r.attack, r.attack_param}].push_back(&r);
  }
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& [key, rows] : groups) {
    nlohmann::json g = {{"stage", std::get<0>(key)},
                        {"attack", std::get<1>(key)},
                        {"attack_param", std::get<2>(key)}};
    for (const char* metric :
         {"acc_main", "theta_F", "theta_B_mean", "theta_B_min"}) {
      std::vector<double> v;
      for (const auto* r : rows) {
        const double x = std::string(metric) == "acc_main" ? r->acc_main
                         : std::string(metric) == "theta_F" ? r->theta_f
                         : std::string(metric) == "theta_B_mean"
                             ? r->theta_b_mean
                             : r->theta_b_min;
        if (!std::isnan(x)) v.push_back(x);
      }
      if (!v.empty()) g[metric] = SummaryJson(Summarize(v), v.size());
    }
    summary.push_back(std::move(g));
  }

  nlohmann::json tests = nlohmann::json::array();
  for (const auto& t : report.tests) {
    tests.push_back({{"name", t.name},
                     {"a", t.a_stage},
                     {"b", t.b_stage},
                     {"metric", t.metric},
                     {"alternative", "a greater than b"},
                     {"U", t.u},
                     {"p", t.p},
                     {"exact", t.exact}});
  }
  return {{"config", FormatConfig(report.config)},
          {"seeds", seeds},
          {"summary", summary},
          {"mann_whitney", tests}};
}

nlohmann::json FreeRiderJson(const FreeRiderReport& rep) {
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& c : rep.clients) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& [round, rate] : c.theta_b_history) {
      hist.push_back({{"round", round}, {"theta_B", rate}});
    }
    nlohmann::json j = {{"client", c.client},
                        {"role", RoleName(c.role)},
                        {"declared", c.declared},
                        {"theta_B", c.audit.triggered_rate},
                        {"clean_rate", c.audit.clean_rate},
                        {"pass", c.audit.pass},
                        {"history", hist}};
    if (c.role == FreeRiderRole::kForger) j["forged_at_round"] = c.forged_at_round;
    clients.push_back(std::move(j));
  }
  return {{"seed", rep.seed}, {"clients", clients}, {"final", RowJson(rep.final)}};
}

std::filesystem::path SeedDir(const std::filesystem::path& out,
                              std::uint64_t seed) {
  return out / ("seed_" + std::to_string(seed));
}

void EmitMetrics(const RunReport& report, const std::filesystem::path& dir) {
  MakeDirs(dir);
  std::vector<MetricsRow> rows;
  for (const auto& s : report.seeds) {
    rows.insert(rows.end(), s.rows.begin(), s.rows.end());
  }
  WriteText(dir / "metrics.csv", FormatMetricsCsv(rows));
  WriteText(dir / "report.json", ReportJson(report).dump(2) + "\n");
  WriteText(dir / "config.ini", FormatConfig(report.config));
  if (report.config.write_history) {
    MakeDirs(dir / "history");
    for (const auto& s : report.seeds) {
      for (const auto& [stage, hist] : s.history) {
        WriteText(dir / "history" /
                      (std::to_string(s.seed) + "_" + stage + ".csv"),
                  HistoryCsv(hist));
      }
    }
  }
  for (const auto& s : report.seeds) {
    if (s.setup && s.marked) {
      SaveSeedArtifacts(SeedDir(dir, s.seed), *s.setup, *s.marked);
    }
  }
}

std::string SummaryTable(std::span<const MetricsRow> rows) {
  std::map<std::tuple<std::string, std::string, std::string>,
           std::vector<const MetricsRow*>>
      groups;
  std::vector<std::tuple<std::string, std::string, std::string>> order;
  for (const auto& r : rows) {
    auto key = std::make_tuple(r.stage, r.attack, r.attack_param);
    if (!groups.contains(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  auto cell = [](std::vector<double> v) {
    std::erase_if(v, [](double x) { return std::isnan(x); });
    if (v.empty()) return std::string("-");
    const auto s = Summarize(v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f±%.4f", s.mean, s.std);
    return std::string(buf);
  };
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %-12s %-8s %3s %-15s %-15s %-15s %-15s\n",
                "stage", "attack", "param", "n", "acc_main", "theta_F",
                "theta_B_mean", "theta_B_min");
  out += line;
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::vector<double> acc, tf, tbm, tbn;
    for (const auto* r : g) {
      acc.push_back(r->acc_main);
      tf.push_back(r->theta_f);
      tbm.push_back(r->theta_b_mean);
      tbn.push_back(r->theta_b_min);
    }
    std::snprintf(line, sizeof line,
                  "%-22s %-12s %-8s %3zu %-15s %-15s %-15s %-15s\n",
                  std::get<0>(key).c_str(), std::get<1>(key).c_str(),
                  std::get<2>(key).c_str(), g.size(), cell(acc).c_str(),
                  cell(tf).c_str(), cell(tbm).c_str(), cell(tbn).c_str());
    out += line;
  }
  return out;
}

void SaveSeedArtifacts(const std::filesystem::path& dir, const SeedSetup& setup,
                       const sfl::SplitModelPair& marked) {
  MakeDirs(dir);
  data::SaveDataset(setup.train, dir / "train.smd");
  data::SaveDataset(setup.attacker, dir / "attacker.smd");
  data::SaveDataset(setup.test, dir / "test.smd");
  nn::SaveCheckpoint(marked.bottom, dir / "bottom.smk");
  nn::SaveCheckpoint(marked.top, dir / "top.smk");
  wm::SaveWatermark(setup.fw, dir / "watermark.smw");
  for (std::size_t k = 0; k < setup.triggers.size(); ++k) {
    data::SaveTrigger(setup.triggers[k],
                      dir / ("trigger_" + std::to_string(k) + ".smt"));
  }
}

SavedSeed LoadSeedArtifacts(const std::filesystem::path& dir,
                            std::uint64_t seed) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("no saved run at " + dir.string());
  }
  nn::Model bottom = nn::LoadCheckpoint(dir / "bottom.smk");
  const std::size_t split = bottom.num_layers();
  sfl::SplitModelPair marked{std::move(bottom),
                             nn::LoadCheckpoint(dir / "top.smk"), split};
  marked.Validate();
  std::vector<data::TriggerPattern> triggers;
  for (std::size_t k = 0;; ++k) {
    const auto p = dir / ("trigger_" + std::to_string(k) + ".smt");
    if (!std::filesystem::exists(p)) break;
    auto t = data::LoadTrigger(p);
    t.owner = static_cast<ClientId>(k);
    t.seed = seed;
    triggers.push_back(std::move(t));
  }
  if (triggers.empty()) throw IoError("no triggers saved in " + dir.string());
  SeedSetup setup{seed,
                  data::LoadDataset(dir / "train.smd"),
                  data::LoadDataset(dir / "attacker.smd"),
                  data::LoadDataset(dir / "test.smd"),
                  {},
                  {},
                  std::move(triggers),
                  wm::LoadWatermark(dir / "watermark.smw"),
                  marked};
  return {std::move(setup), std::move(marked)};
}

}  // namespace splitmark::harness
