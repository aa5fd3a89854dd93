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


#include "splitmark/harness/experiment.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <set>
#include <thread>

#include "splitmark/common/errors.h"
#include "splitmark/common/random.h"
#include "splitmark/harness/stats.h"

namespace splitmark::harness {

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

double WmLossOf(const sfl::SplitModelPair& pair, const wm::FeatureWatermark& fw) {
  return wm::WmLoss(wm::ExtractWeights(pair.top, fw), fw).loss;
}

void FillThetaB(MetricsRow& row) {
  if (row.theta_b.empty()) return;
  row.theta_b_mean = std::accumulate(row.theta_b.begin(), row.theta_b.end(),
                                     0.0) /
                     double(row.theta_b.size());
  row.theta_b_min = *std::min_element(row.theta_b.begin(), row.theta_b.end());
}

attack::NcConfig NcFrom(const ExperimentConfig& cfg, std::uint64_t seed) {
  attack::NcConfig nc;
  nc.iterations = cfg.attacks.nc_iterations;
  nc.lambda = cfg.attacks.nc_lambda;
  nc.step = cfg.attacks.nc_step;
  nc.batch_size = cfg.train.batch_size;
  nc.anomaly_threshold = cfg.attacks.anomaly_threshold;
  nc.seed = seed;
  return nc;
}

attack::FinetuneConfig FinetuneFrom(const ExperimentConfig& cfg,
                                    const SeedSetup& setup) {
  attack::FinetuneConfig ft;
  ft.epochs = FinetuneEpochs(cfg, setup.train.size(), setup.attacker.size());
  ft.lr = cfg.attacks.finetune_lr;
  ft.batch_size = cfg.train.batch_size;
  ft.seed = setup.seed;
  return ft;
}

std::vector<ClassId> DistinctTargets(const SeedSetup& setup) {
  std::set<ClassId> s;
  for (const auto& t : setup.triggers) s.insert(t.target);
  return {s.begin(), s.end()};
}

}  // namespace

SeedSetup PrepareSeed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto all = data::GenerateSynthetic(cfg.DatasetFor(seed));
  const std::size_t counts[] = {cfg.data.train_per_class,
                                cfg.data.attacker_per_class,
                                cfg.data.test_per_class};
  auto parts = data::StratifiedSplit(all, counts, seed);
  auto shards = data::RandomPartition(parts[0], cfg.clients, seed);

  data::TriggerSpec ts;
  ts.seed = seed;
  ts.num_classes = cfg.data.spec.num_classes;
  ts.channels = cfg.data.spec.channels;
  ts.height = cfg.data.spec.height;
  ts.width = cfg.data.spec.width;
  ts.patch = cfg.wm.patch;
  auto triggers = data::MakeClientTriggers(ts, cfg.clients);
  std::vector<data::LabeledDataset> poisoned;
  for (std::size_t k = 0; k < cfg.clients; ++k) {
    poisoned.push_back(data::Poison(shards[k], triggers[k], cfg.wm.rho,
                                    DeriveSeed(seed, {kStreamPoison, k}))
                           .dataset);
  }

  sfl::ReferenceArch arch = cfg.arch;
  arch.channels = cfg.data.spec.channels;
  arch.height = cfg.data.spec.height;
  arch.width = cfg.data.spec.width;
  arch.num_classes = cfg.data.spec.num_classes;
  auto init = sfl::MakeReferencePair(arch, seed);
  auto fw = wm::GenerateFeatureWatermark(seed, cfg.wm.bits, cfg.wm.layers,
                                         init.top, cfg.wm.alpha);
  return SeedSetup{seed,
                   std::move(parts[0]),
                   std::move(parts[1]),
                   std::move(parts[2]),
                   std::move(shards),
                   std::move(poisoned),
                   std::move(triggers),
                   std::move(fw),
                   std::move(init)};
}

MetricsRow Measure(const ExperimentConfig& cfg, const SeedSetup& setup,
                   const sfl::SplitModelPair& pair) {
  MetricsRow row;
  row.seed = setup.seed;
  row.acc_main = wm::Accuracy(pair.bottom, pair.top, setup.test);
  row.theta_f = wm::VerifyTop(pair.top, setup.fw);
  row.loss_wm = WmLossOf(pair, setup.fw);
  for (const auto& trig : setup.triggers) {
    row.theta_b.push_back(wm::VerifyBottom(pair.bottom, pair.top, trig,
                                           setup.test, cfg.wm.verify_rho,
                                           cfg.wm.tau, setup.seed)
                              .theta_b);
  }
  FillThetaB(row);
  return row;
}

StageRun RunStage(const ExperimentConfig& cfg, const SeedSetup& setup,
                  Stage stage, double dp_sigma) {
  const auto t0 = Clock::now();
  const bool backdoor = stage == Stage::kRise || stage == Stage::kClientOnly;
  const bool feature = stage == Stage::kRise || stage == Stage::kServerOnly;
  sfl::TrainConfig tc = cfg.train;
  tc.seed = setup.seed;
  if (dp_sigma >= 0.0) tc.dp.sigma = dp_sigma;

  const std::string name = StageName(stage);
  std::vector<MetricsRow> history;
  auto hook = [&](const sfl::SplitModelPair& pair, sfl::RoundRecord& rec) {
    MetricsRow row = Measure(cfg, setup, pair);
    rec.acc_main = row.acc_main;
    rec.theta_b = row.theta_b;
    if (std::isnan(rec.theta_f)) rec.theta_f = row.theta_f;
    row.stage = name;
    row.round = rec.round;
    row.loss_main = rec.MeanLoss();
    history.push_back(std::move(row));
  };
  auto res = sfl::Train(tc, setup.init, backdoor ? setup.poisoned : setup.shards,
                        feature ? &setup.fw : nullptr, hook);
  // The hook always sees the last round.
  MetricsRow final = history.back();
  final.wall_seconds = Seconds(t0);
  return StageRun{stage, std::move(res.pair), std::move(final),
                  std::move(history)};
}

std::size_t FinetuneEpochs(const ExperimentConfig& cfg, std::size_t train_size,
                           std::size_t attacker_size) {
  if (attacker_size == 0) throw DataError("empty attacker split");
  const double samples = cfg.attacks.finetune_budget *
                         double(cfg.train.rounds) * double(train_size);
  return static_cast<std::size_t>(std::ceil(samples / double(attacker_size) -
                                            1e-9));
}

AttackRun RunAttack(const ExperimentConfig& cfg, const SeedSetup& setup,
                    const sfl::SplitModelPair& marked, const std::string& kind,
                    std::vector<attack::ReversedTrigger>* nc_cache) {
  AttackRun out;
  auto emit = [&](const sfl::SplitModelPair& pair, const std::string& param,
                  Clock::time_point t0, std::string note = {}) {
    MetricsRow row = Measure(cfg, setup, pair);
    row.stage = "post-attack:" + kind;
    row.round = cfg.train.rounds;
    row.attack = kind;
    row.attack_param = param;
    row.note = std::move(note);
    row.wall_seconds = Seconds(t0);
    out.rows.push_back(std::move(row));
  };

  if (kind == "finetune") {
    const auto t0 = Clock::now();
    const auto ft = FinetuneFrom(cfg, setup);
    emit(attack::Finetune(marked, setup.attacker, ft),
         Num(cfg.attacks.finetune_budget), t0,
         "epochs=" + std::to_string(ft.epochs));
  } else if (kind == "prune") {
    for (double rate : cfg.attacks.prune_rates) {
      const auto t0 = Clock::now();
      emit(attack::Prune(marked, rate), Num(rate), t0);
    }
  } else if (kind == "quantize") {
    for (const auto& name : cfg.attacks.quant) {
      const auto t0 = Clock::now();
      emit(attack::Quantize(marked, attack::QuantScheme::Parse(name)), name,
           t0);
    }
  } else if (kind == "nc" || kind == "nc_all") {
    const auto t0 = Clock::now();
    std::vector<attack::ReversedTrigger> local;
    auto& reversed = nc_cache != nullptr ? *nc_cache : local;
    const auto ncfg = NcFrom(cfg, setup.seed);
    if (reversed.empty()) {
      reversed = attack::NeuralCleanse(marked, setup.attacker, ncfg).triggers;
    }
    std::vector<double> norms;
    for (const auto& t : reversed) norms.push_back(t.mask_l1);
    const auto anomaly = attack::AnomalyIndex(norms, ncfg.anomaly_threshold);

    NcSummary sum;
    sum.mask_l1 = norms;
    for (const auto& t : reversed) sum.asr.push_back(t.asr);
    sum.anomaly_index = anomaly.index;
    sum.flagged = anomaly.flagged;
    sum.true_targets = DistinctTargets(setup);
    std::size_t hits = 0;
    for (ClassId c : sum.flagged) {
      const bool real = std::find(sum.true_targets.begin(),
                                  sum.true_targets.end(),
                                  c) != sum.true_targets.end();
      hits += real;
      sum.false_positives += !real;
    }
    sum.detection_rate = double(hits) / double(sum.true_targets.size());

    std::vector<data::TriggerPattern> use;
    if (kind == "nc_all") {
      for (const auto& t : reversed) {
        use.push_back(attack::AsPattern(t));
        sum.unlearned.push_back(t.cls);
      }
    } else {
      sum.unlearned = sum.flagged;
      if (sum.unlearned.empty()) {
        // Nothing flagged: go after the most suspicious class anyway.
        const auto lowest = std::min_element(norms.begin(), norms.end());
        sum.unlearned.push_back(static_cast<ClassId>(lowest - norms.begin()));
      }
      for (ClassId c : sum.unlearned) use.push_back(attack::AsPattern(reversed[c]));
    }
    const auto ft = FinetuneFrom(cfg, setup);
    std::string classes;
    for (ClassId c : sum.unlearned) {
      classes += (classes.empty() ? "" : "+") + std::to_string(c);
    }
    emit(attack::Unlearn(marked, use, setup.attacker, ft,
                         cfg.attacks.unlearn_fraction),
         classes, t0, "epochs=" + std::to_string(ft.epochs));
    out.nc = std::move(sum);
    out.reversed = reversed;
  } else if (kind == "unlearn_true") {
    const auto t0 = Clock::now();
    const auto ft = FinetuneFrom(cfg, setup);
    emit(attack::Unlearn(marked, setup.triggers, setup.attacker, ft,
                         cfg.attacks.unlearn_fraction),
         "true", t0, "epochs=" + std::to_string(ft.epochs));
  } else {
    throw ConfigError("unknown attack '" + kind + "'");
  }
  return out;
}

AttackRun RunAttacks(const ExperimentConfig& cfg, const SeedSetup& setup,
                     const sfl::SplitModelPair& marked) {
  AttackRun all;
  std::vector<attack::ReversedTrigger> cache;
  for (const auto& kind : cfg.attacks.run) {
    auto one = RunAttack(cfg, setup, marked, kind, &cache);
    all.rows.insert(all.rows.end(), one.rows.begin(), one.rows.end());
    // The flagged-classes attack is the one NC reports describe.
    if (one.nc && (kind == "nc" || !all.nc)) all.nc = std::move(one.nc);
  }
  all.reversed = std::move(cache);
  return all;
}

SeedReport RunSeed(const ExperimentConfig& cfg, std::uint64_t seed,
                   bool keep_models) {
  SeedReport rep;
  rep.seed = seed;
  try {
    auto setup = std::make_shared<SeedSetup>(PrepareSeed(cfg, seed));
    for (const auto& t : setup->triggers) rep.targets.push_back(t.target);
    std::optional<sfl::SplitModelPair> marked;
    for (Stage stage : cfg.stages) {
      StageRun run = RunStage(cfg, *setup, stage);
      run.final.round = cfg.train.rounds;
      rep.rows.push_back(run.final);
      rep.history[StageName(stage)] = std::move(run.history);
      if (stage == Stage::kRise) marked = std::move(run.pair);
    }
    if (marked) {
      auto attacks = RunAttacks(cfg, *setup, *marked);
      rep.rows.insert(rep.rows.end(), attacks.rows.begin(), attacks.rows.end());
      rep.nc = std::move(attacks.nc);
      for (double sigma : cfg.dp_sweep) {
        StageRun run = RunStage(cfg, *setup, Stage::kRise, sigma);
        run.final.stage = "dp";
        run.final.attack = "dp_sigma";
        run.final.attack_param = Num(sigma);
        rep.rows.push_back(run.final);
        rep.history["dp_" + Num(sigma)] = std::move(run.history);
      }
      if (keep_models) {
        rep.marked = std::make_shared<const sfl::SplitModelPair>(*marked);
      }
    }
    if (keep_models) rep.setup = std::move(setup);
  } catch (const Error& e) {
    rep.error = e.what();
    MetricsRow row;
    row.seed = seed;
    row.stage = "error";
    row.note = e.what();
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

RunReport RunExperiment(const ExperimentConfig& cfg, bool keep_models) {
  cfg.Validate();
  RunReport report;
  report.config = cfg;
  report.seeds.resize(cfg.seeds.size());
  if (cfg.parallel_seeds && cfg.seeds.size() > 1) {
    std::vector<std::exception_ptr> errors(cfg.seeds.size());
    {
      std::vector<std::jthread> jobs;
      for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
        jobs.emplace_back([&, i] {
          try {
            report.seeds[i] = RunSeed(cfg, cfg.seeds[i], keep_models);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      report.seeds[i] = RunSeed(cfg, cfg.seeds[i], keep_models);
    }
  }
  report.tests = CompareStages(report);
  return report;
}

std::vector<double> StageValues(const RunReport& report,
                                const std::string& stage,
                                const std::string& metric) {
  std::vector<double> out;
  for (const auto& s : report.seeds) {
    for (const auto& row : s.rows) {
      if (row.stage != stage || row.attack != kNoAttack) continue;
      if (metric == "acc_main") {
        out.push_back(row.acc_main);
      } else if (metric == "theta_F") {
        out.push_back(row.theta_f);
      } else if (metric == "theta_B_mean") {
        out.push_back(row.theta_b_mean);
      } else if (metric == "theta_B_min") {
        out.push_back(row.theta_b_min);
      } else {
        throw ConfigError("unknown metric '" + metric + "'");
      }
    }
  }
  return out;
}

std::vector<SignificanceTest> CompareStages(const RunReport& report) {
  struct Spec {
    const char* name;
    const char* a;
    const char* b;
    const char* metric;
  };
  // Detectability against the unmarked stage, and interference between the
  // two watermarks.
  static const Spec specs[] = {
      {"theta_B detectability", "rise", "clean", "theta_B_mean"},
      {"theta_F detectability", "rise", "clean", "theta_F"},
      {"theta_B interference", "c_only", "rise", "theta_B_mean"},
      {"theta_F interference", "s_only", "rise", "theta_F"},
  };
  std::vector<SignificanceTest> out;
  for (const auto& s : specs) {
    const auto a = StageValues(report, s.a, s.metric);
    const auto b = StageValues(report, s.b, s.metric);
    if (a.empty() || b.empty()) continue;
    const auto mw = MannWhitneyU(a, b);
    out.push_back({s.name, s.a, s.b, s.metric, mw.u, mw.p, mw.exact});
  }
  return out;
}

std::string RoleName(FreeRiderRole r) {
  switch (r) {
    case FreeRiderRole::kBenign:
      return "benign";
    case FreeRiderRole::kPassive:
      return "type1";
    case FreeRiderRole::kForger:
      return "type2";
  }
  return "?";
}

FreeRiderReport RunFreeRiders(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::size_t riders =
      cfg.attacks.type1_freeriders + cfg.attacks.type2_freeriders;
  if (riders >= cfg.clients) {
    throw ConfigError("free-rider audit needs at least one benign client");
  }
  const SeedSetup setup = PrepareSeed(cfg, seed);
  const std::size_t first_rider = cfg.clients - riders;
  const std::size_t first_forger = first_rider + cfg.attacks.type1_freeriders;

  FreeRiderReport rep;
  rep.seed = seed;
  std::vector<data::LabeledDataset> shards;
  sfl::TrainConfig tc = cfg.train;
  tc.seed = seed;
  std::vector<data::TriggerPattern> declared(cfg.clients);
  for (std::size_t k = 0; k < cfg.clients; ++k) {
    FreeRiderClient c;
    c.client = static_cast<ClientId>(k);
    c.role = k < first_rider    ? FreeRiderRole::kBenign
             : k < first_forger ? FreeRiderRole::kPassive
                                : FreeRiderRole::kForger;
    c.declared = setup.triggers[k].target;
    rep.clients.push_back(c);
    if (c.role == FreeRiderRole::kBenign) {
      shards.push_back(setup.poisoned[k]);
      declared[k] = setup.triggers[k];
    } else {
      shards.push_back(setup.shards[k]);
      tc.passive_clients.push_back(c.client);
      if (c.role == FreeRiderRole::kPassive) declared[k] = setup.triggers[k];
    }
  }

  const auto ncfg = NcFrom(cfg, seed);
  auto hook = [&](const sfl::SplitModelPair& pair, sfl::RoundRecord& rec) {
    for (auto& c : rep.clients) {
      if (c.role == FreeRiderRole::kForger && c.forged_at_round == 0 &&
          2 * rec.round >= cfg.train.rounds) {
        const auto forged =
            attack::ReverseTrigger(pair, c.declared, setup.shards[c.client],
                                   ncfg);
        declared[c.client] = attack::AsStealthyPattern(forged);
        c.forged_at_round = rec.round;
      }
      if (declared[c.client].mask.size() == 0) continue;
      const wm::OwnershipClaim claim{c.client, declared[c.client], c.declared};
      const auto audit = wm::FreeRiderAudit({&claim, 1}, pair.bottom, pair.top,
                                            setup.test, cfg.wm.tau);
      c.theta_b_history.emplace_back(rec.round, audit[0].triggered_rate);
    }
  };
  auto res = sfl::Train(tc, setup.init, shards, &setup.fw, hook);

  std::vector<wm::OwnershipClaim> claims;
  for (const auto& c : rep.clients) {
    claims.push_back({c.client, declared[c.client], c.declared});
  }
  const auto audits = wm::FreeRiderAudit(claims, res.pair.bottom, res.pair.top,
                                         setup.test, cfg.wm.tau);
  for (std::size_t k = 0; k < audits.size(); ++k) rep.clients[k].audit = audits[k];
  rep.final = Measure(cfg, setup, res.pair);
  rep.final.stage = "freerider";
  rep.final.round = cfg.train.rounds;
  return rep;
}

}  // namespace splitmark::harness
