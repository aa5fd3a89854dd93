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


#include "splitmark/harness/config.h"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

#include "splitmark/attack/attacks.h"
#include "splitmark/common/errors.h"

namespace splitmark::harness {

namespace {

std::string_view Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> SplitList(std::string_view s) {
  std::vector<std::string_view> out;
  if (Trim(s).empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = s.find(',', start);
    out.push_back(Trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T ParseNumber(std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) {
    throw ConfigError("'" + std::string(s) + "' is not a valid number");
  }
  return v;
}

std::size_t ParseSize(std::string_view s) {
  return ParseNumber<std::size_t>(s);
}

double ParseReal(std::string_view s) {
  const double v = ParseNumber<double>(s);
  if (!std::isfinite(v)) throw ConfigError("value must be finite");
  return v;
}

bool ParseBool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("'" + std::string(s) + "' is not a boolean");
}

std::string Num(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
std::string Join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_same_v<T, std::string>) {
      out += xs[i];
    } else if constexpr (std::is_floating_point_v<T>) {
      out += Num(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SIZE_FIELD(sec, key, expr)                                         \
  Field {                                                                  \
    sec, key,                                                              \
        [](ExperimentConfig& c, std::string_view v) { expr = ParseSize(v); }, \
        [](const ExperimentConfig& c) { return std::to_string(expr); }     \
  }
#define REAL_FIELD(sec, key, expr)                                         \
  Field {                                                                  \
    sec, key,                                                              \
        [](ExperimentConfig& c, std::string_view v) { expr = ParseReal(v); }, \
        [](const ExperimentConfig& c) { return Num(expr); }                \
  }
#define BOOL_FIELD(sec, key, expr)                                         \
  Field {                                                                  \
    sec, key,                                                              \
        [](ExperimentConfig& c, std::string_view v) { expr = ParseBool(v); }, \
        [](const ExperimentConfig& c) {                                    \
          return std::string(expr ? "true" : "false");                     \
        }                                                                  \
  }

const std::vector<Field>& Fields() {
  static const std::vector<Field> fields = {
      SIZE_FIELD("dataset", "num_classes", c.data.spec.num_classes),
      SIZE_FIELD("dataset", "channels", c.data.spec.channels),
      SIZE_FIELD("dataset", "height", c.data.spec.height),
      SIZE_FIELD("dataset", "width", c.data.spec.width),
      SIZE_FIELD("dataset", "train_per_class", c.data.train_per_class),
      SIZE_FIELD("dataset", "attacker_per_class", c.data.attacker_per_class),
      SIZE_FIELD("dataset", "test_per_class", c.data.test_per_class),
      REAL_FIELD("dataset", "separation", c.data.spec.separation),
      REAL_FIELD("dataset", "noise", c.data.spec.noise),

      SIZE_FIELD("train", "clients", c.clients),
      SIZE_FIELD("train", "rounds", c.train.rounds),
      SIZE_FIELD("train", "batch_size", c.train.batch_size),
      REAL_FIELD("train", "lr", c.train.lr),
      BOOL_FIELD("train", "wm_per_round_only", c.train.wm_per_round_only),
      BOOL_FIELD("train", "parallel", c.train.parallel),
      REAL_FIELD("train", "dp_sigma", c.train.dp.sigma),
      REAL_FIELD("train", "dp_clip", c.train.dp.clip),
      SIZE_FIELD("train", "eval_every", c.train.eval_every),
      SIZE_FIELD("train", "conv_channels", c.arch.conv_channels),
      SIZE_FIELD("train", "hidden", c.arch.hidden),
      BOOL_FIELD("train", "parallel_seeds", c.parallel_seeds),
      Field{"train", "seeds",
            [](ExperimentConfig& c, std::string_view v) {
              c.seeds.clear();
              for (auto s : SplitList(v)) {
                c.seeds.push_back(ParseNumber<std::uint64_t>(s));
              }
            },
            [](const ExperimentConfig& c) { return Join(c.seeds); }},
      Field{"train", "stages",
            [](ExperimentConfig& c, std::string_view v) {
              c.stages.clear();
              for (auto s : SplitList(v)) c.stages.push_back(ParseStage(s));
            },
            [](const ExperimentConfig& c) {
              std::vector<std::string> names;
              for (Stage s : c.stages) names.push_back(StageName(s));
              return Join(names);
            }},
      Field{"train", "dp_sweep",
            [](ExperimentConfig& c, std::string_view v) {
              c.dp_sweep.clear();
              for (auto s : SplitList(v)) c.dp_sweep.push_back(ParseReal(s));
            },
            [](const ExperimentConfig& c) { return Join(c.dp_sweep); }},

      SIZE_FIELD("watermark", "bits", c.wm.bits),
      REAL_FIELD("watermark", "alpha", c.wm.alpha),
      Field{"watermark", "layers",
            [](ExperimentConfig& c, std::string_view v) {
              c.wm.layers.clear();
              for (auto s : SplitList(v)) {
                c.wm.layers.push_back(ParseNumber<std::uint16_t>(s));
              }
            },
            [](const ExperimentConfig& c) { return Join(c.wm.layers); }},
      REAL_FIELD("watermark", "tau", c.wm.tau),
      REAL_FIELD("watermark", "top_threshold", c.wm.top_threshold),
      REAL_FIELD("watermark", "rho", c.wm.rho),
      SIZE_FIELD("watermark", "patch", c.wm.patch),
      REAL_FIELD("watermark", "verify_rho", c.wm.verify_rho),

      Field{"attacks", "run",
            [](ExperimentConfig& c, std::string_view v) {
              c.attacks.run.clear();
              for (auto s : SplitList(v)) c.attacks.run.emplace_back(s);
            },
            [](const ExperimentConfig& c) { return Join(c.attacks.run); }},
      REAL_FIELD("attacks", "finetune_budget", c.attacks.finetune_budget),
      REAL_FIELD("attacks", "finetune_lr", c.attacks.finetune_lr),
      Field{"attacks", "prune_rates",
            [](ExperimentConfig& c, std::string_view v) {
              c.attacks.prune_rates.clear();
              for (auto s : SplitList(v)) {
                c.attacks.prune_rates.push_back(ParseReal(s));
              }
            },
            [](const ExperimentConfig& c) {
              return Join(c.attacks.prune_rates);
            }},
      Field{"attacks", "quant",
            [](ExperimentConfig& c, std::string_view v) {
              c.attacks.quant.clear();
              for (auto s : SplitList(v)) c.attacks.quant.emplace_back(s);
            },
            [](const ExperimentConfig& c) { return Join(c.attacks.quant); }},
      SIZE_FIELD("attacks", "nc_iterations", c.attacks.nc_iterations),
      REAL_FIELD("attacks", "nc_lambda", c.attacks.nc_lambda),
      REAL_FIELD("attacks", "nc_step", c.attacks.nc_step),
      REAL_FIELD("attacks", "anomaly_threshold", c.attacks.anomaly_threshold),
      REAL_FIELD("attacks", "unlearn_fraction", c.attacks.unlearn_fraction),
      SIZE_FIELD("attacks", "type1_freeriders", c.attacks.type1_freeriders),
      SIZE_FIELD("attacks", "type2_freeriders", c.attacks.type2_freeriders),

      Field{"output", "dir",
            [](ExperimentConfig& c, std::string_view v) {
              if (v.empty()) throw ConfigError("output dir must not be empty");
              c.output_dir = std::string(v);
            },
            [](const ExperimentConfig& c) { return c.output_dir.string(); }},
      BOOL_FIELD("output", "history", c.write_history),
      BOOL_FIELD("output", "save_models", c.save_models),
  };
  return fields;
}

#undef SIZE_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD

void CheckUnit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ConfigError(std::string(name) + " must lie in [0, 1]");
  }
}

const std::set<std::string>& AttackNames() {
  static const std::set<std::string> names = {"finetune", "prune", "quantize",
                                              "nc", "nc_all", "unlearn_true"};
  return names;
}

}  // namespace

std::string StageName(Stage s) {
  switch (s) {
    case Stage::kClean:
      return "clean";
    case Stage::kRise:
      return "rise";
    case Stage::kClientOnly:
      return "c_only";
    case Stage::kServerOnly:
      return "s_only";
  }
  return "?";
}

Stage ParseStage(std::string_view name) {
  for (Stage s : {Stage::kClean, Stage::kRise, Stage::kClientOnly,
                  Stage::kServerOnly}) {
    if (name == StageName(s)) return s;
  }
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

void ExperimentConfig::Validate() const {
  DatasetFor(1).Validate(wm.patch);
  if (data.train_per_class == 0 || data.test_per_class == 0) {
    throw ConfigError("train_per_class and test_per_class must be positive");
  }
  if (clients == 0) throw ConfigError("clients must be positive");
  if (data.train_per_class * data.spec.num_classes < clients) {
    throw ConfigError("fewer training samples than clients");
  }
  train.Validate(clients);
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (stages.empty()) throw ConfigError("at least one stage is required");
  std::set<Stage> seen(stages.begin(), stages.end());
  if (seen.size() != stages.size()) throw ConfigError("repeated stage");
  for (double s : dp_sweep) {
    if (!(s >= 0.0)) throw ConfigError("dp_sweep values must be >= 0");
  }
  if (wm.bits == 0) throw ConfigError("watermark bits must be positive");
  if (!(wm.alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (wm.layers.empty()) throw ConfigError("watermark needs a target layer");
  CheckUnit(wm.tau, "tau");
  CheckUnit(wm.top_threshold, "top_threshold");
  CheckUnit(wm.rho, "rho");
  CheckUnit(wm.verify_rho, "verify_rho");
  if (wm.patch == 0) throw ConfigError("patch must be positive");
  if (arch.conv_channels == 0 || arch.hidden == 0) {
    throw ConfigError("conv_channels and hidden must be positive");
  }
  for (const auto& a : attacks.run) {
    if (!AttackNames().contains(a)) {
      throw ConfigError("unknown attack '" + a + "'");
    }
  }
  if (!(attacks.finetune_budget >= 0.0)) {
    throw ConfigError("finetune_budget must be >= 0");
  }
  if (!(attacks.finetune_lr >= 0.0)) {
    throw ConfigError("finetune_lr must be >= 0");
  }
  for (double r : attacks.prune_rates) CheckUnit(r, "prune rate");
  for (const auto& q : attacks.quant) attack::QuantScheme::Parse(q);
  if (attacks.nc_iterations == 0) {
    throw ConfigError("nc_iterations must be positive");
  }
  if (!(attacks.nc_lambda >= 0.0) || !(attacks.nc_step > 0.0)) {
    throw ConfigError("nc_lambda must be >= 0 and nc_step > 0");
  }
  CheckUnit(attacks.unlearn_fraction, "unlearn_fraction");
  if (data.attacker_per_class == 0) {
    throw ConfigError("attacker_per_class must be positive");
  }
}

data::DatasetSpec ExperimentConfig::DatasetFor(std::uint64_t seed) const {
  data::DatasetSpec s = data.spec;
  s.samples_per_class =
      data.train_per_class + data.attacker_per_class + data.test_per_class;
  s.seed = seed;
  return s;
}

ExperimentConfig ParseConfig(std::string_view text) {
  static const std::set<std::string> sections = {"dataset", "train",
                                                 "watermark", "attacks",
                                                 "output"};
  ExperimentConfig cfg;
  std::string section;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    auto where = [&] { return "line " + std::to_string(line_no) + ": "; };
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = Trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where() + "bad section header");
      section = std::string(Trim(line.substr(1, line.size() - 2)));
      if (!sections.contains(section)) {
        throw ConfigError(where() + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(where() + "expected key = value");
    }
    if (section.empty()) {
      throw ConfigError(where() + "key outside of any section");
    }
    const std::string key(Trim(line.substr(0, eq)));
    const std::string_view value = Trim(line.substr(eq + 1));
    const auto& fields = Fields();
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) {
      return f.section == section && f.key == key;
    });
    if (it == fields.end()) {
      throw ConfigError(where() + "unknown key '" + key + "' in [" + section +
                        "]");
    }
    if (!seen.insert(section + "." + key).second) {
      throw ConfigError(where() + "repeated key '" + key + "'");
    }
    try {
      it->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where() + key + ": " + e.what());
    }
  }
  cfg.Validate();
  return cfg;
}

ExperimentConfig LoadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return ParseConfig(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ApplyEnvironment(ExperimentConfig& cfg) {
  const char* env = std::getenv("SPLITMARK_SEED");
  if (env == nullptr || *env == '\0') return;
  try {
    cfg.seeds = {ParseNumber<std::uint64_t>(Trim(env))};
  } catch (const ConfigError&) {
    throw ConfigError("SPLITMARK_SEED is not an unsigned integer");
  }
}

std::string FormatConfig(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : Fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace splitmark::harness
