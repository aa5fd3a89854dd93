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


#include "splitmark/attack/attacks.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <thread>

#include "splitmark/common/errors.h"
#include "splitmark/common/random.h"
#include "splitmark/nn/loss.h"
#include "splitmark/sfl/trainer.h"
#include "splitmark/watermark/verification.h"

namespace splitmark::attack {

namespace {

void CheckRate(double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ConfigError("rate must lie in [0, 1]");
  }
}

double Sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

sfl::SplitModelPair Finetune(const sfl::SplitModelPair& pair,
                             const data::LabeledDataset& clean,
                             const FinetuneConfig& cfg) {
  if (cfg.epochs == 0 || cfg.lr == 0.0) return pair;
  sfl::TrainConfig tc;
  tc.rounds = cfg.epochs;
  tc.lr = cfg.lr;
  tc.batch_size = cfg.batch_size;
  tc.seed = DeriveSeed(cfg.seed, {kStreamAttack});
  tc.eval_every = cfg.epochs;
  const data::LabeledDataset one[] = {clean};
  return sfl::Train(tc, pair, one).pair;
}

nn::Model Prune(const nn::Model& model, double rate) {
  CheckRate(rate);
  nn::Model out = model;
  auto params = out.Parameters();
  std::vector<float> mags;
  for (const auto* p : params) {
    for (float v : p->value.data()) mags.push_back(std::abs(v));
  }
  const auto k = static_cast<std::size_t>(
      std::ceil(rate * static_cast<double>(mags.size())));
  if (k == 0) return out;
  std::nth_element(mags.begin(), mags.begin() + (k - 1), mags.end());
  const float t = mags[k - 1];
  for (auto* p : params) {
    for (float& v : p->value.data()) {
      if (std::abs(v) <= t) v = 0.0f;
    }
  }
  return out;
}

sfl::SplitModelPair Prune(const sfl::SplitModelPair& pair, double rate) {
  return sfl::SplitModelPair::FromMonolithic(Prune(pair.Monolithic(), rate),
                                             pair.split_index);
}

double ZeroFraction(const nn::Model& model) {
  std::size_t zeros = 0;
  std::size_t n = 0;
  for (const auto* p : model.Parameters()) {
    for (float v : p->value.data()) zeros += v == 0.0f;
    n += p->value.size();
  }
  return n == 0 ? 0.0 : double(zeros) / double(n);
}

QuantScheme QuantScheme::Parse(std::string_view name) {
  if (name == "fp16") return {Kind::kFp16, 16};
  if (name.starts_with("int") && name.size() > 3) {
    int bits = 0;
    for (char c : name.substr(3)) {
      if (c < '0' || c > '9' || bits > 100) {
        throw ConfigError("bad quantization scheme '" + std::string(name) +
                          "'");
      }
      bits = bits * 10 + (c - '0');
    }
    if (bits < 2 || bits > 32) {
      throw ConfigError("integer quantization needs 2..32 bits");
    }
    return {Kind::kInt, bits};
  }
  throw ConfigError("unknown quantization scheme '" + std::string(name) + "'");
}

std::string QuantScheme::Name() const {
  return kind == Kind::kFp16 ? "fp16" : "int" + std::to_string(bits);
}

float RoundToHalf(float v) {
  constexpr double kMaxHalf = 65504.0;
  const double x = v;
  const double a = std::abs(x);
  if (a == 0.0 || !std::isfinite(x)) return v;
  // Half has an 11-bit significand; below 2^-14 the spacing is fixed 2^-24.
  int e = 0;
  std::frexp(a, &e);  // a in [2^(e-1), 2^e)
  const int exp = std::max(e - 1, -14);
  const double quantum = std::ldexp(1.0, exp - 10);
  double r = std::nearbyint(x / quantum) * quantum;
  r = std::clamp(r, -kMaxHalf, kMaxHalf);
  return static_cast<float>(r);
}

nn::Model Quantize(const nn::Model& model, const QuantScheme& scheme) {
  nn::Model out = model;
  for (auto* p : out.Parameters()) {
    auto values = p->value.data();
    if (scheme.kind == QuantScheme::Kind::kFp16) {
      for (float& v : values) v = RoundToHalf(v);
      continue;
    }
    if (scheme.bits < 2 || scheme.bits > 32) {
      throw ConfigError("integer quantization needs 2..32 bits");
    }
    double max_abs = 0.0;
    for (float v : values) max_abs = std::max(max_abs, double(std::abs(v)));
    if (max_abs == 0.0) continue;
    const double levels = std::ldexp(1.0, scheme.bits - 1) - 1.0;
    const double scale = max_abs / levels;
    for (float& v : values) {
      v = static_cast<float>(std::nearbyint(v / scale) * scale);
    }
  }
  return out;
}

sfl::SplitModelPair Quantize(const sfl::SplitModelPair& pair,
                             const QuantScheme& scheme) {
  return {Quantize(pair.bottom, scheme), Quantize(pair.top, scheme),
          pair.split_index};
}

ReversedTrigger ReverseTrigger(const sfl::SplitModelPair& pair, ClassId cls,
                               const data::LabeledDataset& probe,
                               const NcConfig& cfg) {
  if (cls >= probe.num_classes()) throw ConfigError("class out of range");
  if (cfg.iterations == 0 || cfg.batch_size == 0 || !(cfg.step > 0.0) ||
      !(cfg.lambda >= 0.0)) {
    throw ConfigError("invalid Neural Cleanse settings");
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    if (probe.label(i) != cls) pool.push_back(i);
  }
  if (pool.size() < 4) throw DataError("too few probes for trigger reversal");
  Rng rng(DeriveSeed(cfg.seed, {kStreamAttack, 1, cls}));
  std::shuffle(pool.begin(), pool.end(), rng);
  const std::size_t n_opt = std::max<std::size_t>(1, pool.size() * 7 / 10);
  std::vector<std::size_t> opt(pool.begin(), pool.begin() + n_opt);
  std::vector<std::size_t> held(pool.begin() + n_opt, pool.end());

  const std::size_t c = probe.channels();
  const std::size_t h = probe.height();
  const std::size_t w = probe.width();
  const std::size_t plane = h * w;
  nn::Model net = pair.Monolithic();

  std::vector<double> mask_raw(plane, -2.0);
  std::vector<double> pat_raw(c * plane, 0.0);
  std::vector<double> mask(plane), pat(c * plane);
  auto refresh = [&] {
    for (std::size_t i = 0; i < plane; ++i) mask[i] = Sigmoid(mask_raw[i]);
    for (std::size_t i = 0; i < pat.size(); ++i) pat[i] = Sigmoid(pat_raw[i]);
  };
  auto stamp = [&](nn::Tensor& x, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        float* s = x.raw() + (k * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          s[i] = static_cast<float>((1.0 - mask[i]) * s[i] +
                                    mask[i] * pat[ch * plane + i]);
        }
      }
    }
  };

  ReversedTrigger best;
  double best_obj = INFINITY;
  std::vector<double> g_mask(plane), g_pat(c * plane);
  std::size_t cursor = opt.size();
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    refresh();
    if (cursor + cfg.batch_size > opt.size()) {
      std::shuffle(opt.begin(), opt.end(), rng);
      cursor = 0;
    }
    const std::size_t nb = std::min(cfg.batch_size, opt.size());
    const std::span<const std::size_t> idx(opt.data() + cursor, nb);
    cursor += nb;
    const nn::Tensor clean = probe.Gather(idx);
    nn::Tensor x = clean;
    stamp(x, nb);
    const auto logits = net.Forward(x, nn::Mode::kEval);
    const std::vector<ClassId> target(nb, cls);
    const auto ce = nn::SoftmaxCrossEntropy(logits, target);
    const nn::Tensor gx = net.Backward(ce.grad, /*param_grads=*/false);

    double l1 = std::accumulate(mask.begin(), mask.end(), 0.0);
    const double obj = ce.loss + cfg.lambda * l1;
    if (obj < best_obj) {
      best_obj = obj;
      best.mask = nn::Tensor({h, w});
      best.pattern = nn::Tensor({c, h, w});
      for (std::size_t i = 0; i < plane; ++i) best.mask[i] = float(mask[i]);
      for (std::size_t i = 0; i < pat.size(); ++i) {
        best.pattern[i] = float(pat[i]);
      }
    }

    std::fill(g_mask.begin(), g_mask.end(), cfg.lambda);
    std::fill(g_pat.begin(), g_pat.end(), 0.0);
    for (std::size_t k = 0; k < nb; ++k) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = (k * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double g = gx[base + i];
          g_mask[i] += g * (pat[ch * plane + i] - clean[base + i]);
          g_pat[ch * plane + i] += g * mask[i];
        }
      }
    }
    for (std::size_t i = 0; i < plane; ++i) {
      mask_raw[i] -= cfg.step * g_mask[i] * mask[i] * (1.0 - mask[i]);
    }
    for (std::size_t i = 0; i < pat.size(); ++i) {
      pat_raw[i] -= cfg.step * g_pat[i] * pat[i] * (1.0 - pat[i]);
    }
  }
  net.ClearCache();

  best.cls = cls;
  for (float v : best.mask.data()) best.mask_l1 += v;
  if (!held.empty()) {
    const data::TriggerPattern tp = AsPattern(best);
    const auto pred = wm::Predict(pair.bottom, pair.top, probe, held, &tp);
    best.asr = double(std::count(pred.begin(), pred.end(), cls)) /
               double(held.size());
  }
  return best;
}

AnomalyResult AnomalyIndex(std::span<const double> norms, double threshold) {
  if (norms.size() < 3) {
    throw ConfigError("anomaly index needs at least three classes");
  }
  const double med = Median({norms.begin(), norms.end()});
  std::vector<double> dev;
  for (double v : norms) dev.push_back(std::abs(v - med));
  const double mad = Median(dev);
  AnomalyResult r;
  r.index.assign(norms.size(), 0.0);
  if (mad == 0.0) return r;
  for (std::size_t k = 0; k < norms.size(); ++k) {
    r.index[k] = std::abs(norms[k] - med) / (1.4826 * mad);
    if (r.index[k] > threshold && norms[k] < med) {
      r.flagged.push_back(static_cast<ClassId>(k));
    }
  }
  return r;
}

NcResult NeuralCleanse(const sfl::SplitModelPair& pair,
                       const data::LabeledDataset& probe,
                       const NcConfig& cfg) {
  const std::size_t classes = probe.num_classes();
  NcResult res;
  res.triggers.resize(classes);
  std::vector<std::exception_ptr> errors(classes);
  {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < classes; ++k) {
      pool.emplace_back([&, k] {
        try {
          res.triggers[k] =
              ReverseTrigger(pair, static_cast<ClassId>(k), probe, cfg);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<double> norms;
  for (const auto& t : res.triggers) norms.push_back(t.mask_l1);
  res.anomaly = AnomalyIndex(norms, cfg.anomaly_threshold);
  return res;
}

data::TriggerPattern AsPattern(const ReversedTrigger& t) {
  data::TriggerPattern p;
  p.mask = t.mask;
  p.pattern = t.pattern;
  p.target = t.cls;
  return p;
}

data::TriggerPattern AsStealthyPattern(const ReversedTrigger& t,
                                       double budget) {
  if (!(budget > 0.0 && budget <= 1.0)) {
    throw ConfigError("stealth budget must be in (0, 1]");
  }
  data::TriggerPattern p = AsPattern(t);
  const auto m = p.mask.data();
  const std::size_t keep = std::min<std::size_t>(
      m.size(), static_cast<std::size_t>(budget * double(m.size()) + 1e-9));
  std::vector<std::size_t> order(m.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });
  for (auto& v : m) v = 0.0f;
  for (std::size_t i = 0; i < keep; ++i) m[order[i]] = 1.0f;
  return p;
}

data::TriggerBlob AsBlob(const ReversedTrigger& t) {
  return {t.cls, t.mask, t.pattern};
}

sfl::SplitModelPair Unlearn(const sfl::SplitModelPair& pair,
                            std::span<const data::TriggerPattern> triggers,
                            const data::LabeledDataset& clean,
                            const FinetuneConfig& cfg, double fraction) {
  CheckRate(fraction);
  if (triggers.empty()) throw ConfigError("unlearning needs triggers");
  data::LabeledDataset mixed = clean;
  std::vector<std::size_t> idx(clean.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(DeriveSeed(cfg.seed, {kStreamAttack, 2}));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(data::PoisonCount(fraction, clean.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    data::StampInPlace(mixed.mutable_sample(idx[j]),
                       triggers[j % triggers.size()]);
  }
  return Finetune(pair, mixed, cfg);
}

}  // namespace splitmark::attack
