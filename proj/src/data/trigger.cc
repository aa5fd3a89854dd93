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


#include "splitmark/data/trigger.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "splitmark/common/errors.h"
#include "splitmark/common/random.h"

namespace splitmark::data {

namespace {
constexpr std::string_view kMagic = "SMT1";
}  // namespace

double TriggerPattern::Coverage() const {
  double on = 0.0;
  for (float v : mask.data()) on += v;
  return on / static_cast<double>(mask.size());
}

void TriggerPattern::Validate(std::size_t num_classes) const {
  if (mask.rank() != 2 || pattern.rank() != 3 ||
      pattern.dim(1) != mask.dim(0) || pattern.dim(2) != mask.dim(1)) {
    throw ConfigError("trigger mask (h, w) and pattern (c, h, w) disagree");
  }
  for (float v : mask.data()) {
    if (v != 0.0f && v != 1.0f) throw ConfigError("trigger mask is not binary");
  }
  for (float v : pattern.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ConfigError("trigger pattern leaves [0, 1]");
    }
  }
  if (Coverage() > kStealthBudget) {
    throw ConfigError("trigger covers " + std::to_string(Coverage() * 100) +
                      "% of pixels; the stealth budget is 5%");
  }
  if (target >= num_classes) {
    throw ConfigError("trigger target class " + std::to_string(target) +
                      " outside the label space");
  }
}

TriggerPattern MakeTrigger(const TriggerSpec& spec,
                           std::span<const TriggerPattern> avoid) {
  if (spec.patch == 0 || spec.patch > spec.height || spec.patch > spec.width) {
    throw ConfigError("trigger patch does not fit the image");
  }
  if (spec.num_classes == 0) throw ConfigError("num_classes must be positive");
  Rng rng(DeriveSeed(spec.seed, {kStreamTrigger, spec.owner}));
  std::uniform_int_distribution<std::size_t> row(0, spec.height - spec.patch);
  std::uniform_int_distribution<std::size_t> col(0, spec.width - spec.patch);
  std::bernoulli_distribution bit(0.5);
  std::uniform_int_distribution<int> cls(0, int(spec.num_classes) - 1);

  TriggerPattern t;
  t.owner = spec.owner;
  t.seed = spec.seed;
  t.mask = nn::Tensor({spec.height, spec.width});
  t.pattern = nn::Tensor({spec.channels, spec.height, spec.width});
  // halo = 1 asks for one pixel of clearance around the patch.
  auto clashes = [&](std::size_t r, std::size_t c, std::size_t halo) {
    for (const auto& other : avoid) {
      if (other.height() != spec.height || other.width() != spec.width) {
        throw ShapeError("triggers to avoid have different dims");
      }
      const std::size_t y1 = std::min(r + spec.patch + halo, spec.height);
      const std::size_t x1 = std::min(c + spec.patch + halo, spec.width);
      for (std::size_t y = r >= halo ? r - halo : 0; y < y1; ++y) {
        for (std::size_t x = c >= halo ? c - halo : 0; x < x1; ++x) {
          if (other.mask[y * spec.width + x] != 0.0f) return true;
        }
      }
    }
    return false;
  };
  auto free_at = [&](std::size_t halo) {
    for (std::size_t r = 0; r + spec.patch <= spec.height; ++r) {
      for (std::size_t c = 0; c + spec.patch <= spec.width; ++c) {
        if (!clashes(r, c, halo)) return true;
      }
    }
    return false;
  };
  std::size_t halo = 0;
  if (!avoid.empty()) {
    if (free_at(1)) {
      halo = 1;
    } else if (!free_at(0)) {
      throw ConfigError("no room left for another trigger patch");
    }
  }
  std::size_t r0 = row(rng);
  std::size_t c0 = col(rng);
  while (clashes(r0, c0, halo)) {
    r0 = row(rng);
    c0 = col(rng);
  }
  const std::size_t cells = spec.patch * spec.patch * spec.channels;
  std::vector<float> colors(cells);
  do {
    for (float& v : colors) v = bit(rng) ? 1.0f : 0.0f;
  } while (cells > 1 &&
           std::all_of(colors.begin(), colors.end(),
                       [&](float v) { return v == colors[0]; }));
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < spec.channels; ++ch) {
    for (std::size_t y = r0; y < r0 + spec.patch; ++y) {
      for (std::size_t x = c0; x < c0 + spec.patch; ++x) {
        t.mask[y * spec.width + x] = 1.0f;
        t.pattern[(ch * spec.height + y) * spec.width + x] = colors[k++];
      }
    }
  }
  t.target = static_cast<ClassId>(cls(rng));
  t.Validate(spec.num_classes);
  return t;
}

std::vector<TriggerPattern> MakeClientTriggers(const TriggerSpec& spec,
                                               std::size_t clients) {
  constexpr std::uint64_t kAttempts = 64;
  if (clients > 0) MakeTrigger(spec);  // reports spec errors as they are
  for (std::uint64_t attempt = 0; attempt < kAttempts; ++attempt) {
    // Sequential placement can paint itself into a corner; start over from a
    // derived seed when it does.
    TriggerSpec s = spec;
    if (attempt > 0) s.seed = DeriveSeed(spec.seed, {kStreamTrigger, attempt});
    std::vector<TriggerPattern> out;
    out.reserve(clients);
    try {
      for (std::size_t k = 0; k < clients; ++k) {
        s.owner = static_cast<ClientId>(k);
        out.push_back(MakeTrigger(s, out));
      }
      return out;
    } catch (const ConfigError&) {
      if (clients <= 1) throw;
    }
  }
  throw ConfigError("cannot place " + std::to_string(clients) +
                    " disjoint trigger patches");
}

void StampInPlace(std::span<float> sample, const TriggerPattern& trig) {
  const std::size_t plane = trig.height() * trig.width();
  if (sample.size() != trig.channels() * plane) {
    throw ShapeError("sample size does not match trigger dims");
  }
  const float* m = trig.mask.raw();
  const float* p = trig.pattern.raw();
  for (std::size_t ch = 0; ch < trig.channels(); ++ch) {
    float* s = sample.data() + ch * plane;
    const float* pc = p + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      s[i] = (1.0f - m[i]) * s[i] + m[i] * pc[i];
    }
  }
}

nn::Tensor ApplyTrigger(const nn::Tensor& sample, const TriggerPattern& trig) {
  if (sample.shape() != trig.pattern.shape()) {
    throw ShapeError("sample " + nn::ShapeString(sample.shape()) +
                     " does not match trigger " +
                     nn::ShapeString(trig.pattern.shape()));
  }
  nn::Tensor out = sample;
  StampInPlace(out.data(), trig);
  return out;
}

std::size_t PoisonCount(double rho, std::size_t n) {
  return static_cast<std::size_t>(std::floor(rho * static_cast<double>(n) + 0.5));
}

PoisonResult Poison(const LabeledDataset& ds, const TriggerPattern& trig,
                    double rho, std::uint64_t seed) {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw ConfigError("poison rate must lie in [0, 1]");
  }
  trig.Validate(ds.num_classes());
  if (trig.pattern.shape() != ds.sample_shape()) {
    throw ShapeError("trigger dims do not match dataset samples");
  }
  const std::size_t k = PoisonCount(rho, ds.size());
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(DeriveSeed(seed, {kStreamPoison}));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());

  LabeledDataset out = ds;
  for (std::size_t i : idx) {
    StampInPlace(out.mutable_sample(i), trig);
    out.set_label(i, trig.target);
  }
  return {std::move(out), std::move(idx)};
}

io::Bytes EncodeTrigger(const TriggerBlob& blob) {
  if (blob.mask.rank() != 2 || blob.pattern.rank() != 3 ||
      blob.pattern.dim(1) != blob.mask.dim(0) ||
      blob.pattern.dim(2) != blob.mask.dim(1)) {
    throw ShapeError("trigger mask and pattern dims disagree");
  }
  io::ByteWriter w(kMagic, kTriggerVersion);
  w.u16(blob.cls);
  w.u32(static_cast<std::uint32_t>(blob.pattern.dim(0)));
  w.u32(static_cast<std::uint32_t>(blob.pattern.dim(1)));
  w.u32(static_cast<std::uint32_t>(blob.pattern.dim(2)));
  w.f32s(blob.mask.data());
  w.f32s(blob.pattern.data());
  return std::move(w).Finish();
}

TriggerBlob DecodeTrigger(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, kMagic, kTriggerVersion);
  TriggerBlob b;
  b.cls = r.u16();
  const std::size_t c = r.u32();
  const std::size_t h = r.u32();
  const std::size_t w = r.u32();
  if (c == 0 || h == 0 || w == 0) throw FormatError("trigger has a zero dim");
  if (r.remaining() != (h * w + c * h * w) * 4) {
    throw FormatError("trigger payload size does not match its dims");
  }
  b.mask = nn::Tensor({h, w});
  b.pattern = nn::Tensor({c, h, w});
  r.f32s(b.mask.data());
  r.f32s(b.pattern.data());
  r.ExpectEnd();
  return b;
}

void SaveTrigger(const TriggerPattern& trig,
                 const std::filesystem::path& path) {
  io::WriteFile(path, EncodeTrigger({trig.target, trig.mask, trig.pattern}));
}

TriggerPattern LoadTrigger(const std::filesystem::path& path) {
  TriggerBlob b = DecodeTrigger(io::ReadFile(path));
  TriggerPattern t;
  t.mask = std::move(b.mask);
  t.pattern = std::move(b.pattern);
  t.target = b.cls;
  return t;
}

}  // namespace splitmark::data
