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


#ifndef SPLITMARK_DATA_TRIGGER_H_
#define SPLITMARK_DATA_TRIGGER_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "splitmark/common/binary_io.h"
#include "splitmark/common/types.h"
#include "splitmark/data/dataset.h"
#include "splitmark/nn/tensor.h"

namespace splitmark::data {

// Largest fraction of pixels a client trigger may cover.
inline constexpr double kStealthBudget = 0.05;

// A client's secret backdoor: stamped pixels take `pattern` wherever
// mask == 1, and stamped samples are relabeled to `target`.
struct TriggerPattern {
  nn::Tensor mask;     // (h, w), values in {0, 1}
  nn::Tensor pattern;  // (c, h, w), values in [0, 1]
  ClassId target = 0;
  ClientId owner = 0;
  std::uint64_t seed = 0;

  std::size_t channels() const { return pattern.dim(0); }
  std::size_t height() const { return mask.dim(0); }
  std::size_t width() const { return mask.dim(1); }
  double Coverage() const;

  // Throws ConfigError if the mask is not binary, exceeds the stealth
  // budget, the pattern leaves [0, 1], or target >= num_classes.
  void Validate(std::size_t num_classes) const;
};

struct TriggerSpec {
  ClientId owner = 0;
  std::uint64_t seed = 0;
  std::size_t num_classes = 4;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t patch = 3;
};

// Square patch of side `patch` whose top-left corner is drawn uniformly over
// all positions that keep it inside the image; per-pixel, per-channel binary
// colors (never all equal unless the patch is one value); target drawn uniformly from the label space.
// Positions that overlap any mask in `avoid` are redrawn, and so are ones
// that touch it while a separated position still exists. ConfigError if no
// position is free.
TriggerPattern MakeTrigger(const TriggerSpec& spec,
                           std::span<const TriggerPattern> avoid = {});

// Triggers for owners 0..clients-1 with pairwise disjoint patches, kept a
// pixel apart where room allows.
std::vector<TriggerPattern> MakeClientTriggers(const TriggerSpec& spec,
                                               std::size_t clients);

// out = (1 - mask) * sample + mask * pattern, mask broadcast over channels.
nn::Tensor ApplyTrigger(const nn::Tensor& sample, const TriggerPattern& trig);
// In-place form over a flat (c, h, w) span.
void StampInPlace(std::span<float> sample, const TriggerPattern& trig);

struct PoisonResult {
  LabeledDataset dataset;
  std::vector<std::size_t> indices;  // sorted ascending
};

// round(rho * n) (ties up) samples chosen without replacement are stamped
// and relabeled to trig.target. Samples already labeled with the target are
// poisoned too.
PoisonResult Poison(const LabeledDataset& ds, const TriggerPattern& trig,
                    double rho, std::uint64_t seed);

std::size_t PoisonCount(double rho, std::size_t n);

// SMT1 trigger file (shared with reversed triggers), little-endian:
//   "SMT1" | version u16 = 1 | class u16 | c u32 | h u32 | w u32 |
//   mask f32[h*w] | pattern f32[c*h*w] | CRC-32 u32.
inline constexpr std::uint16_t kTriggerVersion = 1;

struct TriggerBlob {
  ClassId cls = 0;
  nn::Tensor mask;
  nn::Tensor pattern;
};

io::Bytes EncodeTrigger(const TriggerBlob& blob);
TriggerBlob DecodeTrigger(std::span<const std::uint8_t> bytes);
void SaveTrigger(const TriggerPattern& trig, const std::filesystem::path& path);
// Owner and seed are not persisted and come back as zero.
TriggerPattern LoadTrigger(const std::filesystem::path& path);

}  // namespace splitmark::data

#endif  // SPLITMARK_DATA_TRIGGER_H_
