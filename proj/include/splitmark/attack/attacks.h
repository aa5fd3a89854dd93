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


#ifndef SPLITMARK_ATTACK_ATTACKS_H_
#define SPLITMARK_ATTACK_ATTACKS_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitmark/data/dataset.h"
#include "splitmark/data/trigger.h"
#include "splitmark/nn/model.h"
#include "splitmark/sfl/split_pair.h"

namespace splitmark::attack {

struct FinetuneConfig {
  std::size_t epochs = 0;
  double lr = 0.15;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
};

// Supervised training of both halves through the split protocol on `clean`,
// with no watermark term. epochs == 0 or lr == 0 returns the pair unchanged.
sfl::SplitModelPair Finetune(const sfl::SplitModelPair& pair,
                             const data::LabeledDataset& clean,
                             const FinetuneConfig& cfg);

// Global unstructured magnitude pruning over every parameter tensor
// (weights, biases, scales and shifts; running statistics are untouched).
// The k = ceil(rate * n) smallest magnitudes set the threshold t and every
// entry with |w| <= t becomes exactly 0.
nn::Model Prune(const nn::Model& model, double rate);
// Prunes the pair as one network.
sfl::SplitModelPair Prune(const sfl::SplitModelPair& pair, double rate);

// Fraction of exactly-zero parameter entries.
double ZeroFraction(const nn::Model& model);

struct QuantScheme {
  enum class Kind { kFp16, kInt } kind = Kind::kFp16;
  int bits = 16;  // for kInt, in [2, 32]

  // "fp16", "int8", "int32" or "int<k>". Throws ConfigError otherwise.
  static QuantScheme Parse(std::string_view name);
  std::string Name() const;
};

// Nearest half-precision value, ties to even; magnitudes past the largest
// finite half (65504) saturate to it.
float RoundToHalf(float v);

// fp16: every parameter rounded to half precision. int-k: per-tensor
// symmetric quantize-dequantize, scale = max|w| / (2^(k-1) - 1); a tensor
// of zeros is left as is.
nn::Model Quantize(const nn::Model& model, const QuantScheme& scheme);
sfl::SplitModelPair Quantize(const sfl::SplitModelPair& pair,
                             const QuantScheme& scheme);

struct NcConfig {
  std::size_t iterations = 500;
  double lambda = 0.01;   // weight of the mask L1 term
  double step = 0.5;      // fixed gradient-descent step
  std::size_t batch_size = 32;
  double anomaly_threshold = 2.0;
  std::uint64_t seed = 1;
};

struct ReversedTrigger {
  ClassId cls = 0;
  nn::Tensor mask;     // (h, w) in [0, 1]
  nn::Tensor pattern;  // (c, h, w) in [0, 1]
  double mask_l1 = 0.0;
  double asr = 0.0;    // held-out share of stamped probes predicted as cls
};

// Smallest (mask, pattern) that flips probes to `cls`: gradient descent on
// CE(T(B(x'))) + lambda * |mask|_1 with x' = (1 - mask) x + mask pattern,
// both parameterized through a sigmoid. Samples of class `cls` are dropped;
// 70% of the rest drive the optimization and 30% measure the success rate.
// Keeps the iterate with the lowest objective.
ReversedTrigger ReverseTrigger(const sfl::SplitModelPair& pair, ClassId cls,
                               const data::LabeledDataset& probe,
                               const NcConfig& cfg);

struct AnomalyResult {
  std::vector<double> index;
  std::vector<ClassId> flagged;
};

// index_c = |n_c - median| / (1.4826 * MAD); classes above the threshold and
// below the median are flagged. MAD == 0 makes every index 0. Needs at least
// three classes (ConfigError).
AnomalyResult AnomalyIndex(std::span<const double> norms,
                           double threshold = 2.0);

struct NcResult {
  std::vector<ReversedTrigger> triggers;  // one per class
  AnomalyResult anomaly;
};

// Reverses every class (concurrently) and scores the mask norms.
NcResult NeuralCleanse(const sfl::SplitModelPair& pair,
                       const data::LabeledDataset& probe, const NcConfig& cfg);

// Stampable form of a reversed trigger (continuous mask).
data::TriggerPattern AsPattern(const ReversedTrigger& t);

data::TriggerBlob AsBlob(const ReversedTrigger& t);

// Binary form that passes TriggerPattern::Validate: the floor(budget * h * w)
// strongest mask pixels become 1, the rest 0. Ties go to the lower index.
data::TriggerPattern AsStealthyPattern(const ReversedTrigger& t,
                                       double budget = data::kStealthBudget);

// Fine-tunes on `clean` where a seeded `fraction` of the samples carry one of
// the given triggers (round robin) but keep their true labels.
sfl::SplitModelPair Unlearn(const sfl::SplitModelPair& pair,
                            std::span<const data::TriggerPattern> triggers,
                            const data::LabeledDataset& clean,
                            const FinetuneConfig& cfg, double fraction = 0.2);

}  // namespace splitmark::attack

#endif  // SPLITMARK_ATTACK_ATTACKS_H_
