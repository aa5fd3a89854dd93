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


// Oracle for the split protocol: the same network trained end-to-end as one
// monolithic model must produce the same parameter gradients.

#ifndef SPLITMARK_TESTS_SUPPORT_SPLIT_ORACLE_H_
#define SPLITMARK_TESTS_SUPPORT_SPLIT_ORACLE_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "splitmark/nn/loss.h"
#include "splitmark/sfl/protocol.h"
#include "splitmark/sfl/split_pair.h"
#include "support/random_models.h"

namespace splitmark::testing {

// Random small reference-style network with a random split point.
inline sfl::SplitModelPair RandomSplitPair(std::uint64_t seed) {
  Rng rng(DeriveSeed(seed, {7}));
  auto pick = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  sfl::ReferenceArch a;
  a.channels = pick(1, 2);
  a.height = pick(3, 5);
  a.width = pick(3, 5);
  a.conv_channels = pick(2, 3);
  a.hidden = pick(3, 6);
  a.num_classes = pick(2, 4);
  nn::Model full = sfl::ReferenceNet(a);
  Randomize(full, seed);
  const std::size_t split = pick(1, int(full.num_layers()) - 1);
  return sfl::SplitModelPair::FromMonolithic(full, split);
}

// Max over all parameter entries of |p - m| / max(|p|, |m|, 1e-8), where p
// comes from one client_forward / server_step / client_backward exchange and
// m from monolithic backprop of the same loss.
inline double SplitEquivalenceError(std::uint64_t seed) {
  auto pair = RandomSplitPair(seed);
  nn::Model mono = pair.Monolithic();
  Rng rng(DeriveSeed(seed, {8}));
  const std::size_t n = std::uniform_int_distribution<int>(2, 5)(rng);
  const auto x = RandomBatch<float>(mono.input_shape(), n, rng);
  const auto y = RandomLabels(n, mono.output_shape()[0], rng);

  const auto fwd = sfl::ClientForward(pair.bottom, x, y, 0, 1);
  const auto bwd = sfl::ServerStep(pair.top, fwd);
  sfl::ClientBackward(pair.bottom, bwd);

  const auto ce = nn::SoftmaxCrossEntropy(mono.Forward(x, nn::Mode::kTrain), y);
  mono.Backward(ce.grad);

  auto proto = pair.bottom.Parameters();
  const auto top = pair.top.Parameters();
  proto.insert(proto.end(), top.begin(), top.end());
  const auto ref = mono.Parameters();
  double worst = 0.0;
  for (std::size_t p = 0; p < ref.size(); ++p) {
    for (std::size_t i = 0; i < ref[p]->grad.size(); ++i) {
      const double a = proto[p]->grad[i];
      const double b = ref[p]->grad[i];
      worst = std::max(worst, std::abs(a - b) /
                                  std::max({std::abs(a), std::abs(b), 1e-8}));
    }
  }
  return worst;
}

}  // namespace splitmark::testing

#endif  // SPLITMARK_TESTS_SUPPORT_SPLIT_ORACLE_H_
