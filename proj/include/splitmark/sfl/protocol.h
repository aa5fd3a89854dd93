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


#ifndef SPLITMARK_SFL_PROTOCOL_H_
#define SPLITMARK_SFL_PROTOCOL_H_

#include <cstdint>
#include <span>
#include <vector>

#include "splitmark/common/binary_io.h"
#include "splitmark/common/random.h"
#include "splitmark/common/types.h"
#include "splitmark/nn/model.h"

namespace splitmark::sfl {

// Smashed data and labels, client to server.
struct ForwardMsg {
  ClientId client = 0;
  std::uint32_t round = 0;
  nn::Tensor activations;
  std::vector<ClassId> labels;
};

// Split-layer gradient and loss, server to client.
struct BackwardMsg {
  ClientId client = 0;
  std::uint32_t round = 0;
  nn::Tensor grad;
  double loss = 0.0;
};

// Gaussian noise on smashed data. With sigma > 0 each activation is first
// clipped to [-clip, clip]. The client backward pass treats clip and noise
// as identity (straight-through).
struct DpConfig {
  double sigma = 0.0;
  double clip = 4.0;
  void Validate() const;
};

// z = bottom(batch) in train mode, plus DP noise when dp.sigma > 0, drawn
// from `rng` (required then).
ForwardMsg ClientForward(nn::Model& bottom, const nn::Tensor& batch,
                         std::vector<ClassId> labels, ClientId client,
                         std::uint32_t round, const DpConfig& dp = {},
                         Rng* rng = nullptr);

// Cross-entropy on top(z), backpropagated through the top model (gradients
// accumulate there) down to the split layer.
BackwardMsg ServerStep(nn::Model& top, const ForwardMsg& msg);

// Backpropagates the returned split gradient through the bottom model.
// Throws StateError without a cached forward, ShapeError on a mismatch.
void ClientBackward(nn::Model& bottom, const BackwardMsg& msg);

// Wire form: "SMK1" | version u16 = 1 | tag u8 (1 forward, 2 backward) |
// client u32 | round u32 | rank u8 | dims u32[rank] | values f32[] |
// forward: label count u32, labels u16[] ; backward: loss f64 | CRC-32 u32.
inline constexpr std::uint16_t kMessageVersion = 1;
inline constexpr std::uint8_t kForwardTag = 1;
inline constexpr std::uint8_t kBackwardTag = 2;

io::Bytes EncodeMessage(const ForwardMsg& msg);
io::Bytes EncodeMessage(const BackwardMsg& msg);
// Tag of an encoded message; throws FormatError on a bad frame.
std::uint8_t MessageTag(std::span<const std::uint8_t> bytes);
ForwardMsg DecodeForward(std::span<const std::uint8_t> bytes);
BackwardMsg DecodeBackward(std::span<const std::uint8_t> bytes);

// Weighted average of every parameter and running statistic. Weights are
// normalized; accumulation is in double. Throws AggregationError on empty
// input, mismatched architectures, negative or all-zero weights.
nn::Model FedAvg(std::span<const nn::Model* const> models,
                 std::span<const double> weights);

}  // namespace splitmark::sfl

#endif  // SPLITMARK_SFL_PROTOCOL_H_
