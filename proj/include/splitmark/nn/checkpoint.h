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


#ifndef SPLITMARK_NN_CHECKPOINT_H_
#define SPLITMARK_NN_CHECKPOINT_H_

#include <filesystem>

#include "splitmark/common/binary_io.h"
#include "splitmark/nn/model.h"

namespace splitmark::nn {

// SMK1 checkpoint, all integers little-endian:
//   "SMK1" | version u16 = 1 | layer count u16 |
//   per layer: kind u8 | rank u8 | dims u32[rank] | state f32[...] |
//   CRC-32 u32 of every preceding byte.
// Layer dims: dense (in, out); conv2d (in_c, out_c, k, h, w); relu, flatten
// and scalenorm carry their per-sample input shape. The first layer's dims
// define the model input shape. Per-layer state is the layer's parameters
// followed by its buffers (scalenorm: gamma, beta, running mean, running
// var) in enumeration order. Trainable flags are not stored.
inline constexpr char kCheckpointMagic[] = "SMK1";
inline constexpr std::uint16_t kCheckpointVersion = 1;

io::Bytes EncodeCheckpoint(const Model& model);
Model DecodeCheckpoint(std::span<const std::uint8_t> bytes);

void SaveCheckpoint(const Model& model, const std::filesystem::path& path);
Model LoadCheckpoint(const std::filesystem::path& path);

}  // namespace splitmark::nn

#endif  // SPLITMARK_NN_CHECKPOINT_H_
