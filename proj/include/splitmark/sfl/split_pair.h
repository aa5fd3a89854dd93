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


#ifndef SPLITMARK_SFL_SPLIT_PAIR_H_
#define SPLITMARK_SFL_SPLIT_PAIR_H_

#include <cstddef>
#include <cstdint>
#include <span>

#include "splitmark/nn/model.h"

namespace splitmark::sfl {

// Client-side bottom model and server-side top model cut from one
// monolithic network at layer `split_index`.
struct SplitModelPair {
  nn::Model bottom;
  nn::Model top;
  std::size_t split_index = 0;

  static SplitModelPair FromMonolithic(const nn::Model& full,
                                       std::size_t split_index);
  nn::Model Monolithic() const;
  // Throws ShapeError unless bottom's output shape is top's input shape.
  void Validate() const;
};

// The desk-scale reference network:
//   conv3x3(c -> conv_channels), scalenorm, relu | flatten,
//   dense(-> hidden), scalenorm, relu, dense(-> classes)
// Clients hold the first kReferenceSplit layers. The watermark binds to the
// top model's scalenorm, top layer kReferenceWatermarkLayer.
inline constexpr std::size_t kReferenceSplit = 3;
inline constexpr std::uint16_t kReferenceWatermarkLayer = 2;

struct ReferenceArch {
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t num_classes = 4;
  std::size_t conv_channels = 4;
  std::size_t hidden = 160;
};

nn::Model ReferenceNet(const ReferenceArch& arch);

// Reference net, initialized from `seed`, split at kReferenceSplit.
SplitModelPair MakeReferencePair(const ReferenceArch& arch,
                                 std::uint64_t seed);

}  // namespace splitmark::sfl

#endif  // SPLITMARK_SFL_SPLIT_PAIR_H_
