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


#include "splitmark/sfl/split_pair.h"

#include "splitmark/common/errors.h"

namespace splitmark::sfl {

SplitModelPair SplitModelPair::FromMonolithic(const nn::Model& full,
                                              std::size_t split_index) {
  if (split_index == 0 || split_index >= full.num_layers()) {
    throw ConfigError("split index must leave layers on both sides");
  }
  return {full.Slice(0, split_index),
          full.Slice(split_index, full.num_layers()), split_index};
}

nn::Model SplitModelPair::Monolithic() const {
  return nn::Model::Concat(bottom, top);
}

void SplitModelPair::Validate() const {
  if (bottom.output_shape() != top.input_shape()) {
    throw ShapeError("bottom output " + nn::ShapeString(bottom.output_shape()) +
                     " does not feed top input " +
                     nn::ShapeString(top.input_shape()));
  }
}

nn::Model ReferenceNet(const ReferenceArch& a) {
  if (a.height < 3 || a.width < 3 || a.channels == 0 || a.num_classes < 2 ||
      a.conv_channels == 0 || a.hidden == 0) {
    throw ConfigError("invalid reference architecture");
  }
  using nn::Layer;
  return nn::Model(
      {a.channels, a.height, a.width},
      {Layer::Conv2d(a.channels, a.conv_channels), Layer::ScaleNorm(a.conv_channels),
       Layer::Relu(), Layer::Flatten(),
       Layer::Dense(a.conv_channels * a.height * a.width, a.hidden),
       Layer::ScaleNorm(a.hidden), Layer::Relu(),
       Layer::Dense(a.hidden, a.num_classes)});
}

SplitModelPair MakeReferencePair(const ReferenceArch& arch,
                                 std::uint64_t seed) {
  nn::Model full = ReferenceNet(arch);
  full.Initialize(seed);
  return SplitModelPair::FromMonolithic(full, kReferenceSplit);
}

}  // namespace splitmark::sfl
