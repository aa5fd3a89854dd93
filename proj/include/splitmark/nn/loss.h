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


#ifndef SPLITMARK_NN_LOSS_H_
#define SPLITMARK_NN_LOSS_H_

#include <span>
#include <vector>

#include "splitmark/common/types.h"
#include "splitmark/nn/tensor.h"

namespace splitmark::nn {

template <typename T>
struct LossResult {
  double loss = 0.0;
  BasicTensor<T> grad;  // d loss / d logits, same shape as the logits
};

// Mean softmax cross-entropy over the batch. logits is (n, classes).
// Throws DataError when a label is out of range.
template <typename T>
LossResult<T> SoftmaxCrossEntropy(const BasicTensor<T>& logits,
                                  std::span<const ClassId> labels);

// Row-wise argmax of (n, classes) logits.
template <typename T>
std::vector<ClassId> Argmax(const BasicTensor<T>& logits);

}  // namespace splitmark::nn

#endif  // SPLITMARK_NN_LOSS_H_
