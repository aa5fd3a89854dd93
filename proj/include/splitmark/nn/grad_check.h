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


#ifndef SPLITMARK_NN_GRAD_CHECK_H_
#define SPLITMARK_NN_GRAD_CHECK_H_

#include <functional>
#include <span>

#include "splitmark/common/types.h"
#include "splitmark/nn/loss.h"
#include "splitmark/nn/model.h"

namespace splitmark::nn {

inline constexpr std::size_t kGradCheckMaxParams = 10000;

template <typename T>
using LossFn = std::function<LossResult<T>(const BasicTensor<T>& output)>;

// Compares backprop gradients of every parameter against central finite
// differences with step `eps`, in train mode. Returns
//   max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8).
// The model is not modified. Throws ConfigError if eps <= 0 or the model
// has more than kGradCheckMaxParams parameters.
template <typename T>
double GradCheck(const BasicModel<T>& model, const BasicTensor<T>& batch,
                 const LossFn<T>& loss, double eps);

// Same with softmax cross-entropy against `labels`.
template <typename T>
double GradCheck(const BasicModel<T>& model, const BasicTensor<T>& batch,
                 std::span<const ClassId> labels, double eps);

}  // namespace splitmark::nn

#endif  // SPLITMARK_NN_GRAD_CHECK_H_
