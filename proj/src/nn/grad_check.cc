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


#include "splitmark/nn/grad_check.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "splitmark/common/errors.h"

namespace splitmark::nn {

template <typename T>
double GradCheck(const BasicModel<T>& model, const BasicTensor<T>& batch,
                 const LossFn<T>& loss, double eps) {
  if (!(eps > 0.0)) {
    throw ConfigError("grad_check step must be positive");
  }
  if (model.NumParameters() > kGradCheckMaxParams) {
    throw ConfigError("grad_check limited to " +
                      std::to_string(kGradCheckMaxParams) + " parameters");
  }
  BasicModel<T> work = model;
  work.ZeroGrad();
  const auto out = work.Forward(batch, Mode::kTrain);
  work.Backward(loss(out).grad);

  auto eval = [&]() { return loss(work.Forward(batch, Mode::kTrain)).loss; };

  double worst = 0.0;
  for (Param<T>* p : work.Parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T saved = p->value[i];
      p->value[i] = static_cast<T>(saved + eps);
      const double up = eval();
      p->value[i] = static_cast<T>(saved - eps);
      const double down = eval();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

template <typename T>
double GradCheck(const BasicModel<T>& model, const BasicTensor<T>& batch,
                 std::span<const ClassId> labels, double eps) {
  std::vector<ClassId> owned(labels.begin(), labels.end());
  return GradCheck<T>(
      model, batch,
      [owned](const BasicTensor<T>& out) {
        return SoftmaxCrossEntropy(out, std::span<const ClassId>(owned));
      },
      eps);
}

template double GradCheck(const BasicModel<float>&, const BasicTensor<float>&,
                          const LossFn<float>&, double);
template double GradCheck(const BasicModel<double>&,
                          const BasicTensor<double>&, const LossFn<double>&,
                          double);
template double GradCheck(const BasicModel<float>&, const BasicTensor<float>&,
                          std::span<const ClassId>, double);
template double GradCheck(const BasicModel<double>&,
                          const BasicTensor<double>&, std::span<const ClassId>,
                          double);

}  // namespace splitmark::nn
