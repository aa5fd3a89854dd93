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


#include "splitmark/nn/loss.h"

#include <cmath>
#include <string>
#include <vector>

#include "splitmark/common/errors.h"

namespace splitmark::nn {

template <typename T>
LossResult<T> SoftmaxCrossEntropy(const BasicTensor<T>& logits,
                                  std::span<const ClassId> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross-entropy expects (n, classes) logits, got " +
                     ShapeString(logits.shape()));
  }
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("label count " + std::to_string(labels.size()) +
                     " does not match batch size " + std::to_string(n));
  }
  LossResult<T> out{0.0, BasicTensor<T>(logits.shape())};
  std::vector<double> p(c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw DataError("label " + std::to_string(labels[i]) +
                      " out of range for " + std::to_string(c) + " classes");
    }
    const T* row = logits.raw() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, double(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(row[j] - mx);
      z += p[j];
    }
    total += std::log(z) - (row[labels[i]] - mx);
    for (std::size_t j = 0; j < c; ++j) {
      const double pj = p[j] / z - (j == labels[i] ? 1.0 : 0.0);
      out.grad[i * c + j] = static_cast<T>(pj / static_cast<double>(n));
    }
  }
  out.loss = total / static_cast<double>(n);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  return out;
}

template <typename T>
std::vector<ClassId> Argmax(const BasicTensor<T>& logits) {
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  std::vector<ClassId> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.raw() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = static_cast<ClassId>(best);
  }
  return out;
}

template LossResult<float> SoftmaxCrossEntropy(const BasicTensor<float>&,
                                               std::span<const ClassId>);
template LossResult<double> SoftmaxCrossEntropy(const BasicTensor<double>&,
                                                std::span<const ClassId>);
template std::vector<ClassId> Argmax(const BasicTensor<float>&);
template std::vector<ClassId> Argmax(const BasicTensor<double>&);

}  // namespace splitmark::nn
