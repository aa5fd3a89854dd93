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


#include "splitmark/nn/model.h"

#include <cmath>
#include <string>

#include "splitmark/common/errors.h"
#include "splitmark/common/random.h"

namespace splitmark::nn {

template <typename T>
BasicModel<T>::BasicModel(Shape input_shape, std::vector<BasicLayer<T>> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (input_shape_.empty()) throw ShapeError("model input shape is empty");
  for (std::size_t d : input_shape_) {
    if (d == 0) throw ShapeError("model input dims must be positive");
  }
  Shape shape = input_shape_;
  layer_inputs_.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layer_inputs_.push_back(shape);
    try {
      shape = layers_[i].Bind(shape);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
    }
  }
  output_shape_ = shape;
}

template <typename T>
void BasicModel<T>::Initialize(std::uint64_t seed) {
  Rng rng(DeriveSeed(seed, {kStreamInit}));
  for (auto& l : layers_) l.Init(rng);
  ZeroGrad();
  ClearCache();
}

template <typename T>
void BasicModel<T>::CheckBatch(const BasicTensor<T>& batch) const {
  const Shape& s = batch.shape();
  bool ok = s.size() == input_shape_.size() + 1;
  for (std::size_t i = 0; ok && i < input_shape_.size(); ++i) {
    ok = s[i + 1] == input_shape_[i];
  }
  if (!ok) {
    throw ShapeError("batch shape " + ShapeString(s) +
                     " does not match model input " +
                     ShapeString(input_shape_) + " with a batch dimension");
  }
  if (!batch.AllFinite()) {
    throw NumericError("non-finite value in model input");
  }
}

template <typename T>
BasicTensor<T> BasicModel<T>::Infer(const BasicTensor<T>& batch) const {
  CheckBatch(batch);
  BasicTensor<T> x = batch;
  for (const auto& l : layers_) x = l.Infer(x);
  if (!x.AllFinite()) throw NumericError("non-finite model output");
  return x;
}

template <typename T>
BasicTensor<T> BasicModel<T>::Forward(const BasicTensor<T>& batch, Mode mode) {
  CheckBatch(batch);
  ClearCache();
  BasicTensor<T> x = batch;
  for (auto& l : layers_) x = l.Forward(x, mode);
  if (!x.AllFinite()) {
    ClearCache();
    throw NumericError("non-finite model output");
  }
  cached_output_ = x.shape();
  return x;
}

template <typename T>
BasicTensor<T> BasicModel<T>::Backward(const BasicTensor<T>& upstream,
                                       bool param_grads) {
  if (!cached_output_) {
    throw StateError("backward called without a cached forward pass");
  }
  if (upstream.shape() != *cached_output_) {
    throw ShapeError("upstream gradient shape " +
                     ShapeString(upstream.shape()) +
                     " does not match forward output " +
                     ShapeString(*cached_output_));
  }
  if (!upstream.AllFinite()) {
    throw NumericError("non-finite upstream gradient");
  }
  BasicTensor<T> g = upstream;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i].Backward(g, param_grads);
  }
  return g;
}

template <typename T>
void BasicModel<T>::ClearCache() {
  for (auto& l : layers_) l.ClearCache();
  cached_output_.reset();
}

template <typename T>
void BasicModel<T>::ZeroGrad() {
  for (Param<T>* p : Parameters()) p->grad.Fill(T{0});
}

template <typename T>
std::vector<Param<T>*> BasicModel<T>::Parameters() {
  std::vector<Param<T>*> out;
  for (auto& l : layers_) {
    for (Param<T>* p : l.Params()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<const Param<T>*> BasicModel<T>::Parameters() const {
  std::vector<const Param<T>*> out;
  for (const auto& l : layers_) {
    for (const Param<T>* p : l.Params()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>*> BasicModel<T>::StateTensors() {
  std::vector<BasicTensor<T>*> out;
  for (auto& l : layers_) {
    for (Param<T>* p : l.Params()) out.push_back(&p->value);
    for (BasicTensor<T>* b : l.Buffers()) out.push_back(b);
  }
  return out;
}

template <typename T>
std::vector<const BasicTensor<T>*> BasicModel<T>::StateTensors() const {
  std::vector<const BasicTensor<T>*> out;
  for (const auto& l : layers_) {
    for (const Param<T>* p : l.Params()) out.push_back(&p->value);
    for (const BasicTensor<T>* b : l.Buffers()) out.push_back(b);
  }
  return out;
}

template <typename T>
std::size_t BasicModel<T>::NumParameters() const {
  std::size_t n = 0;
  for (const Param<T>* p : Parameters()) n += p->value.size();
  return n;
}

template <typename T>
BasicModel<T> BasicModel<T>::Slice(std::size_t first, std::size_t last) const {
  if (first >= last || last > layers_.size()) {
    throw ConfigError("invalid layer slice [" + std::to_string(first) + ", " +
                      std::to_string(last) + ")");
  }
  std::vector<BasicLayer<T>> layers(layers_.begin() + first,
                                    layers_.begin() + last);
  BasicModel out(layer_inputs_[first], std::move(layers));
  out.ClearCache();
  return out;
}

template <typename T>
BasicModel<T> BasicModel<T>::Concat(const BasicModel& lower,
                                    const BasicModel& upper) {
  if (lower.output_shape() != upper.input_shape()) {
    throw ShapeError("cannot chain model with output " +
                     ShapeString(lower.output_shape()) + " into input " +
                     ShapeString(upper.input_shape()));
  }
  std::vector<BasicLayer<T>> layers = lower.layers_;
  layers.insert(layers.end(), upper.layers_.begin(), upper.layers_.end());
  BasicModel out(lower.input_shape(), std::move(layers));
  out.ClearCache();
  return out;
}

template <typename T>
bool BasicModel<T>::SameArchitecture(const BasicModel& other) const {
  if (input_shape_ != other.input_shape_ ||
      layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind() != other.layers_[i].kind() ||
        layers_[i].Descriptor() != other.layers_[i].Descriptor()) {
      return false;
    }
  }
  return true;
}

template <typename T>
void SgdStep(BasicModel<T>& model, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ConfigError("learning rate must be positive and finite, got " +
                      std::to_string(lr));
  }
  for (Param<T>* p : model.Parameters()) {
    if (p->trainable) {
      T* w = p->value.raw();
      const T* g = p->grad.raw();
      const T step = static_cast<T>(lr);
      for (std::size_t i = 0; i < p->value.size(); ++i) w[i] -= step * g[i];
    }
    p->grad.Fill(T{0});
  }
}

template class BasicModel<float>;
template class BasicModel<double>;
template void SgdStep<float>(BasicModel<float>&, double);
template void SgdStep<double>(BasicModel<double>&, double);

}  // namespace splitmark::nn
