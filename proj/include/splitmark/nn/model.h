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


#ifndef SPLITMARK_NN_MODEL_H_
#define SPLITMARK_NN_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "splitmark/nn/layers.h"
#include "splitmark/nn/tensor.h"

namespace splitmark::nn {

// An ordered stack of layers with a fixed per-sample input shape. Layer
// shapes are bound and checked at construction. Parameter enumeration order
// is layer order, then each layer's params, then its buffers; checkpoints
// and FedAvg rely on it.
//
// Not internally synchronized. Infer() is const and cache-free, so clones
// may run it concurrently; Forward()/Backward() mutate the instance.
template <typename T>
class BasicModel {
 public:
  BasicModel(Shape input_shape, std::vector<BasicLayer<T>> layers);

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  std::size_t num_layers() const { return layers_.size(); }
  BasicLayer<T>& layer(std::size_t i) { return layers_.at(i); }
  const BasicLayer<T>& layer(std::size_t i) const { return layers_.at(i); }
  // Per-sample input shape of layer i.
  const Shape& layer_input_shape(std::size_t i) const {
    return layer_inputs_.at(i);
  }

  // Kaiming-uniform weights, zero biases, unit scales, reset statistics.
  void Initialize(std::uint64_t seed);

  // Eval-mode forward pass; touches neither caches nor running statistics.
  BasicTensor<T> Infer(const BasicTensor<T>& batch) const;

  // Forward pass that caches intermediates for Backward(). Train mode
  // normalizes with batch statistics and updates the running ones.
  BasicTensor<T> Forward(const BasicTensor<T>& batch, Mode mode);

  // Backpropagates `upstream` (shape of the last Forward output) and returns
  // the input gradient. Parameter gradients are accumulated, never
  // overwritten, unless `param_grads` is false.
  BasicTensor<T> Backward(const BasicTensor<T>& upstream,
                          bool param_grads = true);

  bool has_cache() const { return cached_output_.has_value(); }
  void ClearCache();
  void ZeroGrad();

  std::vector<Param<T>*> Parameters();
  std::vector<const Param<T>*> Parameters() const;
  // Parameters and running statistics in enumeration order.
  std::vector<BasicTensor<T>*> StateTensors();
  std::vector<const BasicTensor<T>*> StateTensors() const;
  std::size_t NumParameters() const;

  // Layers [first, last) as a standalone model.
  BasicModel Slice(std::size_t first, std::size_t last) const;
  // `lower` followed by `upper`; shapes must chain.
  static BasicModel Concat(const BasicModel& lower, const BasicModel& upper);

  bool SameArchitecture(const BasicModel& other) const;

  // Precision conversion; copies state, zeroes gradients, drops caches.
  template <typename U>
  BasicModel<U> Cast() const {
    std::vector<BasicLayer<U>> layers;
    layers.reserve(layers_.size());
    for (const auto& l : layers_) {
      layers.push_back(BasicLayer<U>::FromDescriptor(l.kind(), l.Descriptor()));
    }
    BasicModel<U> out(input_shape_, std::move(layers));
    auto src = StateTensors();
    auto dst = out.StateTensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template Cast<U>();
    return out;
  }

 private:
  void CheckBatch(const BasicTensor<T>& batch) const;

  Shape input_shape_;
  Shape output_shape_;
  std::vector<BasicLayer<T>> layers_;
  std::vector<Shape> layer_inputs_;
  std::optional<Shape> cached_output_;
};

using Model = BasicModel<float>;

// Free-function forms of the core operations.
template <typename T>
BasicTensor<T> Forward(BasicModel<T>& model, const BasicTensor<T>& batch,
                       Mode mode) {
  return model.Forward(batch, mode);
}

template <typename T>
BasicTensor<T> Backward(BasicModel<T>& model, const BasicTensor<T>& upstream) {
  return model.Backward(upstream);
}

// w <- w - lr * grad for trainable parameters, then zero all gradients.
// Throws ConfigError unless lr is positive and finite.
template <typename T>
void SgdStep(BasicModel<T>& model, double lr);

}  // namespace splitmark::nn

#endif  // SPLITMARK_NN_MODEL_H_
