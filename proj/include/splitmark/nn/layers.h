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


#ifndef SPLITMARK_NN_LAYERS_H_
#define SPLITMARK_NN_LAYERS_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "splitmark/common/random.h"
#include "splitmark/nn/tensor.h"

namespace splitmark::nn {

// Tag values are written to checkpoints; do not renumber.
enum class LayerKind : std::uint8_t {
  kDense = 1,
  kConv2d = 2,
  kRelu = 3,
  kFlatten = 4,
  kScaleNorm = 5,
};

std::string LayerKindName(LayerKind kind);

enum class Mode { kTrain, kEval };

template <typename T>
struct Param {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool trainable = true;
};

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kNormMomentum = 0.1;

// Fully connected: y = x W^T + b, W is (out, in).
template <typename T>
class DenseLayer {
 public:
  DenseLayer(std::size_t in, std::size_t out);

  Shape Bind(const Shape& input);
  std::vector<std::uint32_t> Descriptor() const;
  void Init(Rng& rng);

  BasicTensor<T> Infer(const BasicTensor<T>& x) const;
  BasicTensor<T> Forward(const BasicTensor<T>& x, Mode mode);
  BasicTensor<T> Backward(const BasicTensor<T>& g, bool param_grads);
  void ClearCache() { x_ = {}; }

  std::vector<Param<T>*> Params() { return {&weight_, &bias_}; }
  std::vector<const Param<T>*> Params() const { return {&weight_, &bias_}; }
  std::vector<BasicTensor<T>*> Buffers() { return {}; }
  std::vector<const BasicTensor<T>*> Buffers() const { return {}; }

 private:
  std::size_t in_;
  std::size_t out_;
  Param<T> weight_;
  Param<T> bias_;
  BasicTensor<T> x_;
};

// 2-D convolution, stride 1, zero "same" padding, odd square kernel.
// W is (out_c, in_c, k, k).
template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer(std::size_t in_channels, std::size_t out_channels,
              std::size_t kernel);

  Shape Bind(const Shape& input);
  std::vector<std::uint32_t> Descriptor() const;
  void Init(Rng& rng);

  BasicTensor<T> Infer(const BasicTensor<T>& x) const;
  BasicTensor<T> Forward(const BasicTensor<T>& x, Mode mode);
  BasicTensor<T> Backward(const BasicTensor<T>& g, bool param_grads);
  void ClearCache() { x_ = {}; }

  std::vector<Param<T>*> Params() { return {&weight_, &bias_}; }
  std::vector<const Param<T>*> Params() const { return {&weight_, &bias_}; }
  std::vector<BasicTensor<T>*> Buffers() { return {}; }
  std::vector<const BasicTensor<T>*> Buffers() const { return {}; }

 private:
  std::size_t in_c_;
  std::size_t out_c_;
  std::size_t k_;
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  Param<T> weight_;
  Param<T> bias_;
  BasicTensor<T> x_;
};

template <typename T>
class ReluLayer {
 public:
  Shape Bind(const Shape& input);
  std::vector<std::uint32_t> Descriptor() const;
  void Init(Rng&) {}

  BasicTensor<T> Infer(const BasicTensor<T>& x) const;
  BasicTensor<T> Forward(const BasicTensor<T>& x, Mode mode);
  BasicTensor<T> Backward(const BasicTensor<T>& g, bool param_grads);
  void ClearCache() { x_ = {}; }

  std::vector<Param<T>*> Params() { return {}; }
  std::vector<const Param<T>*> Params() const { return {}; }
  std::vector<BasicTensor<T>*> Buffers() { return {}; }
  std::vector<const BasicTensor<T>*> Buffers() const { return {}; }

 private:
  Shape input_;
  BasicTensor<T> x_;
};

template <typename T>
class FlattenLayer {
 public:
  Shape Bind(const Shape& input);
  std::vector<std::uint32_t> Descriptor() const;
  void Init(Rng&) {}

  BasicTensor<T> Infer(const BasicTensor<T>& x) const;
  BasicTensor<T> Forward(const BasicTensor<T>& x, Mode mode);
  BasicTensor<T> Backward(const BasicTensor<T>& g, bool param_grads);
  void ClearCache() { batch_shape_.reset(); }

  std::vector<Param<T>*> Params() { return {}; }
  std::vector<const Param<T>*> Params() const { return {}; }
  std::vector<BasicTensor<T>*> Buffers() { return {}; }
  std::vector<const BasicTensor<T>*> Buffers() const { return {}; }

 private:
  Shape input_;
  std::optional<Shape> batch_shape_;
};

// Per-channel batch normalization with learnable scale (gamma) and shift
// (beta). Channels are dim 1 of the batch; statistics pool over the batch
// and any spatial dims. Train mode normalizes with batch statistics and
// updates the running ones; eval mode uses the running statistics.
template <typename T>
class ScaleNormLayer {
 public:
  explicit ScaleNormLayer(std::size_t channels);

  Shape Bind(const Shape& input);
  std::vector<std::uint32_t> Descriptor() const;
  void Init(Rng&);

  BasicTensor<T> Infer(const BasicTensor<T>& x) const;
  BasicTensor<T> Forward(const BasicTensor<T>& x, Mode mode);
  BasicTensor<T> Backward(const BasicTensor<T>& g, bool param_grads);
  void ClearCache() { xhat_ = {}; }

  std::size_t channels() const { return channels_; }
  Param<T>& gamma() { return gamma_; }
  const Param<T>& gamma() const { return gamma_; }
  Param<T>& beta() { return beta_; }
  const Param<T>& beta() const { return beta_; }
  const BasicTensor<T>& running_mean() const { return running_mean_; }
  const BasicTensor<T>& running_var() const { return running_var_; }

  std::vector<Param<T>*> Params() { return {&gamma_, &beta_}; }
  std::vector<const Param<T>*> Params() const { return {&gamma_, &beta_}; }
  std::vector<BasicTensor<T>*> Buffers() {
    return {&running_mean_, &running_var_};
  }
  std::vector<const BasicTensor<T>*> Buffers() const {
    return {&running_mean_, &running_var_};
  }

 private:
  std::size_t channels_;
  Shape input_;
  Param<T> gamma_;
  Param<T> beta_;
  BasicTensor<T> running_mean_;
  BasicTensor<T> running_var_;
  // Cache of the last Forward.
  Mode mode_ = Mode::kTrain;
  BasicTensor<T> xhat_;
  std::vector<double> inv_std_;
};

// A network layer: one of the five supported kinds. Value type; copying a
// layer copies its parameters, gradients, running statistics and cache.
template <typename T>
class BasicLayer {
 public:
  static BasicLayer Dense(std::size_t in, std::size_t out);
  static BasicLayer Conv2d(std::size_t in_channels, std::size_t out_channels,
                           std::size_t kernel = 3);
  static BasicLayer Relu();
  static BasicLayer Flatten();
  static BasicLayer ScaleNorm(std::size_t channels);

  LayerKind kind() const;

  // Records the per-sample input shape and returns the output shape.
  // Throws ShapeError if the layer cannot accept `input`.
  Shape Bind(const Shape& input);
  std::vector<std::uint32_t> Descriptor() const;
  void Init(Rng& rng);

  BasicTensor<T> Infer(const BasicTensor<T>& x) const;
  BasicTensor<T> Forward(const BasicTensor<T>& x, Mode mode);
  BasicTensor<T> Backward(const BasicTensor<T>& g, bool param_grads);
  void ClearCache();

  std::vector<Param<T>*> Params();
  std::vector<const Param<T>*> Params() const;
  std::vector<BasicTensor<T>*> Buffers();
  std::vector<const BasicTensor<T>*> Buffers() const;

  ScaleNormLayer<T>* AsScaleNorm() {
    return std::get_if<ScaleNormLayer<T>>(&impl_);
  }
  const ScaleNormLayer<T>* AsScaleNorm() const {
    return std::get_if<ScaleNormLayer<T>>(&impl_);
  }

  // Rebuilds an unbound layer from a checkpoint descriptor.
  static BasicLayer FromDescriptor(LayerKind kind,
                                   const std::vector<std::uint32_t>& dims);
  // Per-sample input shape implied by a descriptor.
  static Shape InputShapeFromDescriptor(LayerKind kind,
                                        const std::vector<std::uint32_t>& dims);

 private:
  using Impl = std::variant<DenseLayer<T>, Conv2dLayer<T>, ReluLayer<T>,
                            FlattenLayer<T>, ScaleNormLayer<T>>;
  explicit BasicLayer(Impl impl) : impl_(std::move(impl)) {}

  Impl impl_;
};

using Layer = BasicLayer<float>;

}  // namespace splitmark::nn

#endif  // SPLITMARK_NN_LAYERS_H_
