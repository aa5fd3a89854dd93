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


#include "splitmark/nn/layers.h"

#include <cmath>
#include <numeric>

#include "splitmark/nn/kernels.h"

namespace splitmark::nn {

std::string LayerKindName(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense:
      return "dense";
    case LayerKind::kConv2d:
      return "conv2d";
    case LayerKind::kRelu:
      return "relu";
    case LayerKind::kFlatten:
      return "flatten";
    case LayerKind::kScaleNorm:
      return "scalenorm";
  }
  return "unknown";
}

namespace {

template <typename T>
Param<T> MakeParam(std::string name, Shape shape) {
  BasicTensor<T> value(shape);
  BasicTensor<T> grad(std::move(shape));
  return Param<T>{std::move(name), std::move(value), std::move(grad), true};
}

template <typename T>
void KaimingUniform(Param<T>& p, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : p.value.data()) v = static_cast<T>(dist(rng));
}

std::vector<std::uint32_t> ToDims(const Shape& s) {
  return std::vector<std::uint32_t>(s.begin(), s.end());
}

[[noreturn]] void NoCache(const char* layer) {
  throw StateError(std::string("backward called on ") + layer +
                   " without a cached forward pass");
}

}  // namespace

// ---------------------------------------------------------------- dense

template <typename T>
DenseLayer<T>::DenseLayer(std::size_t in, std::size_t out)
    : in_(in),
      out_(out),
      weight_(MakeParam<T>("weight", {out, in})),
      bias_(MakeParam<T>("bias", {out})) {}

template <typename T>
Shape DenseLayer<T>::Bind(const Shape& input) {
  if (input.size() != 1 || input[0] != in_) {
    throw ShapeError("dense(" + std::to_string(in_) + "->" +
                     std::to_string(out_) + ") cannot accept input " +
                     ShapeString(input));
  }
  return {out_};
}

template <typename T>
std::vector<std::uint32_t> DenseLayer<T>::Descriptor() const {
  return {static_cast<std::uint32_t>(in_), static_cast<std::uint32_t>(out_)};
}

template <typename T>
void DenseLayer<T>::Init(Rng& rng) {
  KaimingUniform(weight_, in_, rng);
  bias_.value.Fill(T{0});
}

template <typename T>
BasicTensor<T> DenseLayer<T>::Infer(const BasicTensor<T>& x) const {
  const std::size_t n = x.dim(0);
  BasicTensor<T> y({n, out_});
  const T* w = weight_.value.raw();
  const T* b = bias_.value.raw();
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x.raw() + i * in_;
    T* yi = y.raw() + i * out_;
    for (std::size_t o = 0; o < out_; ++o) {
      yi[o] = b[o] + kernels::Dot(xi, w + o * in_, in_);
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> DenseLayer<T>::Forward(const BasicTensor<T>& x, Mode) {
  x_ = x;
  return Infer(x);
}

template <typename T>
BasicTensor<T> DenseLayer<T>::Backward(const BasicTensor<T>& g,
                                       bool param_grads) {
  if (x_.empty()) NoCache("dense");
  const std::size_t n = x_.dim(0);
  BasicTensor<T> gx({n, in_});
  const T* w = weight_.value.raw();
  for (std::size_t i = 0; i < n; ++i) {
    const T* gi = g.raw() + i * out_;
    T* gxi = gx.raw() + i * in_;
    for (std::size_t o = 0; o < out_; ++o) {
      kernels::Axpy(gi[o], w + o * in_, gxi, in_);
    }
  }
  if (param_grads) {
    T* gw = weight_.grad.raw();
    T* gb = bias_.grad.raw();
    for (std::size_t i = 0; i < n; ++i) {
      const T* gi = g.raw() + i * out_;
      const T* xi = x_.raw() + i * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        kernels::Axpy(gi[o], xi, gw + o * in_, in_);
        gb[o] += gi[o];
      }
    }
  }
  return gx;
}

// --------------------------------------------------------------- conv2d

template <typename T>
Conv2dLayer<T>::Conv2dLayer(std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel)
    : in_c_(in_channels),
      out_c_(out_channels),
      k_(kernel),
      weight_(MakeParam<T>("weight",
                           {out_channels, in_channels, kernel, kernel})),
      bias_(MakeParam<T>("bias", {out_channels})) {
  if (kernel % 2 == 0) {
    throw ConfigError("conv2d supports odd kernel sizes only");
  }
}

template <typename T>
Shape Conv2dLayer<T>::Bind(const Shape& input) {
  if (input.size() != 3 || input[0] != in_c_) {
    throw ShapeError("conv2d(" + std::to_string(in_c_) + "->" +
                     std::to_string(out_c_) + ") cannot accept input " +
                     ShapeString(input));
  }
  h_ = input[1];
  w_ = input[2];
  return {out_c_, h_, w_};
}

template <typename T>
std::vector<std::uint32_t> Conv2dLayer<T>::Descriptor() const {
  return {static_cast<std::uint32_t>(in_c_), static_cast<std::uint32_t>(out_c_),
          static_cast<std::uint32_t>(k_), static_cast<std::uint32_t>(h_),
          static_cast<std::uint32_t>(w_)};
}

template <typename T>
void Conv2dLayer<T>::Init(Rng& rng) {
  KaimingUniform(weight_, in_c_ * k_ * k_, rng);
  bias_.value.Fill(T{0});
}

template <typename T>
BasicTensor<T> Conv2dLayer<T>::Infer(const BasicTensor<T>& x) const {
  const std::size_t n = x.dim(0);
  const std::size_t hw = h_ * w_;
  const long pad = static_cast<long>(k_ / 2);
  const long H = static_cast<long>(h_);
  const long W = static_cast<long>(w_);
  BasicTensor<T> y({n, out_c_, h_, w_});
  const T* wt = weight_.value.raw();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t oc = 0; oc < out_c_; ++oc) {
      T* out = y.raw() + (s * out_c_ + oc) * hw;
      std::fill(out, out + hw, bias_.value[oc]);
      for (std::size_t ic = 0; ic < in_c_; ++ic) {
        const T* in = x.raw() + (s * in_c_ + ic) * hw;
        const T* kw = wt + ((oc * in_c_ + ic) * k_) * k_;
        for (long ky = 0; ky < static_cast<long>(k_); ++ky) {
          const long dy = ky - pad;
          const long y0 = std::max(0L, -dy);
          const long y1 = std::min(H, H - dy);
          for (long kx = 0; kx < static_cast<long>(k_); ++kx) {
            const long dx = kx - pad;
            const long x0 = std::max(0L, -dx);
            const long x1 = std::min(W, W - dx);
            const T wv = kw[ky * static_cast<long>(k_) + kx];
            for (long r = y0; r < y1; ++r) {
              kernels::Axpy(wv, in + (r + dy) * W + x0 + dx, out + r * W + x0,
                            static_cast<std::size_t>(x1 - x0));
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> Conv2dLayer<T>::Forward(const BasicTensor<T>& x, Mode) {
  x_ = x;
  return Infer(x);
}

template <typename T>
BasicTensor<T> Conv2dLayer<T>::Backward(const BasicTensor<T>& g,
                                        bool param_grads) {
  if (x_.empty()) NoCache("conv2d");
  const std::size_t n = x_.dim(0);
  const std::size_t hw = h_ * w_;
  const long pad = static_cast<long>(k_ / 2);
  const long H = static_cast<long>(h_);
  const long W = static_cast<long>(w_);
  BasicTensor<T> gx(x_.shape());
  const T* wt = weight_.value.raw();
  T* gw = weight_.grad.raw();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t oc = 0; oc < out_c_; ++oc) {
      const T* go = g.raw() + (s * out_c_ + oc) * hw;
      if (param_grads) {
        T acc{0};
        for (std::size_t i = 0; i < hw; ++i) acc += go[i];
        bias_.grad[oc] += acc;
      }
      for (std::size_t ic = 0; ic < in_c_; ++ic) {
        const T* in = x_.raw() + (s * in_c_ + ic) * hw;
        T* gin = gx.raw() + (s * in_c_ + ic) * hw;
        const std::size_t wbase = ((oc * in_c_ + ic) * k_) * k_;
        for (long ky = 0; ky < static_cast<long>(k_); ++ky) {
          const long dy = ky - pad;
          const long y0 = std::max(0L, -dy);
          const long y1 = std::min(H, H - dy);
          for (long kx = 0; kx < static_cast<long>(k_); ++kx) {
            const long dx = kx - pad;
            const long x0 = std::max(0L, -dx);
            const long x1 = std::min(W, W - dx);
            const std::size_t len = static_cast<std::size_t>(x1 - x0);
            const std::size_t widx = wbase + ky * k_ + kx;
            const T wv = wt[widx];
            T acc{0};
            for (long r = y0; r < y1; ++r) {
              const T* grow = go + r * W + x0;
              kernels::Axpy(wv, grow, gin + (r + dy) * W + x0 + dx, len);
              if (param_grads) {
                acc += kernels::Dot(grow, in + (r + dy) * W + x0 + dx, len);
              }
            }
            if (param_grads) gw[widx] += acc;
          }
        }
      }
    }
  }
  return gx;
}

// ----------------------------------------------------------------- relu

template <typename T>
Shape ReluLayer<T>::Bind(const Shape& input) {
  input_ = input;
  return input;
}

template <typename T>
std::vector<std::uint32_t> ReluLayer<T>::Descriptor() const {
  return ToDims(input_);
}

template <typename T>
BasicTensor<T> ReluLayer<T>::Infer(const BasicTensor<T>& x) const {
  BasicTensor<T> y = x;
  for (T& v : y.data()) v = v > T{0} ? v : T{0};
  return y;
}

template <typename T>
BasicTensor<T> ReluLayer<T>::Forward(const BasicTensor<T>& x, Mode) {
  x_ = x;
  return Infer(x);
}

template <typename T>
BasicTensor<T> ReluLayer<T>::Backward(const BasicTensor<T>& g, bool) {
  if (x_.empty()) NoCache("relu");
  BasicTensor<T> gx = g;
  const T* x = x_.raw();
  T* out = gx.raw();
  for (std::size_t i = 0; i < gx.size(); ++i) {
    if (!(x[i] > T{0})) out[i] = T{0};
  }
  return gx;
}

// -------------------------------------------------------------- flatten

template <typename T>
Shape FlattenLayer<T>::Bind(const Shape& input) {
  if (input.empty()) throw ShapeError("flatten needs a non-scalar input");
  input_ = input;
  return {NumElements(input)};
}

template <typename T>
std::vector<std::uint32_t> FlattenLayer<T>::Descriptor() const {
  return ToDims(input_);
}

template <typename T>
BasicTensor<T> FlattenLayer<T>::Infer(const BasicTensor<T>& x) const {
  return x.Reshaped({x.dim(0), NumElements(input_)});
}

template <typename T>
BasicTensor<T> FlattenLayer<T>::Forward(const BasicTensor<T>& x, Mode) {
  batch_shape_ = x.shape();
  return Infer(x);
}

template <typename T>
BasicTensor<T> FlattenLayer<T>::Backward(const BasicTensor<T>& g, bool) {
  if (!batch_shape_) NoCache("flatten");
  return g.Reshaped(*batch_shape_);
}

// ------------------------------------------------------------ scalenorm

template <typename T>
ScaleNormLayer<T>::ScaleNormLayer(std::size_t channels)
    : channels_(channels),
      gamma_(MakeParam<T>("gamma", {channels})),
      beta_(MakeParam<T>("beta", {channels})),
      running_mean_(Shape{channels}),
      running_var_(Shape{channels}, T{1}) {
  gamma_.value.Fill(T{1});
}

template <typename T>
Shape ScaleNormLayer<T>::Bind(const Shape& input) {
  if ((input.size() != 1 && input.size() != 3) || input[0] != channels_) {
    throw ShapeError("scalenorm(" + std::to_string(channels_) +
                     ") cannot accept input " + ShapeString(input));
  }
  input_ = input;
  return input;
}

template <typename T>
std::vector<std::uint32_t> ScaleNormLayer<T>::Descriptor() const {
  return ToDims(input_);
}

template <typename T>
void ScaleNormLayer<T>::Init(Rng&) {
  gamma_.value.Fill(T{1});
  beta_.value.Fill(T{0});
  running_mean_.Fill(T{0});
  running_var_.Fill(T{1});
}

template <typename T>
BasicTensor<T> ScaleNormLayer<T>::Infer(const BasicTensor<T>& x) const {
  const std::size_t n = x.dim(0);
  const std::size_t spatial = x.size() / (n * channels_);
  BasicTensor<T> y(x.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    const double inv =
        1.0 / std::sqrt(static_cast<double>(running_var_[c]) + kNormEpsilon);
    const double mean = running_mean_[c];
    const double gm = gamma_.value[c];
    const double bt = beta_.value[c];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * channels_ + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        y[base + i] =
            static_cast<T>(gm * ((x[base + i] - mean) * inv) + bt);
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> ScaleNormLayer<T>::Forward(const BasicTensor<T>& x, Mode mode) {
  const std::size_t n = x.dim(0);
  const std::size_t spatial = x.size() / (n * channels_);
  const std::size_t m = n * spatial;
  mode_ = mode;
  inv_std_.assign(channels_, 0.0);
  xhat_ = BasicTensor<T>(x.shape());
  BasicTensor<T> y(x.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean;
    double var;
    if (mode == Mode::kTrain) {
      double sum = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t base = (s * channels_ + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) sum += x[base + i];
      }
      mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t base = (s * channels_ + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double d = x[base + i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(m);
      const double unbiased =
          m > 1 ? sq / static_cast<double>(m - 1) : var;
      running_mean_[c] = static_cast<T>((1.0 - kNormMomentum) *
                                            running_mean_[c] +
                                        kNormMomentum * mean);
      running_var_[c] = static_cast<T>((1.0 - kNormMomentum) *
                                           running_var_[c] +
                                       kNormMomentum * unbiased);
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
    inv_std_[c] = inv;
    const double gm = gamma_.value[c];
    const double bt = beta_.value[c];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * channels_ + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double xh = (x[base + i] - mean) * inv;
        xhat_[base + i] = static_cast<T>(xh);
        y[base + i] = static_cast<T>(gm * xh + bt);
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> ScaleNormLayer<T>::Backward(const BasicTensor<T>& g,
                                           bool param_grads) {
  if (xhat_.empty()) NoCache("scalenorm");
  const std::size_t n = g.dim(0);
  const std::size_t spatial = g.size() / (n * channels_);
  const double m = static_cast<double>(n * spatial);
  BasicTensor<T> gx(g.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * channels_ + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        sum_g += g[base + i];
        sum_gx += static_cast<double>(g[base + i]) * xhat_[base + i];
      }
    }
    const double gm = gamma_.value[c];
    const double inv = inv_std_[c];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * channels_ + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        if (mode_ == Mode::kTrain) {
          gx[base + i] = static_cast<T>(
              gm * inv / m *
              (m * g[base + i] - sum_g - xhat_[base + i] * sum_gx));
        } else {
          gx[base + i] = static_cast<T>(gm * inv * g[base + i]);
        }
      }
    }
    if (param_grads) {
      gamma_.grad[c] += static_cast<T>(sum_gx);
      beta_.grad[c] += static_cast<T>(sum_g);
    }
  }
  return gx;
}

// ---------------------------------------------------------------- layer

template <typename T>
BasicLayer<T> BasicLayer<T>::Dense(std::size_t in, std::size_t out) {
  return BasicLayer(Impl(std::in_place_type<DenseLayer<T>>, in, out));
}

template <typename T>
BasicLayer<T> BasicLayer<T>::Conv2d(std::size_t in_channels,
                                    std::size_t out_channels,
                                    std::size_t kernel) {
  return BasicLayer(Impl(std::in_place_type<Conv2dLayer<T>>, in_channels,
                         out_channels, kernel));
}

template <typename T>
BasicLayer<T> BasicLayer<T>::Relu() {
  return BasicLayer(Impl(std::in_place_type<ReluLayer<T>>));
}

template <typename T>
BasicLayer<T> BasicLayer<T>::Flatten() {
  return BasicLayer(Impl(std::in_place_type<FlattenLayer<T>>));
}

template <typename T>
BasicLayer<T> BasicLayer<T>::ScaleNorm(std::size_t channels) {
  return BasicLayer(Impl(std::in_place_type<ScaleNormLayer<T>>, channels));
}

template <typename T>
LayerKind BasicLayer<T>::kind() const {
  constexpr LayerKind kKinds[] = {LayerKind::kDense, LayerKind::kConv2d,
                                  LayerKind::kRelu, LayerKind::kFlatten,
                                  LayerKind::kScaleNorm};
  return kKinds[impl_.index()];
}

template <typename T>
Shape BasicLayer<T>::Bind(const Shape& input) {
  return std::visit([&](auto& l) { return l.Bind(input); }, impl_);
}

template <typename T>
std::vector<std::uint32_t> BasicLayer<T>::Descriptor() const {
  return std::visit([](const auto& l) { return l.Descriptor(); }, impl_);
}

template <typename T>
void BasicLayer<T>::Init(Rng& rng) {
  std::visit([&](auto& l) { l.Init(rng); }, impl_);
}

template <typename T>
BasicTensor<T> BasicLayer<T>::Infer(const BasicTensor<T>& x) const {
  return std::visit([&](const auto& l) { return l.Infer(x); }, impl_);
}

template <typename T>
BasicTensor<T> BasicLayer<T>::Forward(const BasicTensor<T>& x, Mode mode) {
  return std::visit([&](auto& l) { return l.Forward(x, mode); }, impl_);
}

template <typename T>
BasicTensor<T> BasicLayer<T>::Backward(const BasicTensor<T>& g,
                                       bool param_grads) {
  return std::visit([&](auto& l) { return l.Backward(g, param_grads); },
                    impl_);
}

template <typename T>
void BasicLayer<T>::ClearCache() {
  std::visit([](auto& l) { l.ClearCache(); }, impl_);
}

template <typename T>
std::vector<Param<T>*> BasicLayer<T>::Params() {
  return std::visit([](auto& l) { return l.Params(); }, impl_);
}

template <typename T>
std::vector<const Param<T>*> BasicLayer<T>::Params() const {
  return std::visit([](const auto& l) { return l.Params(); }, impl_);
}

template <typename T>
std::vector<BasicTensor<T>*> BasicLayer<T>::Buffers() {
  return std::visit([](auto& l) { return l.Buffers(); }, impl_);
}

template <typename T>
std::vector<const BasicTensor<T>*> BasicLayer<T>::Buffers() const {
  return std::visit([](const auto& l) { return l.Buffers(); }, impl_);
}

template <typename T>
BasicLayer<T> BasicLayer<T>::FromDescriptor(
    LayerKind kind, const std::vector<std::uint32_t>& dims) {
  auto need = [&](std::size_t n) {
    if (dims.size() != n) {
      throw FormatError(LayerKindName(kind) + " descriptor has rank " +
                        std::to_string(dims.size()) + ", expected " +
                        std::to_string(n));
    }
  };
  switch (kind) {
    case LayerKind::kDense:
      need(2);
      return Dense(dims[0], dims[1]);
    case LayerKind::kConv2d:
      need(5);
      return Conv2d(dims[0], dims[1], dims[2]);
    case LayerKind::kRelu:
      return Relu();
    case LayerKind::kFlatten:
      return Flatten();
    case LayerKind::kScaleNorm:
      if (dims.empty()) throw FormatError("scalenorm descriptor is empty");
      return ScaleNorm(dims[0]);
  }
  throw FormatError("unknown layer kind tag " +
                    std::to_string(static_cast<int>(kind)));
}

template <typename T>
Shape BasicLayer<T>::InputShapeFromDescriptor(
    LayerKind kind, const std::vector<std::uint32_t>& dims) {
  switch (kind) {
    case LayerKind::kDense:
      return {dims.at(0)};
    case LayerKind::kConv2d:
      return {dims.at(0), dims.at(3), dims.at(4)};
    default:
      return Shape(dims.begin(), dims.end());
  }
}

template class DenseLayer<float>;
template class DenseLayer<double>;
template class Conv2dLayer<float>;
template class Conv2dLayer<double>;
template class ReluLayer<float>;
template class ReluLayer<double>;
template class FlattenLayer<float>;
template class FlattenLayer<double>;
template class ScaleNormLayer<float>;
template class ScaleNormLayer<double>;
template class BasicLayer<float>;
template class BasicLayer<double>;

}  // namespace splitmark::nn
