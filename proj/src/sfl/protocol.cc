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


#include "splitmark/sfl/protocol.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "splitmark/common/errors.h"
#include "splitmark/nn/loss.h"

namespace splitmark::sfl {

namespace {

constexpr std::string_view kMagic = "SMK1";

void PutTensor(io::ByteWriter& w, const nn::Tensor& t) {
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.f32s(t.data());
}

nn::Tensor GetTensor(io::ByteReader& r) {
  const std::size_t rank = r.u8();
  if (rank == 0) throw FormatError("message tensor has rank 0");
  nn::Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0) throw FormatError("message tensor has a zero dim");
    n *= d;
  }
  if (n * 4 > r.remaining()) throw FormatError("message tensor truncated");
  nn::Tensor t(shape);
  r.f32s(t.data());
  return t;
}

io::ByteReader OpenMessage(std::span<const std::uint8_t> bytes,
                           std::uint8_t want) {
  io::ByteReader r(bytes, kMagic, kMessageVersion);
  const std::uint8_t tag = r.u8();
  if (tag != want) {
    throw FormatError("message tag " + std::to_string(tag) + ", expected " +
                      std::to_string(want));
  }
  return r;
}

}  // namespace

void DpConfig::Validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("DP sigma must be finite and >= 0");
  }
  if (sigma > 0.0 && !(clip > 0.0 && std::isfinite(clip))) {
    throw ConfigError("DP clip bound must be positive");
  }
}

ForwardMsg ClientForward(nn::Model& bottom, const nn::Tensor& batch,
                         std::vector<ClassId> labels, ClientId client,
                         std::uint32_t round, const DpConfig& dp, Rng* rng) {
  dp.Validate();
  if (batch.rank() == 0 || batch.dim(0) != labels.size()) {
    throw ShapeError("batch and label counts differ");
  }
  ForwardMsg msg{client, round, bottom.Forward(batch, nn::Mode::kTrain),
                 std::move(labels)};
  if (dp.sigma > 0.0) {
    if (rng == nullptr) throw ConfigError("DP noise needs a random stream");
    std::normal_distribution<double> noise(0.0, dp.sigma);
    const double c = dp.clip;
    for (float& v : msg.activations.data()) {
      v = static_cast<float>(std::clamp<double>(v, -c, c) + noise(*rng));
    }
  }
  return msg;
}

BackwardMsg ServerStep(nn::Model& top, const ForwardMsg& msg) {
  if (msg.activations.rank() == 0 ||
      msg.activations.dim(0) != msg.labels.size()) {
    throw ShapeError("forward message activations and labels disagree");
  }
  const nn::Tensor logits = top.Forward(msg.activations, nn::Mode::kTrain);
  auto ce = nn::SoftmaxCrossEntropy(logits, msg.labels);
  BackwardMsg out;
  out.client = msg.client;
  out.round = msg.round;
  out.loss = ce.loss;
  out.grad = top.Backward(ce.grad);
  return out;
}

void ClientBackward(nn::Model& bottom, const BackwardMsg& msg) {
  if (!bottom.has_cache()) {
    throw StateError("client backward without a matching forward");
  }
  bottom.Backward(msg.grad);
}

io::Bytes EncodeMessage(const ForwardMsg& msg) {
  io::ByteWriter w(kMagic, kMessageVersion);
  w.u8(kForwardTag);
  w.u32(msg.client);
  w.u32(msg.round);
  PutTensor(w, msg.activations);
  w.u32(static_cast<std::uint32_t>(msg.labels.size()));
  for (ClassId y : msg.labels) w.u16(y);
  return std::move(w).Finish();
}

io::Bytes EncodeMessage(const BackwardMsg& msg) {
  io::ByteWriter w(kMagic, kMessageVersion);
  w.u8(kBackwardTag);
  w.u32(msg.client);
  w.u32(msg.round);
  PutTensor(w, msg.grad);
  w.f64(msg.loss);
  return std::move(w).Finish();
}

std::uint8_t MessageTag(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, kMagic, kMessageVersion);
  const std::uint8_t tag = r.u8();
  if (tag != kForwardTag && tag != kBackwardTag) {
    throw FormatError("unknown message tag " + std::to_string(tag));
  }
  return tag;
}

ForwardMsg DecodeForward(std::span<const std::uint8_t> bytes) {
  auto r = OpenMessage(bytes, kForwardTag);
  ForwardMsg m;
  m.client = r.u32();
  m.round = r.u32();
  m.activations = GetTensor(r);
  const std::size_t n = r.u32();
  if (n != m.activations.dim(0) || r.remaining() != 2 * n) {
    throw FormatError("forward message label count mismatch");
  }
  m.labels.resize(n);
  for (auto& y : m.labels) y = r.u16();
  r.ExpectEnd();
  return m;
}

BackwardMsg DecodeBackward(std::span<const std::uint8_t> bytes) {
  auto r = OpenMessage(bytes, kBackwardTag);
  BackwardMsg m;
  m.client = r.u32();
  m.round = r.u32();
  m.grad = GetTensor(r);
  m.loss = r.f64();
  r.ExpectEnd();
  return m;
}

nn::Model FedAvg(std::span<const nn::Model* const> models,
                 std::span<const double> weights) {
  if (models.empty()) throw AggregationError("no models to aggregate");
  if (weights.size() != models.size()) {
    throw AggregationError("one weight per model required");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw AggregationError("aggregation weights must be finite and >= 0");
    }
    total += w;
  }
  if (total <= 0.0) throw AggregationError("aggregation weights are all zero");
  for (const nn::Model* m : models) {
    if (!m->SameArchitecture(*models[0])) {
      throw AggregationError("cannot average models of different shapes");
    }
  }

  nn::Model out = *models[0];
  out.ClearCache();
  out.ZeroGrad();
  auto dst = out.StateTensors();
  std::vector<std::vector<const nn::Tensor*>> src;
  for (const nn::Model* m : models) src.push_back(m->StateTensors());
  std::vector<double> acc;
  for (std::size_t t = 0; t < dst.size(); ++t) {
    acc.assign(dst[t]->size(), 0.0);
    for (std::size_t k = 0; k < models.size(); ++k) {
      const double w = weights[k] / total;
      if (w == 0.0) continue;
      const auto v = src[k][t]->data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * v[i];
    }
    auto d = dst[t]->data();
    for (std::size_t i = 0; i < acc.size(); ++i) {
      d[i] = static_cast<float>(acc[i]);
    }
  }
  return out;
}

}  // namespace splitmark::sfl
