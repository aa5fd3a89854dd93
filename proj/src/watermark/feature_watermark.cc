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


#include "splitmark/watermark/feature_watermark.h"

#include <cmath>
#include <random>

#include "splitmark/common/errors.h"
#include "splitmark/common/random.h"

namespace splitmark::wm {

namespace {

constexpr std::string_view kMagic = "SMW1";

nn::ScaleNormLayer<float>* TargetLayer(nn::Model& top, std::uint16_t id) {
  if (id >= top.num_layers()) return nullptr;
  return top.layer(id).AsScaleNorm();
}

const nn::ScaleNormLayer<float>* TargetLayer(const nn::Model& top,
                                             std::uint16_t id) {
  if (id >= top.num_layers()) return nullptr;
  return top.layer(id).AsScaleNorm();
}

}  // namespace

std::vector<double> FeatureWatermark::Signs() const {
  std::vector<double> s(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) s[i] = 2.0 * bits[i] - 1.0;
  return s;
}

void FeatureWatermark::Validate() const {
  if (num_bits == 0) throw ConfigError("watermark needs at least one bit");
  if (dim == 0) throw ConfigError("watermark dimension is zero");
  if (target_layers.empty()) throw ConfigError("no watermark target layers");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw ConfigError("watermark alpha must be finite and >= 0");
  }
  if (matrix.size() != dim * num_bits || bits.size() != num_bits) {
    throw ConfigError("watermark matrix/bits sizes disagree with (d, N)");
  }
  for (std::uint8_t b : bits) {
    if (b > 1) throw ConfigError("signature bit is not 0/1");
  }
  for (std::size_t i = 0; i < num_bits; ++i) {
    bool nonzero = false;
    for (std::size_t j = 0; j < dim && !nonzero; ++j) nonzero = m(j, i) != 0;
    if (!nonzero) {
      throw ConfigError("embedding matrix column " + std::to_string(i) +
                        " is zero");
    }
  }
}

FeatureWatermark GenerateFeatureWatermark(
    std::uint64_t seed, std::size_t num_bits,
    std::vector<std::uint16_t> target_layers, const nn::Model& top,
    double alpha) {
  if (target_layers.empty()) throw ConfigError("no watermark target layers");
  FeatureWatermark fw;
  fw.seed = seed;
  fw.num_bits = num_bits;
  fw.alpha = alpha;
  for (std::uint16_t id : target_layers) {
    const auto* sn = TargetLayer(top, id);
    if (sn == nullptr) {
      throw ConfigError("watermark target layer " + std::to_string(id) +
                        " is not a scalenorm layer of the top model");
    }
    fw.dim += sn->channels();
  }
  fw.target_layers = std::move(target_layers);
  if (num_bits == 0) throw ConfigError("watermark needs at least one bit");

  Rng rng(DeriveSeed(seed, {kStreamWatermark}));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::bernoulli_distribution bit(0.5);
  fw.matrix.resize(fw.dim * num_bits);
  for (float& v : fw.matrix) v = normal(rng);
  fw.bits.resize(num_bits);
  for (auto& b : fw.bits) b = bit(rng) ? 1 : 0;
  fw.Validate();
  return fw;
}

std::optional<std::string> CapacityWarning(const FeatureWatermark& fw) {
  if (4 * fw.dim >= fw.num_bits) return std::nullopt;
  return "watermark capacity: d = " + std::to_string(fw.dim) +
         " scale entries for N = " + std::to_string(fw.num_bits) +
         " bits (d < N/4)";
}

std::vector<double> ExtractWeights(const nn::Model& top,
                                   const FeatureWatermark& fw) {
  std::vector<double> w;
  w.reserve(fw.dim);
  for (std::uint16_t id : fw.target_layers) {
    const auto* sn = TargetLayer(top, id);
    if (sn == nullptr) {
      throw VerificationError("top model has no scalenorm layer " +
                              std::to_string(id));
    }
    for (float g : sn->gamma().value.data()) w.push_back(g);
  }
  if (w.size() != fw.dim) {
    throw VerificationError("target layers hold " + std::to_string(w.size()) +
                            " scale entries, watermark expects " +
                            std::to_string(fw.dim));
  }
  return w;
}

std::vector<double> WmResponse(std::span<const double> w,
                               const FeatureWatermark& fw) {
  if (w.size() != fw.dim) {
    throw ShapeError("watermark weight vector has length " +
                     std::to_string(w.size()) + ", expected " +
                     std::to_string(fw.dim));
  }
  std::vector<double> y(fw.num_bits, 0.0);
  for (std::size_t j = 0; j < fw.dim; ++j) {
    const float* row = fw.matrix.data() + j * fw.num_bits;
    for (std::size_t i = 0; i < fw.num_bits; ++i) y[i] += w[j] * row[i];
  }
  return y;
}

WmLossResult WmLoss(std::span<const double> w, const FeatureWatermark& fw) {
  const auto y = WmResponse(w, fw);
  const auto s = fw.Signs();
  WmLossResult r;
  r.grad.assign(fw.dim, 0.0);
  std::vector<double> coef(fw.num_bits, 0.0);
  for (std::size_t i = 0; i < fw.num_bits; ++i) {
    const double margin = 1.0 - s[i] * y[i];
    if (margin > 0.0) {
      r.loss += margin;
      coef[i] = -s[i];
    }
  }
  for (std::size_t j = 0; j < fw.dim; ++j) {
    const float* row = fw.matrix.data() + j * fw.num_bits;
    double g = 0.0;
    for (std::size_t i = 0; i < fw.num_bits; ++i) g += coef[i] * row[i];
    r.grad[j] = g;
  }
  return r;
}

double ThetaF(std::span<const double> response, std::span<const double> signs) {
  if (response.size() != signs.size() || response.empty()) {
    throw ShapeError("response and signature lengths differ");
  }
  // 1 - (1/N) sum H(-s_i y_i) with H(0) = 1, so a zero response fails.
  std::size_t failed = 0;
  for (std::size_t i = 0; i < response.size(); ++i) {
    failed += -signs[i] * response[i] >= 0.0;
  }
  return 1.0 - static_cast<double>(failed) /
                   static_cast<double>(response.size());
}

double VerifyTop(const nn::Model& top, const FeatureWatermark& fw) {
  const auto w = ExtractWeights(top, fw);
  return ThetaF(WmResponse(w, fw), fw.Signs());
}

double AccumulateWatermarkGradient(nn::Model& top, const FeatureWatermark& fw) {
  const auto w = ExtractWeights(top, fw);
  const auto r = WmLoss(w, fw);
  std::size_t off = 0;
  for (std::uint16_t id : fw.target_layers) {
    auto& gamma = TargetLayer(top, id)->gamma();
    for (float& g : gamma.grad.data()) {
      g += static_cast<float>(fw.alpha * r.grad[off++]);
    }
  }
  return r.loss;
}

io::Bytes EncodeWatermark(const FeatureWatermark& fw) {
  fw.Validate();
  io::ByteWriter w(kMagic, kWatermarkVersion);
  w.u64(fw.seed);
  w.u32(static_cast<std::uint32_t>(fw.num_bits));
  w.f32(static_cast<float>(fw.alpha));
  w.u16(static_cast<std::uint16_t>(fw.target_layers.size()));
  for (std::uint16_t id : fw.target_layers) w.u16(id);
  w.u32(static_cast<std::uint32_t>(fw.dim));
  w.f32s(fw.matrix);
  std::vector<std::uint8_t> packed((fw.num_bits + 7) / 8, 0);
  for (std::size_t i = 0; i < fw.num_bits; ++i) {
    packed[i / 8] |= static_cast<std::uint8_t>(fw.bits[i] << (i % 8));
  }
  w.raw(packed);
  return std::move(w).Finish();
}

FeatureWatermark DecodeWatermark(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, kMagic, kWatermarkVersion);
  FeatureWatermark fw;
  fw.seed = r.u64();
  fw.num_bits = r.u32();
  fw.alpha = r.f32();
  fw.target_layers.resize(r.u16());
  for (auto& id : fw.target_layers) id = r.u16();
  fw.dim = r.u32();
  const std::size_t packed = (fw.num_bits + 7) / 8;
  if (fw.num_bits == 0 || fw.dim == 0 ||
      r.remaining() != fw.dim * fw.num_bits * 4 + packed) {
    throw FormatError("watermark payload size does not match (d, N)");
  }
  fw.matrix.resize(fw.dim * fw.num_bits);
  r.f32s(fw.matrix);
  const auto raw = r.raw(packed);
  fw.bits.resize(fw.num_bits);
  for (std::size_t i = 0; i < fw.num_bits; ++i) {
    fw.bits[i] = (raw[i / 8] >> (i % 8)) & 1u;
  }
  r.ExpectEnd();
  try {
    fw.Validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid watermark: ") + e.what());
  }
  return fw;
}

void SaveWatermark(const FeatureWatermark& fw,
                   const std::filesystem::path& path) {
  io::WriteFile(path, EncodeWatermark(fw));
}

FeatureWatermark LoadWatermark(const std::filesystem::path& path) {
  return DecodeWatermark(io::ReadFile(path));
}

}  // namespace splitmark::wm
