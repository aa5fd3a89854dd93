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


#ifndef SPLITMARK_WATERMARK_FEATURE_WATERMARK_H_
#define SPLITMARK_WATERMARK_FEATURE_WATERMARK_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitmark/common/binary_io.h"
#include "splitmark/nn/model.h"

namespace splitmark::wm {

inline constexpr std::size_t kDefaultBits = 128;

// The server's secret: embedding matrix M (d x N, row-major), signature bits
// b, and the top-model layers whose scalenorm scale vectors are concatenated
// into the watermarked weight vector w (length d). Bits are embedded as
// signs s = 2b - 1 of the responses y = w^T M.
struct FeatureWatermark {
  std::uint64_t seed = 0;
  std::size_t num_bits = 0;
  std::vector<std::uint16_t> target_layers;
  double alpha = 0.0;
  std::size_t dim = 0;
  std::vector<float> matrix;        // d * N
  std::vector<std::uint8_t> bits;   // N values in {0, 1}

  float m(std::size_t row, std::size_t col) const {
    return matrix[row * num_bits + col];
  }
  std::vector<double> Signs() const;
  // Throws ConfigError on empty/inconsistent contents or a zero column.
  void Validate() const;
};

// M ~ N(0, 1) and b ~ Bernoulli(1/2), both from `seed`. Every target layer
// must be a scalenorm layer of `top`.
FeatureWatermark GenerateFeatureWatermark(
    std::uint64_t seed, std::size_t num_bits,
    std::vector<std::uint16_t> target_layers, const nn::Model& top,
    double alpha);

// Set when d < N / 4: too few scale entries to carry N signs comfortably.
std::optional<std::string> CapacityWarning(const FeatureWatermark& fw);

// Concatenated gamma vectors of the target layers, in the listed order.
// Throws VerificationError if a layer is missing or not a scalenorm layer.
std::vector<double> ExtractWeights(const nn::Model& top,
                                   const FeatureWatermark& fw);

// y_i = w . M[:, i]. Throws ShapeError if w.size() != d.
std::vector<double> WmResponse(std::span<const double> w,
                               const FeatureWatermark& fw);

struct WmLossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d/dw, length d
};

// sum_i max(1 - s_i y_i, 0); the subgradient at the hinge point is 0.
WmLossResult WmLoss(std::span<const double> w, const FeatureWatermark& fw);

// Fraction of bits with s_i y_i > 0, evaluated as 1 - (failed bits) / N.
double ThetaF(std::span<const double> response, std::span<const double> signs);

double VerifyTop(const nn::Model& top, const FeatureWatermark& fw);

// Adds alpha * dL_WM/dgamma to the gradients of the target scale vectors and
// returns the unscaled L_WM.
double AccumulateWatermarkGradient(nn::Model& top, const FeatureWatermark& fw);

// SMW1 file, little-endian:
//   "SMW1" | version u16 = 1 | seed u64 | N u32 | alpha f32 |
//   layer count u16 | layer ids u16[] | d u32 | M f32[d*N] row-major |
//   bits packed LSB-first, ceil(N/8) bytes | CRC-32 u32.
inline constexpr std::uint16_t kWatermarkVersion = 1;

io::Bytes EncodeWatermark(const FeatureWatermark& fw);
FeatureWatermark DecodeWatermark(std::span<const std::uint8_t> bytes);
void SaveWatermark(const FeatureWatermark& fw,
                   const std::filesystem::path& path);
FeatureWatermark LoadWatermark(const std::filesystem::path& path);

}  // namespace splitmark::wm

#endif  // SPLITMARK_WATERMARK_FEATURE_WATERMARK_H_
