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


#ifndef SPLITMARK_DATA_DATASET_H_
#define SPLITMARK_DATA_DATASET_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "splitmark/common/binary_io.h"
#include "splitmark/common/types.h"
#include "splitmark/nn/tensor.h"

namespace splitmark::data {

// Images (n, c, h, w) in [0, 1] with one label per image.
class LabeledDataset {
 public:
  LabeledDataset(nn::Tensor samples, std::vector<ClassId> labels,
                 std::size_t num_classes);

  std::size_t size() const { return labels_.size(); }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t channels() const { return samples_.dim(1); }
  std::size_t height() const { return samples_.dim(2); }
  std::size_t width() const { return samples_.dim(3); }
  // Per-sample shape (c, h, w).
  nn::Shape sample_shape() const;
  std::size_t sample_size() const { return samples_.size() / size(); }

  const nn::Tensor& samples() const { return samples_; }
  const std::vector<ClassId>& labels() const { return labels_; }
  ClassId label(std::size_t i) const { return labels_.at(i); }

  std::span<const float> sample_span(std::size_t i) const;
  std::span<float> mutable_sample(std::size_t i);
  void set_label(std::size_t i, ClassId y);

  nn::Tensor Sample(std::size_t i) const;
  // Stacks the given samples into a (k, c, h, w) batch.
  nn::Tensor Gather(std::span<const std::size_t> indices) const;
  std::vector<ClassId> GatherLabels(std::span<const std::size_t> indices) const;
  LabeledDataset Subset(std::span<const std::size_t> indices) const;

  friend bool operator==(const LabeledDataset&,
                         const LabeledDataset&) = default;

 private:
  nn::Tensor samples_;
  std::vector<ClassId> labels_;
  std::size_t num_classes_;
};

// Parameters of the synthetic image generator.
struct DatasetSpec {
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 200;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  // Amplitude of the per-class template around mid-grey.
  double separation = 0.08;
  // Standard deviation of the i.i.d. pixel noise.
  double noise = 0.07;
  std::uint64_t seed = 1;

  // Throws ConfigError on non-positive counts or images smaller than
  // `min_side` in either spatial dim.
  void Validate(std::size_t min_side = 3) const;
};

// Each class gets a fixed low-frequency template (a sum of a few random 2-D
// cosines per channel); samples are template plus Gaussian noise, clipped
// to [0, 1]. Output is class-major: class 0 samples first.
LabeledDataset GenerateSynthetic(const DatasetSpec& spec);

// Splits indices of `ds` per class into consecutive groups with the given
// per-class counts, after a seeded shuffle within each class.
std::vector<LabeledDataset> StratifiedSplit(
    const LabeledDataset& ds, std::span<const std::size_t> per_class_counts,
    std::uint64_t seed);

// Uniform random partition into `parts` nearly equal shards.
std::vector<LabeledDataset> RandomPartition(const LabeledDataset& ds,
                                            std::size_t parts,
                                            std::uint64_t seed);

// SMD1 dataset file, integers little-endian:
//   "SMD1" | version u16 = 1 | num_classes u16 | n u32 | c u32 | h u32 |
//   w u32 | samples f32[n*c*h*w] | labels u16[n] | CRC-32 u32.
inline constexpr std::uint16_t kDatasetVersion = 1;

io::Bytes EncodeDataset(const LabeledDataset& ds);
LabeledDataset DecodeDataset(std::span<const std::uint8_t> bytes);
void SaveDataset(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset LoadDataset(const std::filesystem::path& path);

}  // namespace splitmark::data

#endif  // SPLITMARK_DATA_DATASET_H_
