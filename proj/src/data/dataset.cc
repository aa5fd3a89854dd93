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


#include "splitmark/data/dataset.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "splitmark/common/errors.h"
#include "splitmark/common/random.h"

namespace splitmark::data {

namespace {
constexpr std::string_view kMagic = "SMD1";
}  // namespace

LabeledDataset::LabeledDataset(nn::Tensor samples, std::vector<ClassId> labels,
                               std::size_t num_classes)
    : samples_(std::move(samples)),
      labels_(std::move(labels)),
      num_classes_(num_classes) {
  if (samples_.rank() != 4) {
    throw ShapeError("dataset samples must be (n, c, h, w), got " +
                     nn::ShapeString(samples_.shape()));
  }
  if (samples_.dim(0) != labels_.size()) {
    throw DataError("dataset has " + std::to_string(samples_.dim(0)) +
                    " samples but " + std::to_string(labels_.size()) +
                    " labels");
  }
  if (num_classes_ == 0) throw DataError("dataset needs at least one class");
  for (ClassId y : labels_) {
    if (y >= num_classes_) {
      throw DataError("label " + std::to_string(y) + " >= num_classes " +
                      std::to_string(num_classes_));
    }
  }
}

nn::Shape LabeledDataset::sample_shape() const {
  return {channels(), height(), width()};
}

std::span<const float> LabeledDataset::sample_span(std::size_t i) const {
  return samples_.data().subspan(i * sample_size(), sample_size());
}

std::span<float> LabeledDataset::mutable_sample(std::size_t i) {
  return samples_.data().subspan(i * sample_size(), sample_size());
}

void LabeledDataset::set_label(std::size_t i, ClassId y) {
  if (y >= num_classes_) throw DataError("label out of range");
  labels_.at(i) = y;
}

nn::Tensor LabeledDataset::Sample(std::size_t i) const {
  const auto s = sample_span(i);
  return nn::Tensor(sample_shape(), std::vector<float>(s.begin(), s.end()));
}

nn::Tensor LabeledDataset::Gather(std::span<const std::size_t> indices) const {
  nn::Tensor out({indices.size(), channels(), height(), width()});
  const std::size_t stride = sample_size();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto s = sample_span(indices[k]);
    std::copy(s.begin(), s.end(), out.raw() + k * stride);
  }
  return out;
}

std::vector<ClassId> LabeledDataset::GatherLabels(
    std::span<const std::size_t> indices) const {
  std::vector<ClassId> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) out[k] = labels_[indices[k]];
  return out;
}

LabeledDataset LabeledDataset::Subset(
    std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DataError("empty subset");
  return LabeledDataset(Gather(indices), GatherLabels(indices), num_classes_);
}

void DatasetSpec::Validate(std::size_t min_side) const {
  if (num_classes == 0 || samples_per_class == 0 || channels == 0) {
    throw ConfigError("dataset counts must be positive");
  }
  if (num_classes > 0xffff) throw ConfigError("too many classes");
  if (height < min_side || width < min_side) {
    throw ConfigError("images must be at least " + std::to_string(min_side) +
                      " pixels per side");
  }
  if (!(separation >= 0.0) || !(noise >= 0.0)) {
    throw ConfigError("separation and noise must be non-negative");
  }
}

LabeledDataset GenerateSynthetic(const DatasetSpec& spec) {
  spec.Validate();
  const std::size_t c = spec.channels;
  const std::size_t h = spec.height;
  const std::size_t w = spec.width;
  const std::size_t plane = h * w;
  const std::size_t sample = c * plane;

  // Per-class templates, unit pixel standard deviation around zero.
  std::vector<std::vector<double>> templates(spec.num_classes);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    Rng rng(DeriveSeed(spec.seed, {kStreamData, 0, k}));
    std::uniform_int_distribution<int> freq(0, 2);
    std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
    std::uniform_real_distribution<double> amp(0.5, 1.0);
    auto& t = templates[k];
    t.assign(sample, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (int j = 0; j < 3; ++j) {
        int fx = 0;
        int fy = 0;
        while (fx == 0 && fy == 0) {
          fx = freq(rng);
          fy = freq(rng);
        }
        const double ph = phase(rng);
        const double a = amp(rng);
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double arg = 2 * std::numbers::pi *
                                   (fx * double(x) / double(w) +
                                    fy * double(y) / double(h)) +
                               ph;
            t[ch * plane + y * w + x] += a * std::cos(arg);
          }
        }
      }
    }
    const double mean = std::accumulate(t.begin(), t.end(), 0.0) / sample;
    double var = 0.0;
    for (double v : t) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / sample);
    for (double& v : t) v = sd > 0 ? (v - mean) / sd : 0.0;
  }

  const std::size_t n = spec.num_classes * spec.samples_per_class;
  nn::Tensor samples({n, c, h, w});
  std::vector<ClassId> labels(n);
  Rng rng(DeriveSeed(spec.seed, {kStreamData, 1}));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::size_t i = 0;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++i) {
      labels[i] = static_cast<ClassId>(k);
      float* out = samples.raw() + i * sample;
      for (std::size_t p = 0; p < sample; ++p) {
        const double v = 0.5 + spec.separation * templates[k][p] +
                         spec.noise * noise(rng);
        out[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return LabeledDataset(std::move(samples), std::move(labels),
                        spec.num_classes);
}

std::vector<LabeledDataset> StratifiedSplit(
    const LabeledDataset& ds, std::span<const std::size_t> per_class_counts,
    std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[ds.label(i)].push_back(i);
  }
  const std::size_t need = std::accumulate(per_class_counts.begin(),
                                           per_class_counts.end(),
                                           std::size_t{0});
  std::vector<std::vector<std::size_t>> parts(per_class_counts.size());
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    if (idx.size() < need) {
      throw DataError("class " + std::to_string(k) + " has " +
                      std::to_string(idx.size()) + " samples, split needs " +
                      std::to_string(need));
    }
    Rng rng(DeriveSeed(seed, {kStreamPartition, k}));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t off = 0;
    for (std::size_t p = 0; p < per_class_counts.size(); ++p) {
      parts[p].insert(parts[p].end(), idx.begin() + off,
                      idx.begin() + off + per_class_counts[p]);
      off += per_class_counts[p];
    }
  }
  std::vector<LabeledDataset> out;
  for (auto& p : parts) {
    std::sort(p.begin(), p.end());
    out.push_back(ds.Subset(p));
  }
  return out;
}

std::vector<LabeledDataset> RandomPartition(const LabeledDataset& ds,
                                            std::size_t parts,
                                            std::uint64_t seed) {
  if (parts == 0 || parts > ds.size()) {
    throw ConfigError("cannot partition " + std::to_string(ds.size()) +
                      " samples into " + std::to_string(parts) + " parts");
  }
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(DeriveSeed(seed, {kStreamPartition}));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<LabeledDataset> out;
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t len = ds.size() / parts + (p < ds.size() % parts);
    std::vector<std::size_t> part(idx.begin() + off, idx.begin() + off + len);
    std::sort(part.begin(), part.end());
    out.push_back(ds.Subset(part));
    off += len;
  }
  return out;
}

io::Bytes EncodeDataset(const LabeledDataset& ds) {
  io::ByteWriter w(kMagic, kDatasetVersion);
  w.u16(static_cast<std::uint16_t>(ds.num_classes()));
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.channels()));
  w.u32(static_cast<std::uint32_t>(ds.height()));
  w.u32(static_cast<std::uint32_t>(ds.width()));
  w.f32s(ds.samples().data());
  for (ClassId y : ds.labels()) w.u16(y);
  return std::move(w).Finish();
}

LabeledDataset DecodeDataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, kMagic, kDatasetVersion);
  const std::size_t classes = r.u16();
  const std::size_t n = r.u32();
  const std::size_t c = r.u32();
  const std::size_t h = r.u32();
  const std::size_t w = r.u32();
  if (n == 0 || c == 0 || h == 0 || w == 0) {
    throw FormatError("dataset header has a zero dimension");
  }
  // Size check before allocating: payload must match the header exactly.
  const std::size_t expect = n * c * h * w * 4 + n * 2;
  if (r.remaining() != expect) {
    throw FormatError("dataset payload is " + std::to_string(r.remaining()) +
                      " bytes, header implies " + std::to_string(expect));
  }
  nn::Tensor samples({n, c, h, w});
  r.f32s(samples.data());
  std::vector<ClassId> labels(n);
  for (auto& y : labels) y = r.u16();
  r.ExpectEnd();
  try {
    return LabeledDataset(std::move(samples), std::move(labels), classes);
  } catch (const DataError& e) {
    throw FormatError(std::string("invalid dataset contents: ") + e.what());
  }
}

void SaveDataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  io::WriteFile(path, EncodeDataset(ds));
}

LabeledDataset LoadDataset(const std::filesystem::path& path) {
  return DecodeDataset(io::ReadFile(path));
}

}  // namespace splitmark::data
