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


#include "splitmark/nn/checkpoint.h"

#include <algorithm>
#include <string>
#include <vector>

#include "splitmark/common/errors.h"

namespace splitmark::nn {

namespace {
constexpr std::string_view kMagic(kCheckpointMagic, 4);
}  // namespace

io::Bytes EncodeCheckpoint(const Model& model) {
  if (model.num_layers() > 0xffff) {
    throw FormatError("too many layers for SMK1");
  }
  io::ByteWriter w(kMagic, kCheckpointVersion);
  w.u16(static_cast<std::uint16_t>(model.num_layers()));
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const Layer& layer = model.layer(i);
    const auto dims = layer.Descriptor();
    w.u8(static_cast<std::uint8_t>(layer.kind()));
    w.u8(static_cast<std::uint8_t>(dims.size()));
    for (std::uint32_t d : dims) w.u32(d);
    for (const Param<float>* p : layer.Params()) w.f32s(p->value.data());
    for (const Tensor* b : layer.Buffers()) w.f32s(b->data());
  }
  return std::move(w).Finish();
}

Model DecodeCheckpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, kMagic, kCheckpointVersion);
  const std::size_t count = r.u16();
  if (count == 0) throw FormatError("checkpoint has no layers");

  std::vector<Layer> layers;
  std::vector<std::vector<float>> states;
  Shape input;
  Shape shape;
  for (std::size_t i = 0; i < count; ++i) {
    const auto kind = static_cast<LayerKind>(r.u8());
    const std::size_t rank = r.u8();
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    Layer layer = Layer::FromDescriptor(kind, dims);
    if (i == 0) {
      input = Layer::InputShapeFromDescriptor(kind, dims);
      shape = input;
    }
    // Bind on a scratch copy to learn state sizes before reading floats.
    Layer probe = layer;
    try {
      shape = probe.Bind(shape);
    } catch (const ShapeError& e) {
      throw FormatError("layer " + std::to_string(i) + ": " + e.what());
    }
    if (probe.Descriptor() != dims) {
      throw FormatError("layer " + std::to_string(i) +
                        " descriptor is inconsistent with its input shape");
    }
    std::size_t floats = 0;
    for (const auto* p : probe.Params()) floats += p->value.size();
    for (const auto* b : probe.Buffers()) floats += b->size();
    std::vector<float> state(floats);
    r.f32s(state);
    layers.push_back(std::move(layer));
    states.push_back(std::move(state));
  }
  r.ExpectEnd();

  Model model(input, std::move(layers));
  for (std::size_t i = 0; i < count; ++i) {
    const auto& state = states[i];
    std::size_t off = 0;
    Layer& layer = model.layer(i);
    for (Param<float>* p : layer.Params()) {
      std::copy_n(state.begin() + off, p->value.size(), p->value.raw());
      off += p->value.size();
    }
    for (Tensor* b : layer.Buffers()) {
      std::copy_n(state.begin() + off, b->size(), b->raw());
      off += b->size();
    }
  }
  for (const Tensor* t : model.StateTensors()) {
    if (!t->AllFinite()) throw FormatError("checkpoint holds non-finite state");
  }
  return model;
}

void SaveCheckpoint(const Model& model, const std::filesystem::path& path) {
  io::WriteFile(path, EncodeCheckpoint(model));
}

Model LoadCheckpoint(const std::filesystem::path& path) {
  return DecodeCheckpoint(io::ReadFile(path));
}

}  // namespace splitmark::nn
