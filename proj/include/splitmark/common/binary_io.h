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

#ifndef SPLITMARK_COMMON_BINARY_IO_H_
#define SPLITMARK_COMMON_BINARY_IO_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace splitmark::io {

using Bytes = std::vector<std::uint8_t>;

// IEEE 802.3 CRC-32, identical to zlib's crc32().
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Little-endian append-only encoder. Every SplitMark file starts with a
// four-byte magic and a u16 version, and ends with the CRC-32 of all
// preceding bytes; Finish() appends that trailer.
class ByteWriter {
 public:
  ByteWriter(std::string_view magic, std::uint16_t version);

  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void f32s(std::span<const float> values);
  void raw(std::span<const std::uint8_t> bytes);

  Bytes Finish() &&;

 private:
  Bytes buf_;
};

// Bounds-checked reader over a sealed buffer. The constructor validates
// magic, version and CRC, in that order, so a wrong version is reported as
// UnsupportedVersionError even when the CRC would also fail.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string_view magic,
             std::uint16_t version);

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  void f32s(std::span<float> out);
  std::span<const std::uint8_t> raw(std::size_t n);

  std::size_t remaining() const { return end_ - pos_; }
  // Throws FormatError unless every payload byte has been consumed.
  void ExpectEnd() const;

 private:
  const std::uint8_t* Take(std::size_t n);

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

Bytes ReadFile(const std::filesystem::path& path);
void WriteFile(const std::filesystem::path& path,
               std::span<const std::uint8_t> bytes);

// Peeks the four magic bytes of a buffer; empty view if too short.
std::string_view PeekMagic(std::span<const std::uint8_t> bytes);

}  // namespace splitmark::io

#endif  // SPLITMARK_COMMON_BINARY_IO_H_
