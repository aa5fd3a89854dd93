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

#include "splitmark/common/binary_io.h"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "splitmark/common/errors.h"

namespace splitmark::io {

namespace {

constexpr std::size_t kMagicLen = 4;
constexpr std::size_t kHeaderLen = kMagicLen + 2;
constexpr std::size_t kTrailerLen = 4;

template <typename U>
void PutLe(Bytes& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

template <typename U>
U GetLe(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(p[i]) << (8 * i);
  }
  return v;
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large buffers.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

ByteWriter::ByteWriter(std::string_view magic, std::uint16_t version) {
  if (magic.size() != kMagicLen) {
    throw FormatError("magic must be 4 bytes");
  }
  buf_.insert(buf_.end(), magic.begin(), magic.end());
  u16(version);
}

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }
void ByteWriter::u16(std::uint16_t v) { PutLe(buf_, v); }
void ByteWriter::u32(std::uint32_t v) { PutLe(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { PutLe(buf_, v); }
void ByteWriter::f32(float v) { PutLe(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) {
  PutLe(buf_, std::bit_cast<std::uint64_t>(v));
}

void ByteWriter::f32s(std::span<const float> values) {
  buf_.reserve(buf_.size() + values.size() * 4);
  for (float v : values) f32(v);
}

void ByteWriter::raw(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

Bytes ByteWriter::Finish() && {
  const std::uint32_t crc = crc32(buf_);
  PutLe(buf_, crc);
  return std::move(buf_);
}

ByteReader::ByteReader(std::span<const std::uint8_t> bytes,
                       std::string_view magic, std::uint16_t version)
    : bytes_(bytes) {
  if (bytes.size() < kMagicLen ||
      std::memcmp(bytes.data(), magic.data(), kMagicLen) != 0) {
    throw FormatError("bad magic: expected '" + std::string(magic) + "'");
  }
  if (bytes.size() < kHeaderLen + kTrailerLen) {
    throw FormatError("truncated " + std::string(magic) + " buffer");
  }
  const auto found = GetLe<std::uint16_t>(bytes.data() + kMagicLen);
  if (found != version) {
    throw UnsupportedVersionError(
        std::string(magic) + " version " + std::to_string(found) +
        " is not supported (expected " + std::to_string(version) + ")");
  }
  end_ = bytes.size() - kTrailerLen;
  const auto stored = GetLe<std::uint32_t>(bytes.data() + end_);
  if (stored != crc32(bytes.first(end_))) {
    throw FormatError(std::string(magic) +
                      " CRC mismatch (truncated or corrupt)");
  }
  pos_ = kHeaderLen;
}

const std::uint8_t* ByteReader::Take(std::size_t n) {
  if (n > end_ - pos_) {
    throw FormatError("unexpected end of payload");
  }
  const std::uint8_t* p = bytes_.data() + pos_;
  pos_ += n;
  return p;
}

std::uint8_t ByteReader::u8() { return *Take(1); }
std::uint16_t ByteReader::u16() { return GetLe<std::uint16_t>(Take(2)); }
std::uint32_t ByteReader::u32() { return GetLe<std::uint32_t>(Take(4)); }
std::uint64_t ByteReader::u64() { return GetLe<std::uint64_t>(Take(8)); }
float ByteReader::f32() {
  return std::bit_cast<float>(GetLe<std::uint32_t>(Take(4)));
}
double ByteReader::f64() {
  return std::bit_cast<double>(GetLe<std::uint64_t>(Take(8)));
}

void ByteReader::f32s(std::span<float> out) {
  const std::uint8_t* p = Take(out.size() * 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::bit_cast<float>(GetLe<std::uint32_t>(p + 4 * i));
  }
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  return {Take(n), n};
}

void ByteReader::ExpectEnd() const {
  if (pos_ != end_) {
    throw FormatError("trailing bytes after payload");
  }
}

Bytes ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string() + " for reading");
  }
  Bytes out((std::istreambuf_iterator<char>(in)),
            std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw IoError("read failed: " + path.string());
  }
  return out;
}

void WriteFile(const std::filesystem::path& path,
               std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

std::string_view PeekMagic(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicLen) return {};
  return {reinterpret_cast<const char*>(bytes.data()), kMagicLen};
}

}  // namespace splitmark::io
