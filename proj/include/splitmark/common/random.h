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


#ifndef SPLITMARK_COMMON_RANDOM_H_
#define SPLITMARK_COMMON_RANDOM_H_

#include <cstdint>
#include <initializer_list>
#include <random>

namespace splitmark {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t Mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a path of
// integers (stream tag, round, client, ...). Stable across runs.
inline std::uint64_t DeriveSeed(std::uint64_t base,
                                std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = Mix64(base);
  for (std::uint64_t p : path) s = Mix64(s ^ Mix64(p + 0x632be59bd9b4e019ull));
  return s;
}

// Stream tags for DeriveSeed; values are part of the reproducibility
// contract and must not be renumbered.
enum StreamTag : std::uint64_t {
  kStreamInit = 1,
  kStreamShuffle = 2,
  kStreamDpNoise = 3,
  kStreamPartition = 4,
  kStreamTrigger = 5,
  kStreamPoison = 6,
  kStreamWatermark = 7,
  kStreamVerify = 8,
  kStreamAttack = 9,
  kStreamData = 10,
};

}  // namespace splitmark

#endif  // SPLITMARK_COMMON_RANDOM_H_
