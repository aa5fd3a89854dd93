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


#include "splitmark/harness/stats.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "splitmark/common/errors.h"

namespace splitmark::harness {

namespace {

// Midranks (1-based) of the pooled values.
std::vector<double> MidRanks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double mid = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

double NormalUpperTail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

MannWhitneyResult MannWhitneyU(std::span<const double> a,
                               std::span<const double> b) {
  if (a.empty() || b.empty()) {
    throw ConfigError("Mann-Whitney U needs two non-empty samples");
  }
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  for (double v : pooled) {
    if (!std::isfinite(v)) throw ConfigError("Mann-Whitney U: non-finite value");
  }
  const auto n = static_cast<double>(a.size());
  const auto m = static_cast<double>(b.size());
  const std::vector<double> ranks = MidRanks(pooled);
  double ra = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ra += ranks[i];
  MannWhitneyResult res;
  res.u = ra - n * (n + 1) / 2;

  if (std::all_of(pooled.begin(), pooled.end(),
                  [&](double v) { return v == pooled[0]; })) {
    res.p = 0.5;
    res.exact = pooled.size() <= kExactLimit;
    return res;
  }

  if (pooled.size() <= kExactLimit) {
    // Every subset of size n is equally likely under the null.
    const std::size_t total = pooled.size();
    std::uint64_t hits = 0;
    std::uint64_t count = 0;
    // Rank sums are multiples of 0.5; compare on doubled integers.
    const auto target = std::llround(2 * ra);
    for (std::uint32_t mask = 0; mask < (1u << total); ++mask) {
      if (std::popcount(mask) != static_cast<int>(a.size())) continue;
      long long s = 0;
      for (std::size_t i = 0; i < total; ++i) {
        if (mask >> i & 1u) s += std::llround(2 * ranks[i]);
      }
      hits += s >= target;
      ++count;
    }
    res.p = double(hits) / double(count);
    res.exact = true;
    return res;
  }

  // Tie-corrected variance.
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = double(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double nn = n + m;
  const double var = n * m / 12.0 * ((nn + 1) - ties / (nn * (nn - 1)));
  const double z = (res.u - n * m / 2 - 0.5) / std::sqrt(var);
  res.p = NormalUpperTail(z);
  return res;
}

Summary Summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = values.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

}  // namespace splitmark::harness
