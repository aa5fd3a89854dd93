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


#ifndef SPLITMARK_HARNESS_STATS_H_
#define SPLITMARK_HARNESS_STATS_H_

#include <cstddef>
#include <span>

namespace splitmark::harness {

struct MannWhitneyResult {
  double u = 0.0;  // U statistic of sample a
  double p = 1.0;  // one-sided, alternative: a tends to be greater than b
  bool exact = false;
};

// Pooled sizes up to this use exact enumeration.
inline constexpr std::size_t kExactLimit = 12;

// Mann-Whitney U with midranks for ties. Small samples enumerate every way
// of assigning the pooled midranks to `a`; larger ones use the normal
// approximation with tie and continuity correction. If every pooled value
// is equal the p-value is 0.5. Throws ConfigError on an empty sample or a
// non-finite value.
MannWhitneyResult MannWhitneyU(std::span<const double> a,
                               std::span<const double> b);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for n < 2
  double min = 0.0;
  double max = 0.0;
};

Summary Summarize(std::span<const double> values);

}  // namespace splitmark::harness

#endif  // SPLITMARK_HARNESS_STATS_H_
