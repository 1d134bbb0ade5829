/*
 * Copyright 2026 The dynland Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <vector>

#include "dynland/core/tensor.hpp"

namespace dynland {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from a parent seed and a path of tags.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = mix64(seed ^ 0x6A09E667F3BCC909ULL);
  for (auto t : tags) s = mix64(s ^ mix64(t + 0x9E3779B97F4A7C15ULL));
  return s;
}

/// Counter-based generator: draw i of stream `seed` is mix64(seed + (i + 1) * golden).
/// Output depends only on integer arithmetic, so streams are identical on every
/// platform. Normals use Box-Muller on two consecutive uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(mix64(seed)) {}

  std::uint64_t next_u64() { return mix64(seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// He-style initialization: N(0, 2 / fan_in).
inline Tensor randn_init(const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = sd * rng.normal();
  return Tensor(shape, std::move(v));
}

}  // namespace dynland
