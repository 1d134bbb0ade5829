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

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "dynland/core/rng.hpp"
#include "dynland/data/category.hpp"

namespace dynland {

inline constexpr std::size_t kSeenCount = 6;

/// Seen/unseen category partition.
///   1: half-body to full-body (no full-body category is seen)
///   2: upper-body only in seen
///   3: the six categories with the fewest landmarks are seen
///   4: random six
struct BenchmarkSplit {
  int scheme = 1;
  std::vector<int> seen;
  std::vector<int> unseen;
};

namespace detail {

inline std::vector<const CategorySpec*> by_region(const std::vector<CategorySpec>& reg, BodyRegion r) {
  std::vector<const CategorySpec*> out;
  for (const auto& c : reg)
    if (c.region == r) out.push_back(&c);
  return out;
}

// Ascending landmark count, then id.
inline void sort_by_landmarks(std::vector<const CategorySpec*>& v) {
  std::sort(v.begin(), v.end(), [](const CategorySpec* a, const CategorySpec* b) {
    return a->n_landmarks() != b->n_landmarks() ? a->n_landmarks() < b->n_landmarks() : a->id < b->id;
  });
}

}  // namespace detail

inline BenchmarkSplit build_benchmark(const std::vector<CategorySpec>& registry, int scheme, std::uint64_t seed) {
  BenchmarkSplit s;
  s.scheme = scheme;
  auto infeasible = [&](const std::string& why) {
    return DataError("benchmark scheme " + std::to_string(scheme) + " infeasible: " + why);
  };
  if (registry.size() <= kSeenCount) throw infeasible("registry has only " + std::to_string(registry.size()) + " categories");
  switch (scheme) {
    case 1: {
      auto upper = detail::by_region(registry, BodyRegion::Upper);
      auto lower = detail::by_region(registry, BodyRegion::Lower);
      if (upper.size() + lower.size() < kSeenCount) throw infeasible("fewer than six half-body categories");
      detail::sort_by_landmarks(upper);
      detail::sort_by_landmarks(lower);
      // All lower-body categories (up to half the seen set), topped up with the
      // upper-body categories having the fewest landmarks.
      const std::size_t n_lower = std::min(lower.size(), kSeenCount / 2);
      if (upper.size() < kSeenCount - n_lower) throw infeasible("not enough upper-body categories");
      for (std::size_t i = 0; i < n_lower; ++i) s.seen.push_back(lower[i]->id);
      for (std::size_t i = 0; s.seen.size() < kSeenCount; ++i) s.seen.push_back(upper[i]->id);
      break;
    }
    case 2: {
      auto upper = detail::by_region(registry, BodyRegion::Upper);
      if (upper.size() < kSeenCount) throw infeasible("fewer than six upper-body categories");
      detail::sort_by_landmarks(upper);
      for (std::size_t i = 0; i < kSeenCount; ++i) s.seen.push_back(upper[i]->id);
      break;
    }
    case 3: {
      std::vector<const CategorySpec*> all;
      for (const auto& c : registry) all.push_back(&c);
      detail::sort_by_landmarks(all);
      if (all[kSeenCount - 1]->n_landmarks() >= all[kSeenCount]->n_landmarks()) {
        throw infeasible("landmark counts tie at the sixth position");
      }
      for (std::size_t i = 0; i < kSeenCount; ++i) s.seen.push_back(all[i]->id);
      break;
    }
    case 4: {
      std::vector<int> ids;
      for (const auto& c : registry) ids.push_back(c.id);
      std::sort(ids.begin(), ids.end());
      Rng rng(derive_seed(seed, {0xB4}));
      for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
      s.seen.assign(ids.begin(), ids.begin() + kSeenCount);
      break;
    }
    default:
      throw UsageError("benchmark scheme must be 1..4, got " + std::to_string(scheme));
  }
  std::sort(s.seen.begin(), s.seen.end());
  for (const auto& c : registry)
    if (std::find(s.seen.begin(), s.seen.end(), c.id) == s.seen.end()) s.unseen.push_back(c.id);
  std::sort(s.unseen.begin(), s.unseen.end());
  return s;
}

}  // namespace dynland
