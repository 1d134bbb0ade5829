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
#include "dynland/data/render.hpp"

namespace dynland {

inline constexpr std::size_t kDefaultQueryCount = 24;

struct Episode {
  int category_id = 0;
  std::uint64_t seed = 0;
  std::vector<Sample> support;
  std::vector<Sample> query;
};

/// Seed of the i-th support (role 0) or query (role 1) sample of an episode.
inline std::uint64_t episode_sample_seed(std::uint64_t seed, int category_id, std::uint64_t role, std::size_t i) {
  return derive_seed(seed, {0xE9, static_cast<std::uint64_t>(category_id), role, i});
}

/// K support and M query renders of one category with pairwise-distinct derived seeds.
inline Episode sample_episode(const std::vector<CategorySpec>& registry, int category_id, std::size_t K,
                              std::size_t M, std::uint64_t seed, const RenderConfig& cfg = {}) {
  if (K < 1 || M < 1) throw UsageError("sample_episode: K and M must be >= 1");
  const CategorySpec& cat = find_category(registry, category_id);
  Episode ep;
  ep.category_id = category_id;
  ep.seed = seed;
  std::vector<std::uint64_t> used;
  auto fresh = [&](std::uint64_t role, std::size_t i) {
    std::uint64_t s = episode_sample_seed(seed, category_id, role, i);
    while (std::find(used.begin(), used.end(), s) != used.end()) s = mix64(s);
    used.push_back(s);
    return s;
  };
  for (std::size_t i = 0; i < K; ++i) ep.support.push_back(render_sample(cat, cfg, fresh(0, i)));
  for (std::size_t i = 0; i < M; ++i) ep.query.push_back(render_sample(cat, cfg, fresh(1, i)));
  return ep;
}

}  // namespace dynland
