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
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dynland/core/error.hpp"
#include "dynland/data/geometry.hpp"

namespace dynland {

enum class BodyRegion { Upper, Lower, Full };

inline const char* to_string(BodyRegion r) {
  switch (r) {
    case BodyRegion::Upper:
      return "upper";
    case BodyRegion::Lower:
      return "lower";
    case BodyRegion::Full:
      return "full";
  }
  return "?";
}

/// Number of global landmark slots used by the fixed-width (max-way) baseline.
inline constexpr std::size_t kMaxLandmarks = 39;

/// A garment-like category: a closed outline in the unit square whose
/// landmarks are listed in outline order, starting from the left collar or
/// left waist and running clockwise.
struct CategorySpec {
  int id = 0;
  std::string name;
  BodyRegion region = BodyRegion::Upper;
  std::vector<Point> landmarks;                         // unit-square template
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // closed polygon
  std::vector<std::size_t> slots;                       // global slot per landmark, < kMaxLandmarks

  std::size_t n_landmarks() const noexcept { return landmarks.size(); }
};

namespace detail {

// Places `count` landmarks on the closed outline: every vertex, plus extra points
// spread over edges in proportion to edge length (largest remainder, ties to the
// lower edge index), evenly spaced inside each edge.
inline std::vector<Point> landmarks_on_outline(const std::vector<Point>& outline, std::size_t count) {
  const std::size_t v = outline.size();
  if (count < v) throw UsageError("category outline has more vertices than landmarks");
  std::vector<double> len(v);
  double total = 0.0;
  for (std::size_t e = 0; e < v; ++e) total += (len[e] = distance(outline[e], outline[(e + 1) % v]));
  const std::size_t extra = count - v;
  std::vector<std::size_t> per(v, 0);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t placed = 0;
  for (std::size_t e = 0; e < v; ++e) {
    const double share = static_cast<double>(extra) * len[e] / total;
    per[e] = static_cast<std::size_t>(std::floor(share));
    placed += per[e];
    rem.emplace_back(share - std::floor(share), e);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; placed < extra; ++r, ++placed) ++per[rem[r].second];
  std::vector<Point> out;
  out.reserve(count);
  for (std::size_t e = 0; e < v; ++e) {
    const Point& a = outline[e];
    const Point& b = outline[(e + 1) % v];
    out.push_back(a);
    for (std::size_t q = 1; q <= per[e]; ++q) {
      const double t = static_cast<double>(q) / static_cast<double>(per[e] + 1);
      out.push_back(Point{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
    }
  }
  return out;
}

inline CategorySpec make_category(int id, std::string name, BodyRegion region, std::size_t count,
                                  const std::vector<Point>& outline) {
  CategorySpec c;
  c.id = id;
  c.name = std::move(name);
  c.region = region;
  c.landmarks = landmarks_on_outline(outline, count);
  for (std::size_t i = 0; i < count; ++i) c.edges.emplace_back(i, (i + 1) % count);
  // Slots follow the fractional position along the outline, so landmarks with
  // the same role in different categories share a detector.
  for (std::size_t i = 0; i < count; ++i) {
    const double pos = count > 1 ? static_cast<double>(i) * static_cast<double>(kMaxLandmarks - 1) /
                                       static_cast<double>(count - 1)
                                 : 0.0;
    c.slots.push_back(static_cast<std::size_t>(std::lround(pos)));
  }
  return c;
}

// Outline pieces shared by several categories. Coordinates are (x, y) with y down.
inline std::vector<Point> join(std::initializer_list<std::vector<Point>> parts) {
  std::vector<Point> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace detail

/// The fixed 13-category registry: six upper-body, three lower-body and four
/// full-body categories with 8 to 39 landmarks, all landmark counts distinct
/// around the six-fewest cut.
inline std::vector<CategorySpec> default_registry() {
  using detail::join;
  using detail::make_category;
  using P = std::vector<Point>;

  const P crew_neck{{0.42, 0.20}, {0.50, 0.26}, {0.58, 0.20}};
  const P vee_neck{{0.43, 0.20}, {0.50, 0.40}, {0.57, 0.20}};
  const P short_sleeve_r{{0.70, 0.23}, {0.83, 0.38}, {0.75, 0.45}, {0.68, 0.38}};
  const P short_sleeve_l{{0.32, 0.38}, {0.25, 0.45}, {0.17, 0.38}, {0.30, 0.23}};
  const P long_sleeve_r{{0.70, 0.23}, {0.84, 0.66}, {0.76, 0.68}, {0.68, 0.40}};
  const P long_sleeve_l{{0.32, 0.40}, {0.24, 0.68}, {0.16, 0.66}, {0.30, 0.23}};
  const P top_hem{{0.68, 0.78}, {0.32, 0.78}};
  const P coat_hem{{0.68, 0.80}, {0.50, 0.76}, {0.32, 0.80}};
  const P vest_r{{0.63, 0.20}, {0.70, 0.42}};
  const P vest_l{{0.30, 0.42}};
  const P sling_top{{0.38, 0.18}, {0.50, 0.34}, {0.62, 0.18}, {0.68, 0.40}};
  const P dress_body{{0.65, 0.52}, {0.78, 0.86}, {0.22, 0.86}, {0.35, 0.52}};

  std::vector<CategorySpec> r;
  r.push_back(make_category(0, "short_sleeve_top", BodyRegion::Upper, 25,
                            join({crew_neck, short_sleeve_r, top_hem, short_sleeve_l})));
  r.push_back(make_category(1, "long_sleeve_top", BodyRegion::Upper, 33,
                            join({crew_neck, long_sleeve_r, top_hem, long_sleeve_l})));
  r.push_back(make_category(2, "short_sleeve_outwear", BodyRegion::Upper, 31,
                            join({vee_neck, short_sleeve_r, coat_hem, short_sleeve_l})));
  r.push_back(make_category(3, "long_sleeve_outwear", BodyRegion::Upper, 39,
                            join({vee_neck, long_sleeve_r, coat_hem, long_sleeve_l})));
  r.push_back(make_category(4, "vest", BodyRegion::Upper, 15,
                            join({P{{0.37, 0.20}, {0.50, 0.30}}, vest_r, top_hem, vest_l})));
  r.push_back(make_category(5, "sling", BodyRegion::Upper, 16,
                            join({sling_top, P{{0.68, 0.74}, {0.32, 0.74}, {0.32, 0.40}}})));
  r.push_back(make_category(6, "shorts", BodyRegion::Lower, 10,
                            P{{0.30, 0.25}, {0.70, 0.25}, {0.75, 0.56}, {0.54, 0.59}, {0.50, 0.43}, {0.46, 0.59},
                              {0.25, 0.56}}));
  r.push_back(make_category(7, "trousers", BodyRegion::Lower, 14,
                            P{{0.34, 0.14}, {0.66, 0.14}, {0.71, 0.86}, {0.54, 0.86}, {0.50, 0.38}, {0.46, 0.86},
                              {0.29, 0.86}}));
  r.push_back(make_category(8, "skirt", BodyRegion::Lower, 8,
                            P{{0.36, 0.26}, {0.64, 0.26}, {0.77, 0.72}, {0.23, 0.72}}));
  r.push_back(make_category(9, "short_sleeve_dress", BodyRegion::Full, 29,
                            join({crew_neck, short_sleeve_r, dress_body, short_sleeve_l})));
  r.push_back(make_category(10, "long_sleeve_dress", BodyRegion::Full, 37,
                            join({crew_neck, long_sleeve_r, dress_body, long_sleeve_l})));
  r.push_back(make_category(11, "vest_dress", BodyRegion::Full, 19,
                            join({P{{0.37, 0.18}, {0.50, 0.28}}, P{{0.63, 0.18}, {0.70, 0.40}}, dress_body,
                                  P{{0.30, 0.40}}})));
  r.push_back(make_category(12, "sling_dress", BodyRegion::Full, 21, join({sling_top, dress_body, P{{0.32, 0.40}}})));
  return r;
}

inline const CategorySpec& find_category(const std::vector<CategorySpec>& registry, int id) {
  for (const auto& c : registry)
    if (c.id == id) return c;
  throw DataError("unknown category id " + std::to_string(id));
}

inline const CategorySpec& find_category(const std::vector<CategorySpec>& registry, const std::string& name) {
  for (const auto& c : registry)
    if (c.name == name) return c;
  throw DataError("unknown category '" + name + "'");
}

}  // namespace dynland
