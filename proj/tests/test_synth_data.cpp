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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <tuple>

#include "dynland/data/benchmark.hpp"
#include "dynland/data/category.hpp"
#include "dynland/data/episode.hpp"
#include "dynland/data/io.hpp"
#include "dynland/data/render.hpp"

using namespace dynland;

namespace {

const std::vector<CategorySpec>& registry() {
  static const auto r = default_registry();
  return r;
}

double point_segment_distance(const Point& p, const Point& a, const Point& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

// Segments that do not touch have a positive separation realized at an endpoint.
double segment_distance(const Point& a, const Point& b, const Point& c, const Point& d) {
  return std::min({point_segment_distance(a, c, d), point_segment_distance(b, c, d), point_segment_distance(c, a, b),
                   point_segment_distance(d, a, b)});
}

// Brute-force placement: first free cell minimizing (L1 distance, row, col).
std::vector<std::size_t> brute_force_cells(const std::vector<Point>& coords, std::size_t h, std::size_t w,
                                           std::size_t H, std::size_t W) {
  std::vector<char> used(h * w, 0);
  std::vector<std::size_t> out;
  for (const auto& p : coords) {
    const long i0 = static_cast<long>(p.y * h / H), j0 = static_cast<long>(p.x * w / W);
    std::tuple<long, long, long> best{1L << 40, 0, 0};
    for (long i = 0; i < static_cast<long>(h); ++i)
      for (long j = 0; j < static_cast<long>(w); ++j) {
        if (used[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)]) continue;
        best = std::min(best, std::tuple{std::labs(i - i0) + std::labs(j - j0), i, j});
      }
    const auto cell = static_cast<std::size_t>(std::get<1>(best)) * w + static_cast<std::size_t>(std::get<2>(best));
    used[cell] = 1;
    out.push_back(cell);
  }
  return out;
}

std::size_t one_cell(const Tensor& labelmap, std::size_t n) {
  const std::size_t hw = labelmap.dim(1) * labelmap.dim(2);
  std::size_t ones = 0, at = 0;
  for (std::size_t c = 0; c < hw; ++c) {
    const double v = labelmap[n * hw + c];
    EXPECT_TRUE(v == 0.0 || v == 1.0);
    if (v == 1.0) {
      ++ones;
      at = c;
    }
  }
  EXPECT_EQ(ones, 1u);
  return at;
}

}  // namespace

// --- registry -------------------------------------------------------------------

TEST(Registry, HasThirteenCategories) { EXPECT_EQ(registry().size(), 13u); }

TEST(Registry, LandmarkCountsSpanEightToThirtyNine) {
  std::size_t lo = 1000, hi = 0;
  for (const auto& c : registry()) {
    lo = std::min(lo, c.n_landmarks());
    hi = std::max(hi, c.n_landmarks());
  }
  EXPECT_EQ(lo, 8u);
  EXPECT_EQ(hi, 39u);
}

TEST(Registry, IsDeterministic) {
  const auto a = default_registry(), b = default_registry();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].landmarks, b[i].landmarks);
    EXPECT_EQ(a[i].slots, b[i].slots);
  }
}

TEST(Registry, EveryRegionHasAtLeastThreeCategories) {
  int counts[3] = {0, 0, 0};
  for (const auto& c : registry()) ++counts[static_cast<int>(c.region)];
  for (int k : counts) EXPECT_GE(k, 3);
}

TEST(Registry, TemplatesAreDistinctSimplePolygons) {
  for (const auto& c : registry()) {
    const auto& L = c.landmarks;
    for (std::size_t i = 0; i < L.size(); ++i) {
      EXPECT_TRUE(L[i].x > 0 && L[i].x < 1 && L[i].y > 0 && L[i].y < 1) << c.name;
      for (std::size_t j = i + 1; j < L.size(); ++j) EXPECT_GT(distance(L[i], L[j]), 1e-6) << c.name;
    }
    EXPECT_TRUE(is_simple_polygon(L)) << c.name;
    const std::size_t n = L.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 2; j < n; ++j) {
        if (i == 0 && j == n - 1) continue;
        EXPECT_GT(segment_distance(L[i], L[(i + 1) % n], L[j], L[(j + 1) % n]), 1e-6) << c.name << " " << i << "," << j;
      }
    ASSERT_EQ(c.edges.size(), n);
    EXPECT_GT(polygon_area(L), 0.0);
  }
}

TEST(Registry, SlotTablesAreInjectiveAndInRange) {
  for (const auto& c : registry()) {
    ASSERT_EQ(c.slots.size(), c.n_landmarks());
    std::set<std::size_t> s(c.slots.begin(), c.slots.end());
    EXPECT_EQ(s.size(), c.slots.size()) << c.name;
    EXPECT_LT(*s.rbegin(), kMaxLandmarks);
  }
  EXPECT_EQ(kMaxLandmarks, 39u);
}

TEST(Registry, LookupRejectsUnknownCategory) {
  EXPECT_EQ(find_category(registry(), "skirt").n_landmarks(), 8u);
  EXPECT_THROW(find_category(registry(), 99), DataError);
}

// --- rendering -------------------------------------------------------------------

TEST(Render, ZeroJitterCoordsAreTheScaledTemplate) {
  const auto cfg = RenderConfig::zero_jitter();
  for (const auto& c : registry()) {
    const Sample s = render_sample(c, cfg, 17);
    ASSERT_EQ(s.coords.size(), c.n_landmarks());
    for (std::size_t n = 0; n < c.n_landmarks(); ++n) {
      EXPECT_NEAR(s.coords[n].x, c.landmarks[n].x * 32.0, 1e-12);
      EXPECT_NEAR(s.coords[n].y, c.landmarks[n].y * 32.0, 1e-12);
    }
  }
}

TEST(Render, DoublingScaleQuadruplesArea) {
  const std::vector<Point> square{{0.25, 0.25}, {0.75, 0.25}, {0.75, 0.75}, {0.25, 0.75}};
  Jitter j1, j2;
  j2.scale = 2.0;
  const double a1 = polygon_area(transform_template(square, j1, 32, 32));
  const double a2 = polygon_area(transform_template(square, j2, 32, 32));
  EXPECT_NEAR(a1, 256.0, 1e-9);
  EXPECT_NEAR(a2, 4.0 * a1, 1e-9);
}

TEST(Render, SameSeedGivesBitIdenticalSamples) {
  const auto& c = registry()[3];
  const Sample a = render_sample(c, {}, 99), b = render_sample(c, {}, 99);
  EXPECT_TRUE(a.image.same_values(b.image));
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_TRUE(a.labelmap.same_values(b.labelmap));
  EXPECT_EQ(a.area, b.area);
}

TEST(Render, ImagesStayInUnitRange) {
  const Sample s = render_sample(registry()[0], {}, 5);
  EXPECT_EQ(s.image.shape(), (Shape{32, 32}));
  double mx = 0;
  for (double v : s.image.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    mx = std::max(mx, v);
  }
  EXPECT_GT(mx, 0.3);  // outline visible
}

TEST(Render, ImpossibleJitterIsRejectedWithSeed) {
  RenderConfig cfg;
  cfg.max_translation = 5.0;
  cfg.min_scale = cfg.max_scale = 1.0;
  cfg.max_rotation_deg = 0.0;
  cfg.max_translation = 3.0;
  cfg.max_retries = 3;
  // translation of at least 0.6 W is needed to leave the frame; most draws exceed it
  bool rejected = false;
  for (std::uint64_t seed = 0; seed < 50 && !rejected; ++seed) {
    try {
      render_sample(registry()[0], cfg, seed);
    } catch (const DataError& e) {
      rejected = std::string(e.what()).find("seed " + std::to_string(seed)) != std::string::npos;
    }
  }
  EXPECT_TRUE(rejected);
}

TEST(Render, JitterIsActiveAndSamplesStayInFrameProperty) {
  for (const auto& c : registry()) {
    double displacement = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const Sample s = render_sample(c, {}, seed);
      for (std::size_t n = 0; n < s.coords.size(); ++n) {
        const Point& p = s.coords[n];
        ASSERT_TRUE(p.x >= 0 && p.x < 32 && p.y >= 0 && p.y < 32) << c.name << " seed " << seed;
        displacement += distance(p, Point{c.landmarks[n].x * 32, c.landmarks[n].y * 32});
      }
      ASSERT_GT(s.area, 0.0);
    }
    EXPECT_GT(displacement / (1000.0 * static_cast<double>(c.n_landmarks())), 0.0) << c.name;
  }
}

TEST(Render, LabelmapChannelsArePairwiseDistinctOneHotProperty) {
  for (const auto& c : registry()) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const Sample s = render_sample(c, {}, seed);
      ASSERT_EQ(s.labelmap.shape(), (Shape{c.n_landmarks(), 8, 8}));
      std::set<std::size_t> cells;
      for (std::size_t n = 0; n < c.n_landmarks(); ++n) {
        const std::size_t at = one_cell(s.labelmap, n);
        EXPECT_EQ(at, s.cells[n]);
        cells.insert(at);
      }
      EXPECT_EQ(cells.size(), c.n_landmarks()) << c.name;
    }
  }
}

// --- labelmaps -------------------------------------------------------------------

TEST(Labelmap, CentrePixelMapsToCellFourFour) {
  const auto lm = coords_to_labelmap({{16, 16}}, 8, 8, 32, 32);
  EXPECT_EQ(lm.cells[0], 4u * 8 + 4);
  EXPECT_EQ(lm.map[4 * 8 + 4], 1.0);
}

TEST(Labelmap, OriginMapsToCellZero) { EXPECT_EQ(coords_to_labelmap({{0, 0}}, 8, 8, 32, 32).cells[0], 0u); }

TEST(Labelmap, CollidingLandmarksLandOneStepApart) {
  const auto lm = coords_to_labelmap({{13.0, 9.0}, {13.0, 9.0}}, 8, 8, 32, 32);
  const auto oracle = brute_force_cells({{13.0, 9.0}, {13.0, 9.0}}, 8, 8, 32, 32);
  EXPECT_EQ(lm.cells, oracle);
  const long d = std::labs(static_cast<long>(lm.cells[0] / 8) - static_cast<long>(lm.cells[1] / 8)) +
                 std::labs(static_cast<long>(lm.cells[0] % 8) - static_cast<long>(lm.cells[1] % 8));
  EXPECT_EQ(d, 1);
}

TEST(Labelmap, SpiralSearchMatchesBruteForceProperty) {
  Rng rng(2024);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<Point> coords;
    // clustered points force many collisions
    const double cx = rng.uniform(0, 32), cy = rng.uniform(0, 32);
    for (std::size_t i = 0; i < n; ++i) {
      coords.push_back(Point{std::clamp(cx + rng.uniform(-6, 6), 0.0, 31.99),
                             std::clamp(cy + rng.uniform(-6, 6), 0.0, 31.99)});
    }
    EXPECT_EQ(coords_to_labelmap(coords, 8, 8, 32, 32).cells, brute_force_cells(coords, 8, 8, 32, 32));
  }
}

TEST(Labelmap, TooManyLandmarksForTheGridIsRejected) {
  std::vector<Point> coords(5, Point{1, 1});
  EXPECT_THROW(coords_to_labelmap(coords, 2, 2, 32, 32), DataError);
  EXPECT_NO_THROW(coords_to_labelmap(std::vector<Point>(4, Point{1, 1}), 2, 2, 32, 32));
}

// --- episodes ----------------------------------------------------------------------

TEST(Episode, SupportSizeFollowsK) {
  const Episode ep = sample_episode(registry(), 6, 3, 2, 1);
  EXPECT_EQ(ep.support.size(), 3u);
  EXPECT_EQ(ep.query.size(), 2u);
}

TEST(Episode, DefaultQueryCountIsTwentyFour) { EXPECT_EQ(kDefaultQueryCount, 24u); }

TEST(Episode, NeighbouringSeedsGiveDifferentSupportImages) {
  const Episode a = sample_episode(registry(), 8, 2, 1, 100), b = sample_episode(registry(), 8, 2, 1, 101);
  EXPECT_FALSE(a.support[0].image.same_values(b.support[0].image));
}

TEST(Episode, SamplesShareCategoryAndHaveDisjointSeeds) {
  const Episode ep = sample_episode(registry(), 11, 10, 24, 7);
  std::set<std::uint64_t> seeds;
  for (const auto* part : {&ep.support, &ep.query})
    for (const auto& s : *part) {
      EXPECT_EQ(s.category_id, 11);
      seeds.insert(s.seed);
    }
  EXPECT_EQ(seeds.size(), 34u);
}

TEST(Episode, SerializationIsByteIdenticalForIdenticalArguments) {
  const std::string a = serialize_episode(sample_episode(registry(), 2, 3, 4, 55));
  const std::string b = serialize_episode(sample_episode(registry(), 2, 3, 4, 55));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, serialize_episode(sample_episode(registry(), 2, 3, 4, 56)));
}

TEST(Episode, InvalidArgumentsAreRejected) {
  EXPECT_THROW(sample_episode(registry(), 42, 1, 1, 0), DataError);
  EXPECT_THROW(sample_episode(registry(), 1, 0, 1, 0), UsageError);
  EXPECT_THROW(sample_episode(registry(), 1, 1, 0, 0), UsageError);
}

// --- benchmark splits ----------------------------------------------------------------

namespace {

void expect_partition(const BenchmarkSplit& s) {
  EXPECT_EQ(s.seen.size(), 6u);
  EXPECT_EQ(s.unseen.size(), 7u);
  std::set<int> all(s.seen.begin(), s.seen.end());
  all.insert(s.unseen.begin(), s.unseen.end());
  EXPECT_EQ(all.size(), 13u);
}

BodyRegion region_of(int id) { return find_category(registry(), id).region; }

}  // namespace

TEST(Benchmark, SchemePredicatesHoldForAllSeedsProperty) {
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    for (int scheme = 1; scheme <= 4; ++scheme) expect_partition(build_benchmark(registry(), scheme, seed));

    const auto s1 = build_benchmark(registry(), 1, seed);
    for (int id : s1.seen) EXPECT_NE(region_of(id), BodyRegion::Full);
    for (const auto& c : registry()) {
      if (c.region == BodyRegion::Full) {
        EXPECT_TRUE(std::count(s1.unseen.begin(), s1.unseen.end(), c.id));
      }
    }

    const auto s2 = build_benchmark(registry(), 2, seed);
    for (int id : s2.seen) EXPECT_EQ(region_of(id), BodyRegion::Upper);

    const auto s3 = build_benchmark(registry(), 3, seed);
    std::size_t seen_max = 0, unseen_min = 1000;
    for (int id : s3.seen) seen_max = std::max(seen_max, find_category(registry(), id).n_landmarks());
    for (int id : s3.unseen) unseen_min = std::min(unseen_min, find_category(registry(), id).n_landmarks());
    EXPECT_LT(seen_max, unseen_min);
  }
}

TEST(Benchmark, SchemeTwoTransfersUpperToLower) {
  const auto s = build_benchmark(registry(), 2, 0);
  int lower_unseen = 0;
  for (int id : s.unseen) lower_unseen += region_of(id) == BodyRegion::Lower;
  EXPECT_EQ(lower_unseen, 3);
}

TEST(Benchmark, SchemeFourIsSeededAndDeterministic) {
  const auto a = build_benchmark(registry(), 4, 9), b = build_benchmark(registry(), 4, 9);
  EXPECT_EQ(a.seen, b.seen);
  bool differs = false;
  for (std::uint64_t s = 10; s < 20 && !differs; ++s) differs = build_benchmark(registry(), 4, s).seen != a.seen;
  EXPECT_TRUE(differs);
}

TEST(Benchmark, InfeasibleSchemesAreRejected) {
  std::vector<CategorySpec> reg;
  for (const auto& c : registry())
    if (c.region != BodyRegion::Upper) reg.push_back(c);
  EXPECT_THROW(build_benchmark(reg, 2, 0), DataError);
  EXPECT_THROW(build_benchmark(registry(), 5, 0), UsageError);
}

// --- dumps ----------------------------------------------------------------------------

TEST(Dump, PgmRoundTripsQuantizedPixels) {
  const Sample s = render_sample(registry()[7], {}, 3);
  const std::string bytes = encode_pgm(s.image.data(), 32, 32);
  EXPECT_EQ(bytes.substr(0, 3), "P5\n");
  const Gray8 g = decode_pgm(bytes);
  ASSERT_EQ(g.pixels.size(), 1024u);
  for (std::size_t i = 0; i < 1024; ++i) EXPECT_EQ(g.pixels[i], std::lround(s.image[i] * 255.0));
}

TEST(Dump, LabelmapRleRoundTrips) {
  const Sample s = render_sample(registry()[3], {}, 4);
  const std::string text = encode_labelmap_rle(s.labelmap);
  EXPECT_TRUE(decode_labelmap_rle(text).same_values(s.labelmap));
  EXPECT_EQ(text.substr(0, 7), "39 8 8\n");
}

TEST(Dump, FilesAreByteStableAcrossRuns) {
  const auto dir = std::filesystem::temp_directory_path() / "dynland_dump_test";
  std::filesystem::remove_all(dir);
  dump_sample(render_sample(registry()[5], {}, 8), dir / "a", "s");
  dump_sample(render_sample(registry()[5], {}, 8), dir / "b", "s");
  for (const char* ext : {".pgm", ".csv", ".rle"}) {
    EXPECT_EQ(read_file(dir / "a" / (std::string("s") + ext)), read_file(dir / "b" / (std::string("s") + ext)));
  }
  const std::string csv = read_file(dir / "a" / "s.csv");
  EXPECT_EQ(csv.substr(0, 13), "landmark,x,y\n");
  EXPECT_NE(csv.find("area,"), std::string::npos);
  std::filesystem::remove_all(dir);
}
