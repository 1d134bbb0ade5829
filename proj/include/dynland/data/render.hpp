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
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "dynland/core/rng.hpp"
#include "dynland/core/tensor.hpp"
#include "dynland/data/category.hpp"
#include "dynland/data/geometry.hpp"

namespace dynland {

struct RenderConfig {
  std::size_t H = 32;
  std::size_t W = 32;
  std::size_t h = 8;
  std::size_t w = 8;
  double max_rotation_deg = 15.0;
  double min_scale = 0.8;
  double max_scale = 1.2;
  double max_translation = 0.1;  // fraction of the image size
  double noise_sigma = 0.05;
  int max_retries = 100;

  static RenderConfig zero_jitter() {
    RenderConfig c;
    c.max_rotation_deg = 0.0;
    c.min_scale = c.max_scale = 1.0;
    c.max_translation = 0.0;
    return c;
  }

  void validate() const {
    if (H == 0 || W == 0 || h == 0 || w == 0 || H % h || W % w) {
      throw UsageError("render: H, W must be positive multiples of h, w");
    }
  }
};

/// One rendered garment image with its annotations.
struct Sample {
  int category_id = 0;
  std::uint64_t seed = 0;
  Tensor image;                    // H x W, values in [0, 1]
  std::vector<Point> coords;       // pixel coordinates, one per landmark
  Tensor labelmap;                 // Nc x h x w, one-hot per channel
  std::vector<std::size_t> cells;  // flat cell index of each channel's one
  double area = 0.0;               // transformed outline area, pixels^2
};

struct Labelmap {
  Tensor map;
  std::vector<std::size_t> cells;
};

namespace detail {

// Ring-by-ring search around `origin` for the first free cell at the smallest
// L1 distance; within a ring cells are visited in (row, col) order.
inline std::size_t nearest_free_cell(std::size_t origin, std::size_t h, std::size_t w,
                                     const std::vector<char>& used) {
  const long r0 = static_cast<long>(origin / w), c0 = static_cast<long>(origin % w);
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  for (long radius = 1; radius <= H + W; ++radius) {
    for (long dr = -radius; dr <= radius; ++dr) {
      const long r = r0 + dr;
      if (r < 0 || r >= H) continue;
      const long rest = radius - std::labs(dr);
      const long cols[2] = {c0 - rest, c0 + rest};
      for (int k = 0; k < (rest == 0 ? 1 : 2); ++k) {
        const long c = cols[k];
        if (c < 0 || c >= W) continue;
        const auto cell = static_cast<std::size_t>(r * W + c);
        if (!used[cell]) return cell;
      }
    }
  }
  throw DataError("labelmap: no free cell");
}

}  // namespace detail

/// One-hot h x w masks for pixel coordinates; a landmark landing on an occupied
/// cell moves to the nearest free cell (L1, ties by row then column).
inline Labelmap coords_to_labelmap(const std::vector<Point>& coords, std::size_t h, std::size_t w, std::size_t H,
                                   std::size_t W) {
  if (h * w < coords.size()) {
    throw DataError("labelmap: " + std::to_string(coords.size()) + " landmarks do not fit in " + std::to_string(h) +
                    "x" + std::to_string(w) + " cells");
  }
  std::vector<char> used(h * w, 0);
  Labelmap out;
  std::vector<double> v(coords.size() * h * w, 0.0);
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const Point& p = coords[n];
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < static_cast<double>(W) && p.y < static_cast<double>(H))) {
      throw DataError("labelmap: landmark " + std::to_string(n) + " outside the frame");
    }
    const auto i = static_cast<std::size_t>(std::floor(p.y * static_cast<double>(h) / static_cast<double>(H)));
    const auto j = static_cast<std::size_t>(std::floor(p.x * static_cast<double>(w) / static_cast<double>(W)));
    std::size_t cell = std::min(i, h - 1) * w + std::min(j, w - 1);
    if (used[cell]) cell = detail::nearest_free_cell(cell, h, w, used);
    used[cell] = 1;
    out.cells.push_back(cell);
    v[n * h * w + cell] = 1.0;
  }
  out.map = Tensor({coords.size(), h, w}, std::move(v));
  return out;
}

struct Jitter {
  double angle = 0.0;  // radians
  double scale = 1.0;
  double tx = 0.0, ty = 0.0;  // pixels
};

/// Template (unit square) to pixel coordinates under a similarity transform about the image centre.
inline std::vector<Point> transform_template(const std::vector<Point>& tmpl, const Jitter& j, std::size_t H,
                                             std::size_t W) {
  const double c = std::cos(j.angle), s = std::sin(j.angle);
  const double Wd = static_cast<double>(W), Hd = static_cast<double>(H);
  std::vector<Point> out;
  out.reserve(tmpl.size());
  for (const auto& p : tmpl) {
    const double u = (p.x - 0.5) * Wd, v = (p.y - 0.5) * Hd;
    out.push_back(Point{Wd / 2 + j.scale * (c * u - s * v) + j.tx, Hd / 2 + j.scale * (s * u + c * v) + j.ty});
  }
  return out;
}

namespace detail {

inline void stamp(std::vector<double>& img, std::size_t H, std::size_t W, long r, long c) {
  if (r >= 0 && c >= 0 && r < static_cast<long>(H) && c < static_cast<long>(W)) {
    img[static_cast<std::size_t>(r) * W + static_cast<std::size_t>(c)] = 1.0;
  }
}

inline void draw_segment(std::vector<double>& img, std::size_t H, std::size_t W, const Point& a, const Point& b,
                         int thickness) {
  const double len = distance(a, b);
  const auto steps = static_cast<std::size_t>(std::ceil(len * 4.0)) + 1;
  for (std::size_t s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps);
    const double x = a.x + t * (b.x - a.x), y = a.y + t * (b.y - a.y);
    if (thickness <= 1) {
      stamp(img, H, W, static_cast<long>(std::floor(y)), static_cast<long>(std::floor(x)));
    } else {
      const long r = static_cast<long>(std::floor(y - 0.5)), c = static_cast<long>(std::floor(x - 0.5));
      for (long dr = 0; dr < 2; ++dr)
        for (long dc = 0; dc < 2; ++dc) stamp(img, H, W, r + dr, c + dc);
    }
  }
}

// 3x3 binomial blur with zero padding.
inline std::vector<double> blur(const std::vector<double>& img, std::size_t H, std::size_t W) {
  static constexpr double k[3] = {0.25, 0.5, 0.25};
  std::vector<double> tmp(img.size(), 0.0), out(img.size(), 0.0);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double s = 0.0;
      for (int d = -1; d <= 1; ++d) {
        const long jj = static_cast<long>(j) + d;
        if (jj >= 0 && jj < static_cast<long>(W)) s += k[d + 1] * img[i * W + static_cast<std::size_t>(jj)];
      }
      tmp[i * W + j] = s;
    }
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double s = 0.0;
      for (int d = -1; d <= 1; ++d) {
        const long ii = static_cast<long>(i) + d;
        if (ii >= 0 && ii < static_cast<long>(H)) s += k[d + 1] * tmp[static_cast<std::size_t>(ii) * W + j];
      }
      out[i * W + j] = s;
    }
  return out;
}

inline bool inside(const std::vector<Point>& pts, std::size_t H, std::size_t W) {
  return std::all_of(pts.begin(), pts.end(), [&](const Point& p) {
    return p.x >= 0.0 && p.y >= 0.0 && p.x < static_cast<double>(W) && p.y < static_cast<double>(H);
  });
}

}  // namespace detail

/// Renders one jittered outline image of `cat`, deterministic in (cat, seed).
inline Sample render_sample(const CategorySpec& cat, const RenderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(cat.id), 0x5A}));
  Jitter jit;
  std::vector<Point> coords;
  bool ok = false;
  for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
    jit.angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * std::numbers::pi / 180.0;
    jit.scale = rng.uniform(cfg.min_scale, cfg.max_scale);
    jit.tx = rng.uniform(-cfg.max_translation, cfg.max_translation) * static_cast<double>(cfg.W);
    jit.ty = rng.uniform(-cfg.max_translation, cfg.max_translation) * static_cast<double>(cfg.H);
    coords = transform_template(cat.landmarks, jit, cfg.H, cfg.W);
    ok = detail::inside(coords, cfg.H, cfg.W);
  }
  if (!ok) {
    throw DataError("render: landmarks of '" + cat.name + "' left the frame after " +
                    std::to_string(cfg.max_retries) + " attempts (seed " + std::to_string(seed) + ")");
  }
  const int thickness = 1 + static_cast<int>(rng.below(2));
  std::vector<double> img(cfg.H * cfg.W, 0.0);
  for (const auto& [a, b] : cat.edges) detail::draw_segment(img, cfg.H, cfg.W, coords[a], coords[b], thickness);
  img = detail::blur(img, cfg.H, cfg.W);
  for (auto& v : img) {
    if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng.normal();
    v = std::clamp(v, 0.0, 1.0);
  }

  Sample s;
  s.category_id = cat.id;
  s.seed = seed;
  s.image = Tensor({cfg.H, cfg.W}, std::move(img));
  s.area = polygon_area(coords);
  auto lm = coords_to_labelmap(coords, cfg.h, cfg.w, cfg.H, cfg.W);
  s.labelmap = std::move(lm.map);
  s.cells = std::move(lm.cells);
  s.coords = std::move(coords);
  return s;
}

/// Stacks sample images into N x 1 x H x W.
inline Tensor stack_images(const std::vector<Sample>& samples) {
  if (samples.empty()) throw ShapeError("stack_images: empty list");
  const std::size_t H = samples.front().image.dim(0), W = samples.front().image.dim(1);
  std::vector<double> v;
  v.reserve(samples.size() * H * W);
  for (const auto& s : samples) {
    if (s.image.shape() != Shape{H, W}) throw ShapeError("stack_images: inconsistent image sizes");
    v.insert(v.end(), s.image.data().begin(), s.image.data().end());
  }
  return Tensor({samples.size(), 1, H, W}, std::move(v));
}

}  // namespace dynland
