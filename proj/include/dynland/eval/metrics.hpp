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
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dynland/core/error.hpp"
#include "dynland/data/geometry.hpp"

namespace dynland {

/// Mean landmark distance divided by the square root of the garment area.
inline double normalized_error(const std::vector<Point>& pred, const std::vector<Point>& gt, double area) {
  if (pred.size() != gt.size()) {
    throw ShapeError("normalized_error: " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(gt.size()) + " landmarks");
  }
  if (!(area > 0)) throw DataError("normalized_error: area must be positive");
  if (gt.empty()) throw ShapeError("normalized_error: no landmarks");
  double s = 0.0;
  for (std::size_t n = 0; n < gt.size(); ++n) s += distance(pred[n], gt[n]);
  return s / static_cast<double>(gt.size()) / std::sqrt(area);
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) throw DataError("mean of an empty list");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Normal-approximation 95% half-width: 1.96 * sample stddev / sqrt(n).
inline double ci95(std::span<const double> v) {
  if (v.size() < 2) throw DataError("ci95 needs at least two values");
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(v.size()));
}

/// Cosine of the angle between two vectors; 0 when either is zero.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

}  // namespace dynland
