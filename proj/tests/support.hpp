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
#include <functional>
#include <vector>

#include "dynland/core/grad.hpp"
#include "dynland/core/rng.hpp"

namespace dynland::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v));
}

/// Values bounded away from zero, for kinks (relu) and poles (reciprocal).
inline Tensor random_away_from_zero(const Shape& shape, std::uint64_t seed, double gap = 0.1) {
  Rng rng(seed);
  std::vector<double> v(numel(shape));
  for (auto& x : v) {
    const double m = rng.uniform(gap, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor(shape, std::move(v));
}

inline Tensor replace_value(const Tensor& t, std::size_t i, double v) {
  std::vector<double> d = t.values();
  d[i] = v;
  return Tensor(t.shape(), std::move(d));
}

/// Central differences of a scalar function of several tensors.
inline std::vector<std::vector<double>> numeric_grad(const std::function<double(const std::vector<Tensor>&)>& f,
                                                     const std::vector<Tensor>& xs, double eps = 1e-6) {
  std::vector<std::vector<double>> out;
  for (std::size_t a = 0; a < xs.size(); ++a) {
    std::vector<double> g(xs[a].size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto plus = xs, minus = xs;
      plus[a] = replace_value(xs[a], i, xs[a][i] + eps);
      minus[a] = replace_value(xs[a], i, xs[a][i] - eps);
      g[i] = (f(plus) - f(minus)) / (2 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Reverse-mode gradients of a tape-built scalar function.
inline std::vector<std::vector<double>> tape_grad(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                                  const std::vector<Tensor>& xs) {
  Tape tape;
  TapeScope scope(tape);
  std::vector<Tensor> w;
  for (const auto& x : xs) w.push_back(tape.watch(x));
  const Tensor loss = f(w);
  auto gs = grad(loss, std::span<const Tensor>(w));
  std::vector<std::vector<double>> out;
  for (auto& g : gs) out.push_back(g.values());
  return out;
}

/// Worst relative error between tape gradients and central differences.
inline double gradient_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                             const std::vector<Tensor>& xs, double eps = 1e-6) {
  const auto analytic = tape_grad(f, xs);
  const auto numeric = numeric_grad([&](const std::vector<Tensor>& v) { return f(v).item(); }, xs, eps);
  double worst = 0;
  for (std::size_t a = 0; a < xs.size(); ++a) worst = std::max(worst, rel_err(analytic[a], numeric[a]));
  return worst;
}

}  // namespace dynland::testing
