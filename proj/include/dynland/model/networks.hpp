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

#include <cstdint>
#include <string>
#include <vector>

#include "dynland/core/ops.hpp"
#include "dynland/core/param_set.hpp"
#include "dynland/core/rng.hpp"
#include "dynland/data/geometry.hpp"
#include "dynland/model/config.hpp"

namespace dynland {

// Layouts: images are N x 1 x H x W, cloth-level features N x D x h x w,
// landmark-level features and detector weights Nc x D, heatmaps and labelmaps
// N x Nc x h x w (or Nc x h x w for a single image).

// --- feature extraction network ----------------------------------------------

inline ParamSet init_fenet(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamSet p;
  std::size_t in = 1;
  for (std::size_t i = 0; i < cfg.conv_depth(); ++i) {
    const std::size_t out = cfg.channels[i];
    const auto name = "conv" + std::to_string(i);
    p.add(name + ".weight", randn_init({out, in, 3, 3}, in * 9, derive_seed(seed, {0xFE, i})));
    p.add(name + ".bias", Tensor::zeros({out}));
    in = out;
  }
  return p;
}

/// Conv/relu stack with 2x2 average pooling after the configured layers. The
/// last layer is linear.
inline Tensor fenet_forward(const ParamSet& params, const Tensor& images, const ModelConfig& cfg) {
  Tensor x = images;
  if (x.rank() == 3) x = reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != cfg.H || x.dim(3) != cfg.W) {
    throw ShapeError("fenet_forward: expected N x 1 x " + std::to_string(cfg.H) + " x " + std::to_string(cfg.W) +
                     " images, got " + to_string(images.shape()));
  }
  for (std::size_t i = 0; i < cfg.conv_depth(); ++i) {
    const auto name = "conv" + std::to_string(i);
    x = add_bias(conv2d_same(x, params.at(name + ".weight")), params.at(name + ".bias"), 1);
    if (i + 1 < cfg.conv_depth()) x = relu(x);
    for (auto p : cfg.pool_after)
      if (p == i) x = avg_pool2(x);
  }
  return x;
}

// --- landmark-level features -------------------------------------------------

/// Mean over images of labelmap(Nc x hw) * features(hw x D).
/// features: K x D x h x w, labelmaps: K x Nc x h x w (constant).
inline Tensor extract_landmark_features(const Tensor& features, const Tensor& labelmaps) {
  if (features.rank() != 4 || labelmaps.rank() != 4 || features.dim(0) != labelmaps.dim(0) ||
      features.dim(2) != labelmaps.dim(2) || features.dim(3) != labelmaps.dim(3)) {
    throw ShapeError("extract_landmark_features: features " + to_string(features.shape()) + " vs labelmaps " +
                     to_string(labelmaps.shape()));
  }
  const std::size_t K = features.dim(0), D = features.dim(1), hw = features.dim(2) * features.dim(3);
  const std::size_t nc = labelmaps.dim(1);
  const Tensor l = reshape(permute(reshape(labelmaps.detach(), {K, nc, hw}), {1, 0, 2}), {nc, K * hw});
  const Tensor f = reshape(permute(reshape(features, {K, D, hw}), {0, 2, 1}), {K * hw, D});
  return scale(matmul(l, f), 1.0 / static_cast<double>(K));
}

/// Stacks per-image Nc x h x w labelmaps into K x Nc x h x w.
inline Tensor stack_labelmaps(const std::vector<Tensor>& maps) {
  if (maps.empty()) throw ShapeError("stack_labelmaps: empty list");
  const Shape& s = maps.front().shape();
  if (s.size() != 3) throw ShapeError("stack_labelmaps: expected Nc x h x w, got " + to_string(s));
  std::vector<double> v;
  v.reserve(maps.size() * numel(s));
  for (const auto& m : maps) {
    if (m.shape() != s) {
      throw ShapeError("stack_labelmaps: inconsistent landmark count " + to_string(m.shape()) + " vs " + to_string(s));
    }
    v.insert(v.end(), m.data().begin(), m.data().end());
  }
  return Tensor({maps.size(), s[0], s[1], s[2]}, std::move(v));
}

// --- parameter prediction network ---------------------------------------------

inline ParamSet init_ppnet(const ModelConfig& cfg, std::uint64_t seed) {
  ParamSet p;
  p.add("fc1.weight", randn_init({cfg.D, cfg.hidden}, cfg.D, derive_seed(seed, {0xA1})));
  p.add("fc1.bias", Tensor::zeros({cfg.hidden}));
  // A zero output layer starts every detector at the uniform heatmap.
  p.add("fc2.weight", Tensor::zeros({cfg.hidden, cfg.D}));
  p.add("fc2.bias", Tensor::zeros({cfg.D}));
  return p;
}

/// Row-wise two-layer MLP shared across landmarks: Nc x D -> Nc x D for any Nc.
inline Tensor ppnet_forward(const ParamSet& phi, const Tensor& point_features) {
  const Tensor& w1 = phi.at("fc1.weight");
  if (point_features.rank() != 2 || point_features.dim(1) != w1.dim(0)) {
    throw ShapeError("ppnet_forward: expected Nc x " + std::to_string(w1.dim(0)) + " input, got " +
                     to_string(point_features.shape()));
  }
  const Tensor hidden = relu(add_bias(matmul(point_features, w1), phi.at("fc1.bias"), 1));
  return add_bias(matmul(hidden, phi.at("fc2.weight")), phi.at("fc2.bias"), 1);
}

// --- landmark detectors -------------------------------------------------------

/// Dot products of detector rows with every feature cell followed by a
/// per-channel spatial softmax. features: K x D x h x w -> K x Nc x h x w,
/// or D x h x w -> Nc x h x w.
inline Tensor detector_logits(const Tensor& omega, const Tensor& features) {
  const bool single = features.rank() == 3;
  const Tensor f4 = single ? reshape(features, {1, features.dim(0), features.dim(1), features.dim(2)}) : features;
  if (f4.rank() != 4 || omega.rank() != 2 || omega.dim(1) != f4.dim(1)) {
    throw ShapeError("ld_forward: detector width mismatch " + to_string(omega.shape()) + " vs features " +
                     to_string(features.shape()));
  }
  const std::size_t K = f4.dim(0), D = f4.dim(1), h = f4.dim(2), w = f4.dim(3), nc = omega.dim(0);
  const Tensor fm = reshape(permute(reshape(f4, {K, D, h * w}), {1, 0, 2}), {D, K * h * w});
  const Tensor logits = permute(reshape(matmul(omega, fm), {nc, K, h, w}), {1, 0, 2, 3});
  return single ? reshape(logits, {nc, h, w}) : logits;
}

inline Tensor ld_forward(const Tensor& omega, const Tensor& features) {
  return spatial_softmax(detector_logits(omega, features));
}

namespace detail {

inline void require_one_hot(const Tensor& labelmaps) {
  const std::size_t hw = labelmaps.dim(labelmaps.rank() - 2) * labelmaps.dim(labelmaps.rank() - 1);
  for (std::size_t g = 0; g < labelmaps.size() / hw; ++g) {
    std::size_t ones = 0;
    for (std::size_t i = g * hw; i < (g + 1) * hw; ++i) {
      const double v = labelmaps[i];
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = 2;
        break;
      }
    }
    if (ones != 1) throw DataError("heatmap_loss: labelmap channel " + std::to_string(g) + " is not one-hot");
  }
}

}  // namespace detail

/// Cross-entropy of heatmaps against one-hot labelmaps, averaged over landmarks (and images).
inline Tensor heatmap_loss(const Tensor& heatmaps, const Tensor& labelmaps) {
  if (heatmaps.shape() != labelmaps.shape() || labelmaps.rank() < 2) {
    throw ShapeError("heatmap_loss: shape mismatch " + to_string(heatmaps.shape()) + " vs " +
                     to_string(labelmaps.shape()));
  }
  detail::require_one_hot(labelmaps);
  return xent_heatmap(heatmaps, labelmaps);
}

/// heatmap_loss(spatial_softmax(logits), labelmaps), computed stably from the logits.
inline Tensor heatmap_loss_logits(const Tensor& logits, const Tensor& labelmaps) {
  if (logits.shape() != labelmaps.shape() || labelmaps.rank() < 2) {
    throw ShapeError("heatmap_loss: shape mismatch " + to_string(logits.shape()) + " vs " +
                     to_string(labelmaps.shape()));
  }
  detail::require_one_hot(labelmaps);
  return softmax_xent(logits, labelmaps);
}

/// Argmax cell of each channel (ties to the lowest row-major index), decoded to
/// the cell-centre pixel. heatmaps: Nc x h x w.
inline std::vector<Point> detect(const Tensor& heatmaps, std::size_t H, std::size_t W) {
  if (heatmaps.rank() != 3) throw ShapeError("detect: expected Nc x h x w, got " + to_string(heatmaps.shape()));
  const std::size_t nc = heatmaps.dim(0), h = heatmaps.dim(1), w = heatmaps.dim(2);
  std::vector<Point> out(nc);
  for (std::size_t n = 0; n < nc; ++n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < h * w; ++c)
      if (heatmaps[n * h * w + c] > heatmaps[n * h * w + best]) best = c;
    const double i = static_cast<double>(best / w), j = static_cast<double>(best % w);
    out[n] = Point{(j + 0.5) * static_cast<double>(W) / static_cast<double>(w),
                   (i + 0.5) * static_cast<double>(H) / static_cast<double>(h)};
  }
  return out;
}

/// Channel k of a K x Nc x h x w batch as an Nc x h x w tensor (no provenance).
inline Tensor image_slice(const Tensor& batch, std::size_t k) {
  if (batch.rank() != 4 || k >= batch.dim(0)) throw ShapeError("image_slice: bad index for " + to_string(batch.shape()));
  const std::size_t len = batch.dim(1) * batch.dim(2) * batch.dim(3);
  std::vector<double> v(batch.data().begin() + static_cast<std::ptrdiff_t>(k * len),
                        batch.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * len));
  return Tensor({batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(v));
}

}  // namespace dynland
