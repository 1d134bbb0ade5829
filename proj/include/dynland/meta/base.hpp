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
#include <deque>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "dynland/core/grad.hpp"
#include "dynland/core/rng.hpp"
#include "dynland/data/category.hpp"
#include "dynland/data/render.hpp"
#include "dynland/meta/config.hpp"
#include "dynland/model/checkpoint.hpp"
#include "dynland/model/config.hpp"
#include "dynland/model/networks.hpp"

namespace dynland {

/// Contiguous channel block of one seen category inside the N_all base detectors.
struct DetectorBlock {
  int category_id = 0;
  std::size_t offset = 0;
  std::size_t count = 0;
};

/// Supervised base model: feature extractor theta0 and N_all x D detectors omega0.
struct BaseModel {
  ParamSet theta0;
  Tensor omega0;
  std::vector<DetectorBlock> blocks;

  std::size_t n_all() const { return omega0.rank() == 2 ? omega0.dim(0) : 0; }

  const DetectorBlock& block(int category_id) const {
    for (const auto& b : blocks)
      if (b.category_id == category_id) return b;
    throw DataError("base detectors have no block for category " + std::to_string(category_id));
  }

  /// Rows of omega0 belonging to one category.
  Tensor detectors(int category_id) const {
    const auto& b = block(category_id);
    std::vector<std::size_t> idx(b.count);
    std::iota(idx.begin(), idx.end(), b.offset);
    return gather_rows(omega0, idx);
  }
};

/// Blocks in ascending category id; N_all is the sum of the seen landmark counts.
inline std::vector<DetectorBlock> make_blocks(const std::vector<CategorySpec>& registry, std::vector<int> seen) {
  std::sort(seen.begin(), seen.end());
  std::vector<DetectorBlock> out;
  std::size_t offset = 0;
  for (int id : seen) {
    const auto n = find_category(registry, id).n_landmarks();
    out.push_back({id, offset, n});
    offset += n;
  }
  return out;
}

inline ParamSet base_to_params(const BaseModel& m) {
  ParamSet p;
  p.merge(m.theta0, "theta0.");
  p.add("omega0", m.omega0);
  std::vector<double> b;
  for (const auto& blk : m.blocks) {
    b.push_back(static_cast<double>(blk.category_id));
    b.push_back(static_cast<double>(blk.offset));
    b.push_back(static_cast<double>(blk.count));
  }
  p.add("blocks", Tensor({m.blocks.size(), 3}, std::move(b)));
  return p;
}

inline BaseModel base_from_params(const ParamSet& p) {
  BaseModel m;
  m.theta0 = p.with_prefix_stripped("theta0.");
  m.omega0 = p.at("omega0");
  const Tensor& b = p.at("blocks");
  if (b.rank() != 2 || b.dim(1) != 3) throw DataError("base checkpoint: malformed block table");
  for (std::size_t i = 0; i < b.dim(0); ++i) {
    m.blocks.push_back({static_cast<int>(b[3 * i]), static_cast<std::size_t>(b[3 * i + 1]),
                        static_cast<std::size_t>(b[3 * i + 2])});
  }
  return m;
}

struct BaseTrainResult {
  BaseModel model;
  std::vector<double> losses;  // per step
};

/// Supervised pretraining on the seen categories. Each sample is scored only on
/// its own category's block of detectors; the other channels carry no target.
inline BaseTrainResult train_base(const std::vector<CategorySpec>& registry, const std::vector<int>& seen,
                                  const ModelConfig& mcfg, const MetaConfig& cfg, const RenderConfig& rcfg,
                                  std::uint64_t seed) {
  if (seen.empty()) throw UsageError("train_base: no seen categories");
  BaseTrainResult res;
  BaseModel& m = res.model;
  m.blocks = make_blocks(registry, seen);
  m.theta0 = init_fenet(mcfg, derive_seed(seed, {0xBA5E, 1}));
  std::size_t n_all = 0;
  for (const auto& b : m.blocks) n_all += b.count;
  m.omega0 = randn_init({n_all, mcfg.D}, mcfg.D, derive_seed(seed, {0xBA5E, 2}));

  const std::size_t hw = mcfg.h * mcfg.w;
  std::deque<double> window;
  double window_sum = 0.0;
  for (std::size_t step = 0; step < cfg.base_steps; ++step) {
    Rng rng(derive_seed(seed, {0xBA5E, 3, step}));
    std::vector<Sample> batch;
    std::vector<double> target(cfg.base_batch * n_all * hw, 0.0);
    for (std::size_t b = 0; b < cfg.base_batch; ++b) {
      const auto& blk = m.blocks[rng.below(m.blocks.size())];
      batch.push_back(render_sample(find_category(registry, blk.category_id), rcfg, rng.next_u64()));
      const Tensor& lm = batch.back().labelmap;
      std::copy(lm.data().begin(), lm.data().end(), target.begin() + static_cast<std::ptrdiff_t>((b * n_all + blk.offset) * hw));
    }
    const Tensor images = stack_images(batch);
    const Tensor labels({cfg.base_batch, n_all, mcfg.h, mcfg.w}, std::move(target));

    Tape tape;
    TapeScope scope(tape);
    const ParamSet theta = m.theta0.watched();
    const Tensor omega = tape.watch(m.omega0);
    const Tensor loss = softmax_xent(detector_logits(omega, fenet_forward(theta, images, mcfg)), labels);
    std::vector<Tensor> targets;
    for (const auto& [_, t] : theta) targets.push_back(t);
    targets.push_back(omega);
    const auto g = grad(loss, std::span<const Tensor>(targets));
    // x0.1 at half and again at three quarters of the budget
    const double T = static_cast<double>(cfg.base_steps), t = static_cast<double>(step);
    const double lr = cfg.base_lr * (t >= 0.5 * T ? 0.1 : 1.0) * (t >= 0.75 * T ? 0.1 : 1.0);
    ParamSet next;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      next.add(theta.entry(i).first, sub(m.theta0.entry(i).second, scale(g[i], lr)).detach());
    }
    m.theta0 = std::move(next);
    m.omega0 = sub(m.omega0, scale(g.back(), lr)).detach();

    const double l = loss.item();
    res.losses.push_back(l);
    window.push_back(l);
    window_sum += l;
    if (window.size() > 50) {
      window_sum -= window.front();
      window.pop_front();
    }
    if (cfg.base_loss_threshold > 0 && window.size() == 50 && window_sum / 50.0 < cfg.base_loss_threshold) break;
  }
  return res;
}

/// L^point for a sample: its own labelmap, or the base model's argmax per channel
/// of the category's detector block.
inline Tensor make_labelmaps(LabelmapSource mode, const Sample& sample, const BaseModel& base,
                             const ModelConfig& mcfg) {
  if (mode == LabelmapSource::GroundTruth) return sample.labelmap;
  const Tensor omega = base.detectors(sample.category_id);
  const Tensor features = fenet_forward(base.theta0, reshape(sample.image, {1, 1, mcfg.H, mcfg.W}), mcfg);
  const Tensor y = ld_forward(omega, reshape(features, {mcfg.D, mcfg.h, mcfg.w}));
  const std::size_t nc = omega.dim(0), hw = mcfg.h * mcfg.w;
  std::vector<double> v(nc * hw, 0.0);
  for (std::size_t n = 0; n < nc; ++n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < hw; ++c)
      if (y[n * hw + c] > y[n * hw + best]) best = c;
    v[n * hw + best] = 1.0;
  }
  return Tensor({nc, mcfg.h, mcfg.w}, std::move(v));
}

}  // namespace dynland
