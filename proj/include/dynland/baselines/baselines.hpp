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

#include <string>
#include <vector>

#include "dynland/core/grad.hpp"
#include "dynland/data/category.hpp"
#include "dynland/meta/metacloth.hpp"

namespace dynland {

enum class BaselineKind { FT, MAML, WG, PROTO };

inline const char* to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::FT: return "ft";
    case BaselineKind::MAML: return "maml";
    case BaselineKind::WG: return "wg";
    case BaselineKind::PROTO: return "proto";
  }
  return "?";
}

inline BaselineKind parse_baseline(const std::string& s) {
  if (s == "ft") return BaselineKind::FT;
  if (s == "maml") return BaselineKind::MAML;
  if (s == "wg") return BaselineKind::WG;
  if (s == "proto") return BaselineKind::PROTO;
  throw UsageError("unknown baseline '" + s + "'");
}

// --- fine-tune ------------------------------------------------------------------------

struct FineTuned {
  ParamSet theta;
  Tensor omega;
  std::vector<double> support_losses;  // before each step, then after the last
};

/// Fresh random Nc x D detectors plus a copy of theta0, trained jointly on the support set.
inline FineTuned ft_adapt(const ParamSet& theta0, const std::vector<Sample>& support, const ModelConfig& mcfg,
                          const MetaConfig& cfg, std::uint64_t seed) {
  const Tensor images = images_of(support), labels = labelmaps_of(support);
  const std::size_t nc = labels.dim(1);
  ParamSet p = theta0.detached();
  p.add("omega", randn_init({nc, mcfg.D}, mcfg.D, derive_seed(seed, {0xF7})));
  FineTuned out;
  for (std::size_t s = 0; s < cfg.ft_steps; ++s) {
    Tape tape;
    TapeScope scope(tape);
    const ParamSet w = p.watched();
    const Tensor loss = support_loss(w, w.at("omega"), images, labels, mcfg);
    out.support_losses.push_back(loss.item());
    p = sgd_step(p, grad(loss, w), cfg.ft_lr).detached();
  }
  {
    RecordingGuard off(false);
    out.support_losses.push_back(support_loss(p, p.at("omega"), images, labels, mcfg).item());
  }
  out.omega = p.at("omega");
  out.theta = theta0;
  for (std::size_t i = 0; i < out.theta.size(); ++i) out.theta.at(out.theta.entry(i).first) = p.entry(i).second;
  return out;
}

// --- max-way MAML ---------------------------------------------------------------------

/// Feature extractor and kMaxLandmarks detectors meta-trained jointly.
struct MamlModel {
  ParamSet params;  // FENet entries plus "omega" (kMaxLandmarks x D)
};

/// Loss of the category's occupied slots only; rows of unoccupied slots never
/// enter the graph, so their gradient is exactly zero.
inline Tensor maml_loss(const ParamSet& params, const std::vector<std::size_t>& slots, const Tensor& images,
                        const Tensor& labels, const ModelConfig& mcfg) {
  return support_loss(params, gather_rows(params.at("omega"), slots), images, labels, mcfg);
}

inline ParamSet maml_inner(const ParamSet& params, const std::vector<std::size_t>& slots, const Tensor& images,
                           const Tensor& labels, const ModelConfig& mcfg, double lr, int steps, bool create_graph) {
  ParamSet cur = params;
  for (int s = 0; s < steps; ++s) {
    ParamSet g = grad(maml_loss(cur, slots, images, labels, mcfg), cur, create_graph);
    if (!create_graph) g = g.detached();
    cur = sgd_step(cur, g, lr);
  }
  return cur;
}

inline ParamSet maml_init(const BaseModel& base, const ModelConfig& mcfg, std::uint64_t seed) {
  ParamSet p = base.theta0.detached();
  p.add("omega", randn_init({kMaxLandmarks, mcfg.D}, mcfg.D, derive_seed(seed, {0x3A, 1})));
  return p;
}

struct MamlTrainResult {
  MamlModel model;
  std::vector<double> losses;
};

/// Second-order MAML over seen-category tasks, starting from theta0 and random detectors.
inline MamlTrainResult maml_train(const BaseModel& base, const std::vector<CategorySpec>& registry,
                                  const std::vector<int>& seen, const ModelConfig& mcfg, const MetaConfig& cfg,
                                  const RenderConfig& rcfg, std::uint64_t seed, const ProgressFn& progress = {}) {
  cfg.validate();
  MamlTrainResult res;
  res.model.params = maml_init(base, mcfg, seed);
  for (std::size_t t = 0; t < cfg.maml_tasks; ++t) {
    const Episode ep = training_episode(registry, seen, cfg.train_shots, cfg.train_queries, seed, 0x3A, t, rcfg);
    const auto& slots = find_category(registry, ep.category_id).slots;
    const Tensor si = images_of(ep.support), sl = labelmaps_of(ep.support);
    const Tensor qi = images_of(ep.query), ql = labelmaps_of(ep.query);
    Tape tape;
    TapeScope scope(tape);
    const ParamSet w = res.model.params.watched();
    const ParamSet adapted = maml_inner(w, slots, si, sl, mcfg, cfg.maml_inner_lr, cfg.maml_inner_steps, true);
    const Tensor loss = maml_loss(adapted, slots, qi, ql, mcfg);
    const ParamSet g = grad(loss, w);
    res.model.params =
        sgd_step(res.model.params, g, decayed(cfg.maml_outer_lr, t, cfg.maml_tasks, cfg.decay_at)).detached();
    res.losses.push_back(loss.item());
    if (progress) progress(t, loss.item());
  }
  return res;
}

struct MamlAdapted {
  ParamSet params;  // adapted FENet plus all kMaxLandmarks detector rows
  Tensor omega;     // the category's occupied rows, Nc x D
};

inline MamlAdapted maml_adapt(const MamlModel& model, const CategorySpec& cat, const std::vector<Sample>& support,
                              const ModelConfig& mcfg, const MetaConfig& cfg) {
  if (cat.slots.size() != cat.n_landmarks()) throw DataError("category '" + cat.name + "' has no slot table");
  const Tensor images = images_of(support), labels = labelmaps_of(support);
  MamlAdapted out;
  {
    Tape tape;
    TapeScope scope(tape);
    out.params = maml_inner(model.params.watched(), cat.slots, images, labels, mcfg, cfg.maml_inner_lr,
                            cfg.maml_inner_steps, false)
                     .detached();
  }
  out.omega = gather_rows(out.params.at("omega"), cat.slots);
  return out;
}

// --- weight generator -----------------------------------------------------------------

/// Flow-1 alone: detectors predicted from frozen theta0 features; theta0 is not tuned.
inline Tensor wg_adapt(const BaseModel& base, const ParamSet& phi, const std::vector<Sample>& support,
                       const ModelConfig& mcfg) {
  RecordingGuard off(false);
  return predict_detectors(phi, fenet_forward(base.theta0, images_of(support), mcfg), labelmaps_of(support));
}

// --- prototypes -----------------------------------------------------------------------

/// Per-landmark mean of the support landmark-level features (Nc x D).
inline Tensor proto_adapt(const ParamSet& theta0, const std::vector<Sample>& support, const ModelConfig& mcfg) {
  RecordingGuard off(false);
  return extract_landmark_features(fenet_forward(theta0, images_of(support), mcfg), labelmaps_of(support));
}

/// Scores -||F[i,j] - prototype_n||^2 for one D x h x w feature map -> Nc x h x w.
inline Tensor proto_scores(const Tensor& prototypes, const Tensor& features) {
  if (features.rank() != 3 || prototypes.rank() != 2 || prototypes.dim(1) != features.dim(0)) {
    throw ShapeError("proto_scores: prototypes " + to_string(prototypes.shape()) + " vs features " +
                     to_string(features.shape()));
  }
  const std::size_t nc = prototypes.dim(0), D = features.dim(0), hw = features.dim(1) * features.dim(2);
  std::vector<double> v(nc * hw);
  for (std::size_t n = 0; n < nc; ++n)
    for (std::size_t c = 0; c < hw; ++c) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        const double diff = features[d * hw + c] - prototypes[n * D + d];
        s += diff * diff;
      }
      v[n * hw + c] = -s;
    }
  return Tensor({nc, features.dim(1), features.dim(2)}, std::move(v));
}

/// Nearest-prototype cell per landmark for each query image.
inline std::vector<std::vector<Point>> proto_predict(const Tensor& prototypes, const ParamSet& theta0,
                                                     const Tensor& query_images, const ModelConfig& mcfg) {
  RecordingGuard off(false);
  const Tensor f = fenet_forward(theta0, query_images, mcfg);
  std::vector<std::vector<Point>> out;
  for (std::size_t k = 0; k < f.dim(0); ++k) {
    out.push_back(detect(proto_scores(prototypes, image_slice(f, k)), mcfg.H, mcfg.W));
  }
  return out;
}

}  // namespace dynland
