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
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dynland/core/grad.hpp"
#include "dynland/data/episode.hpp"
#include "dynland/meta/base.hpp"
#include "dynland/meta/config.hpp"
#include "dynland/model/networks.hpp"

namespace dynland {

/// Everything a trained system needs at meta-test time.
struct TrainedStack {
  BaseModel base;  // theta0, omega0
  ParamSet phi;    // parameter prediction network
  ParamSet theta;  // meta-learned feature extractor initialization
};

using ProgressFn = std::function<void(std::size_t task, double loss)>;

// --- shared pieces ------------------------------------------------------------------

inline Tensor images_of(const std::vector<Sample>& samples) { return stack_images(samples); }

inline Tensor labelmaps_of(const std::vector<Sample>& samples) {
  std::vector<Tensor> maps;
  maps.reserve(samples.size());
  for (const auto& s : samples) maps.push_back(s.labelmap);
  return stack_labelmaps(maps);
}

/// One-hot argmax of the base detectors of `category_id` on precomputed base features (K x D x h x w).
inline Tensor predicted_labelmaps(const BaseModel& base, int category_id, const Tensor& base_features) {
  RecordingGuard off(false);
  const Tensor y = ld_forward(base.detectors(category_id), base_features.detach());
  const std::size_t K = y.dim(0), nc = y.dim(1), hw = y.dim(2) * y.dim(3);
  std::vector<double> v(y.size(), 0.0);
  for (std::size_t g = 0; g < K * nc; ++g) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < hw; ++c)
      if (y[g * hw + c] > y[g * hw + best]) best = c;
    v[g * hw + best] = 1.0;
  }
  return Tensor(y.shape(), std::move(v));
}

/// Flow-1 / flow-3: detector weights predicted from landmark-level features.
inline Tensor predict_detectors(const ParamSet& phi, const Tensor& features, const Tensor& labelmaps) {
  return ppnet_forward(phi, extract_landmark_features(features, labelmaps));
}

inline Tensor support_loss(const ParamSet& theta, const Tensor& omega, const Tensor& images, const Tensor& labels,
                           const ModelConfig& mcfg) {
  return heatmap_loss_logits(detector_logits(omega, fenet_forward(theta, images, mcfg)), labels);
}

/// Flow-2: `steps` functional SGD steps from `theta` on the support loss of f_{theta, omega}.
/// With `create_graph` every step stays differentiable (second order); otherwise
/// the step directions are constants and d theta' / d theta is the identity.
inline ParamSet inner_loop(const ParamSet& theta, const Tensor& omega, const Tensor& images, const Tensor& labels,
                           double lr, int steps, const ModelConfig& mcfg, bool create_graph,
                           std::vector<double>* losses = nullptr) {
  ParamSet cur = theta;
  for (int s = 0; s < steps; ++s) {
    const Tensor loss = support_loss(cur, omega, images, labels, mcfg);
    if (losses) losses->push_back(loss.item());
    ParamSet g = grad(loss, cur, create_graph);
    if (!create_graph) g = g.detached();
    cur = sgd_step(cur, g, lr);
  }
  return cur;
}

// --- flows as one differentiable task objective -----------------------------------------

struct TaskTensors {
  int category_id = 0;
  Tensor support_images, support_labels;  // labels used for F^point and the inner loss
  Tensor query_images, query_labels;
};

inline TaskTensors task_tensors(const Episode& ep, const BaseModel& base, LabelmapSource source,
                                const ModelConfig& mcfg) {
  TaskTensors t;
  t.category_id = ep.category_id;
  t.support_images = images_of(ep.support);
  t.query_images = images_of(ep.query);
  t.query_labels = labelmaps_of(ep.query);
  if (source == LabelmapSource::GroundTruth) {
    t.support_labels = labelmaps_of(ep.support);
  } else {
    RecordingGuard off(false);
    t.support_labels = predicted_labelmaps(base, ep.category_id, fenet_forward(base.theta0, t.support_images, mcfg));
  }
  return t;
}

struct FlowOptions {
  bool flow3 = true;  // re-predict the detectors from adapted features
};

/// Query loss l_q(f_{theta', omega'}) of one task as a function of `theta`
/// (flows 1-3); its gradient w.r.t. theta is the flow-4 direction.
inline Tensor task_objective(const ParamSet& theta, const TaskTensors& t, const BaseModel& base, const ParamSet& phi,
                             const ModelConfig& mcfg, const MetaConfig& cfg, FlowOptions opt = {}) {
  Tensor omega;
  {
    RecordingGuard off(false);
    omega = predict_detectors(phi, fenet_forward(base.theta0, t.support_images, mcfg), t.support_labels);
  }
  const ParamSet theta_p = inner_loop(theta, omega, t.support_images, t.support_labels, cfg.beta1, cfg.inner_steps,
                                      mcfg, cfg.order == Order::Second);
  const Tensor omega_p =
      opt.flow3 ? predict_detectors(phi, fenet_forward(theta_p, t.support_images, mcfg), t.support_labels) : omega;
  return heatmap_loss_logits(detector_logits(omega_p, fenet_forward(theta_p, t.query_images, mcfg)), t.query_labels);
}

/// d task_objective / d theta under the configured order.
inline ParamSet meta_gradient(const ParamSet& theta, const TaskTensors& t, const BaseModel& base, const ParamSet& phi,
                              const ModelConfig& mcfg, const MetaConfig& cfg, FlowOptions opt = {},
                              double* loss_out = nullptr) {
  Tape tape;
  TapeScope scope(tape);
  const ParamSet w = theta.watched();
  const Tensor loss = task_objective(w, t, base, phi, mcfg, cfg, opt);
  if (loss_out) *loss_out = loss.item();
  return grad(loss, w);
}

// --- training -----------------------------------------------------------------------------

/// Episode of training task `t`: a uniformly drawn seen category.
inline Episode training_episode(const std::vector<CategorySpec>& registry, const std::vector<int>& seen,
                                std::size_t K, std::size_t M, std::uint64_t seed, std::uint64_t stream, std::size_t t,
                                const RenderConfig& rcfg) {
  if (seen.empty()) throw UsageError("no seen categories to train on");
  const std::uint64_t s = derive_seed(seed, {stream, t});
  Rng rng(s);
  const int cat = seen[rng.below(seen.size())];
  return sample_episode(registry, cat, K, M, rng.next_u64(), rcfg);
}

struct PPNetTrainResult {
  ParamSet phi;
  std::vector<double> losses;
};

/// Trains phi on the query loss of f_{theta0, omega} with theta0 frozen.
inline PPNetTrainResult train_ppnet(const BaseModel& base, const std::vector<CategorySpec>& registry,
                                    const std::vector<int>& seen, const ModelConfig& mcfg, const MetaConfig& cfg,
                                    const RenderConfig& rcfg, std::uint64_t seed, const ProgressFn& progress = {}) {
  cfg.validate();
  PPNetTrainResult res;
  res.phi = init_ppnet(mcfg, derive_seed(seed, {0x99, 1}));
  for (std::size_t t = 0; t < cfg.n_tasks; ++t) {
    const Episode ep = training_episode(registry, seen, cfg.train_shots, cfg.train_queries, seed, 0x99, t, rcfg);
    const TaskTensors tt = task_tensors(ep, base, cfg.labelmap_source_train, mcfg);
    Tensor fs, fq;
    {
      RecordingGuard off(false);
      fs = fenet_forward(base.theta0, tt.support_images, mcfg);
      fq = fenet_forward(base.theta0, tt.query_images, mcfg);
    }
    Tape tape;
    TapeScope scope(tape);
    const ParamSet phi = res.phi.watched();
    const Tensor loss =
        heatmap_loss_logits(detector_logits(predict_detectors(phi, fs, tt.support_labels), fq), tt.query_labels);
    const ParamSet g = grad(loss, phi);
    res.phi = sgd_step(res.phi, g, decayed(cfg.gamma, t, cfg.n_tasks, cfg.decay_at)).detached();
    res.losses.push_back(loss.item());
    if (progress) progress(t, loss.item());
  }
  return res;
}

struct MetaTrainResult {
  ParamSet theta;
  std::vector<double> losses;
};

/// Meta-trains the feature extractor initialization; theta0, omega0 and phi stay frozen.
inline MetaTrainResult meta_train(const ParamSet& theta_init, const BaseModel& base, const ParamSet& phi,
                                  const std::vector<CategorySpec>& registry, const std::vector<int>& seen,
                                  const ModelConfig& mcfg, const MetaConfig& cfg, const RenderConfig& rcfg,
                                  std::uint64_t seed, FlowOptions opt = {}, const ProgressFn& progress = {}) {
  cfg.validate();
  MetaTrainResult res;
  res.theta = theta_init.detached();
  for (std::size_t t = 0; t < cfg.n_tasks; ++t) {
    const Episode ep = training_episode(registry, seen, cfg.train_shots, cfg.train_queries, seed, 0x3E, t, rcfg);
    const TaskTensors tt = task_tensors(ep, base, cfg.labelmap_source_train, mcfg);
    double loss = 0.0;
    const ParamSet g = meta_gradient(res.theta, tt, base, phi, mcfg, cfg, opt, &loss);
    res.theta = sgd_step(res.theta, g, decayed(cfg.beta2, t, cfg.n_tasks, cfg.decay_at)).detached();
    res.losses.push_back(loss);
    if (progress) progress(t, loss);
  }
  return res;
}

/// theta initialization for meta-training.
inline ParamSet initial_theta(const BaseModel& base, const ModelConfig& mcfg, ThetaInit init, std::uint64_t seed) {
  return init == ThetaInit::Base ? base.theta0 : init_fenet(mcfg, derive_seed(seed, {0x7E7A}));
}

// --- meta-test --------------------------------------------------------------------------------

struct Adapted {
  ParamSet theta;      // theta'
  Tensor omega;        // flow-1 detectors
  Tensor omega_prime;  // flow-3 detectors (== omega when flow-3 is skipped)
  std::vector<double> support_losses;  // l(theta_t, omega), t = 0..steps
  double beta1 = 0.0;                  // inner rate actually used
  bool monotone = true;                // final support loss <= initial
};

namespace detail {

inline Adapted adapt_once(const ParamSet& theta_init, const BaseModel& base, const ParamSet& phi,
                          const Tensor& images, const Tensor& labels, const ModelConfig& mcfg, double lr, int steps,
                          FlowOptions opt) {
  Adapted a;
  a.beta1 = lr;
  {
    RecordingGuard off(false);
    a.omega = predict_detectors(phi, fenet_forward(base.theta0, images, mcfg), labels);
  }
  {
    Tape tape;
    TapeScope scope(tape);
    a.theta = inner_loop(theta_init.watched(), a.omega, images, labels, lr, steps, mcfg, false, &a.support_losses)
                  .detached();
  }
  const Tensor features = fenet_forward(a.theta, images, mcfg);
  a.support_losses.push_back(heatmap_loss_logits(detector_logits(a.omega, features), labels).item());
  a.omega_prime = opt.flow3 ? predict_detectors(phi, features, labels) : a.omega;
  a.monotone = a.support_losses.back() <= a.support_losses.front();
  return a;
}

}  // namespace detail

/// Flows 1-3 on a support set with ground-truth labelmaps. If the support loss
/// ends above where it started, the inner rate is halved once and the
/// adaptation repeated; `monotone` reports the final outcome.
inline Adapted meta_adapt(const ParamSet& theta, const BaseModel& base, const ParamSet& phi,
                          const std::vector<Sample>& support, const ModelConfig& mcfg, const MetaConfig& cfg,
                          FlowOptions opt = {}) {
  const Tensor images = images_of(support), labels = labelmaps_of(support);
  Adapted a = detail::adapt_once(theta, base, phi, images, labels, mcfg, cfg.beta1, cfg.inner_steps, opt);
  if (!a.monotone) a = detail::adapt_once(theta, base, phi, images, labels, mcfg, cfg.beta1 / 2, cfg.inner_steps, opt);
  return a;
}

struct Prediction {
  Tensor heatmaps;                         // M x Nc x h x w
  std::vector<std::vector<Point>> coords;  // per query image
};

/// Forward pass only.
inline Prediction meta_predict(const ParamSet& theta, const Tensor& omega, const Tensor& query_images,
                               const ModelConfig& mcfg) {
  RecordingGuard off(false);
  Prediction p;
  p.heatmaps = ld_forward(omega, fenet_forward(theta, query_images, mcfg));
  for (std::size_t k = 0; k < p.heatmaps.dim(0); ++k) p.coords.push_back(detect(image_slice(p.heatmaps, k), mcfg.H, mcfg.W));
  return p;
}

}  // namespace dynland
