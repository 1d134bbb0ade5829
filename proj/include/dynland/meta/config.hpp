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

#include <cstddef>
#include <cstdint>
#include <string>

#include "dynland/core/error.hpp"

namespace dynland {

enum class Order { Second, First };
enum class LabelmapSource { Predicted, GroundTruth };
enum class ThetaInit { Base, Random };

inline const char* to_string(Order o) { return o == Order::Second ? "second" : "first"; }
inline const char* to_string(LabelmapSource s) { return s == LabelmapSource::Predicted ? "predicted" : "ground_truth"; }
inline const char* to_string(ThetaInit i) { return i == ThetaInit::Base ? "base" : "random"; }

inline Order parse_order(const std::string& s) {
  if (s == "second") return Order::Second;
  if (s == "first") return Order::First;
  throw UsageError("order must be 'second' or 'first', got '" + s + "'");
}

inline LabelmapSource parse_labelmap_source(const std::string& s) {
  if (s == "predicted") return LabelmapSource::Predicted;
  if (s == "ground_truth") return LabelmapSource::GroundTruth;
  throw UsageError("labelmap source must be 'predicted' or 'ground_truth', got '" + s + "'");
}

inline ThetaInit parse_theta_init(const std::string& s) {
  if (s == "base") return ThetaInit::Base;
  if (s == "random") return ThetaInit::Random;
  throw UsageError("init must be 'base' or 'random', got '" + s + "'");
}

/// Hyperparameters of base pretraining, PPNet training, meta-training and
/// meta-test adaptation, plus the baselines' budgets.
struct MetaConfig {
  // meta-learning
  double beta1 = 0.01;   // inner learning rate
  double beta2 = 0.03;   // outer learning rate
  double gamma = 0.002;  // PPNet learning rate
  int inner_steps = 5;
  std::size_t n_tasks = 4000;
  double decay_at = 0.5;  // fraction of n_tasks after which rates drop x0.1
  Order order = Order::Second;
  LabelmapSource labelmap_source_train = LabelmapSource::Predicted;
  ThetaInit init = ThetaInit::Base;
  std::size_t train_shots = 5;    // support images per training task
  std::size_t train_queries = 8;  // query images per training task

  // base pretraining
  std::size_t base_steps = 2000;
  std::size_t base_batch = 8;
  double base_lr = 0.05;
  double base_loss_threshold = 0.0;  // stop early when the running loss drops below; 0 disables

  // fine-tune baseline
  std::size_t ft_steps = 50;
  double ft_lr = 0.01;

  // max-way MAML baseline
  std::size_t maml_tasks = 2000;
  double maml_inner_lr = 0.01;
  double maml_outer_lr = 0.03;
  int maml_inner_steps = 5;

  void validate() const {
    // Zero rates are allowed so a stage can be frozen.
    if (!(beta1 >= 0 && beta2 >= 0 && gamma >= 0)) throw UsageError("beta1, beta2 and gamma must be non-negative");
    if (inner_steps < 0) throw UsageError("inner_steps must be >= 0");
    if (maml_inner_steps < 0) throw UsageError("maml_inner_steps must be >= 0");
    if (!(decay_at > 0 && decay_at <= 1)) throw UsageError("decay_at must be in (0, 1]");
    if (train_shots < 1 || train_queries < 1) throw UsageError("train_shots and train_queries must be >= 1");
    if (base_batch < 1) throw UsageError("base_batch must be >= 1");
    if (!(base_lr >= 0 && ft_lr >= 0 && maml_inner_lr >= 0 && maml_outer_lr >= 0)) {
      throw UsageError("learning rates must be non-negative");
    }
  }
};

/// Step-decayed rate: x0.1 once `step` reaches decay_at * total.
inline double decayed(double rate, std::size_t step, std::size_t total, double decay_at) {
  return static_cast<double>(step) >= decay_at * static_cast<double>(total) ? rate * 0.1 : rate;
}

}  // namespace dynland
