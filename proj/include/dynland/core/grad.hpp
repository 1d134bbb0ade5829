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
#include <optional>
#include <span>
#include <vector>

#include "dynland/core/ops.hpp"
#include "dynland/core/param_set.hpp"
#include "dynland/core/tape.hpp"

namespace dynland {

/// Reverse sweep from a scalar `loss` to `targets`.
///
/// Targets that `loss` does not depend on receive zeros. With `create_graph`
/// the sweep records onto the active tape, so the returned gradients can be
/// differentiated again.
inline std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> targets, bool create_graph = false) {
  if (loss.size() != 1) throw ShapeError("grad: loss must be scalar, got " + to_string(loss.shape()));
  std::vector<Tensor> result;
  result.reserve(targets.size());
  Tape* tape = Tape::active();
  if (!tape || !loss.on_tape()) {
    for (const auto& t : targets) result.push_back(Tensor::zeros(t.shape()));
    return result;
  }

  const auto top = static_cast<std::size_t>(loss.node());
  std::size_t lowest = top + 1;
  std::vector<char> is_target(top + 1, 0);
  for (const auto& t : targets) {
    if (t.on_tape() && static_cast<std::size_t>(t.node()) <= top) {
      is_target[static_cast<std::size_t>(t.node())] = 1;
      lowest = std::min(lowest, static_cast<std::size_t>(t.node()));
    }
  }

  // Forward reachability: which nodes depend on any target.
  std::vector<char> depends(top + 1, 0);
  for (std::size_t i = lowest; i <= top && lowest <= top; ++i) {
    if (is_target[i]) {
      depends[i] = 1;
      continue;
    }
    for (const auto& in : tape->node(i).inputs) {
      if (in.on_tape() && depends[static_cast<std::size_t>(in.node())]) {
        depends[i] = 1;
        break;
      }
    }
  }

  std::vector<std::optional<Tensor>> adjoint(top + 1);
  std::vector<std::optional<Tensor>> captured(top + 1);
  {
    RecordingGuard rec(create_graph);
    std::optional<DepthGuard> depth;
    if (create_graph) depth.emplace(*tape);
    adjoint[top] = Tensor::scalar(1.0);
    for (std::size_t i = top + 1; i-- > lowest;) {
      if (!adjoint[i] || !depends[i]) continue;
      if (is_target[i]) captured[i] = adjoint[i];
      const Node& n = tape->node(i);
      std::vector<char> want(n.inputs.size(), 0);
      bool any = false;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const auto& in = n.inputs[k];
        if (in.on_tape() && depends[static_cast<std::size_t>(in.node())]) want[k] = any = 1;
      }
      if (!any) continue;
      auto contrib = detail::vjp(n, *adjoint[i], want);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (!want[k] || !contrib[k]) continue;
        auto& slot = adjoint[static_cast<std::size_t>(n.inputs[k].node())];
        slot = slot ? add(*slot, *contrib[k]) : *contrib[k];
      }
      if (!is_target[i]) adjoint[i].reset();
    }
  }

  for (const auto& t : targets) {
    if (t.on_tape() && static_cast<std::size_t>(t.node()) <= top && captured[static_cast<std::size_t>(t.node())]) {
      result.push_back(*captured[static_cast<std::size_t>(t.node())]);
    } else {
      result.push_back(Tensor::zeros(t.shape()));
    }
  }
  return result;
}

inline Tensor grad(const Tensor& loss, const Tensor& target, bool create_graph = false) {
  return grad(loss, std::span<const Tensor>(&target, 1), create_graph).front();
}

/// Gradients with the same names and order as `params`.
inline ParamSet grad(const Tensor& loss, const ParamSet& params, bool create_graph = false) {
  std::vector<Tensor> targets;
  targets.reserve(params.size());
  for (const auto& [_, t] : params) targets.push_back(t);
  auto gs = grad(loss, std::span<const Tensor>(targets), create_graph);
  ParamSet out;
  for (std::size_t i = 0; i < params.size(); ++i) out.add(params.entry(i).first, std::move(gs[i]));
  return out;
}

}  // namespace dynland
