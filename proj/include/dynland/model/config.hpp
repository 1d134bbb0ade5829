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
#include <string>
#include <vector>

#include "dynland/core/error.hpp"

namespace dynland {

/// Geometry and widths of the feature extractor and parameter predictor.
struct ModelConfig {
  std::size_t H = 32;
  std::size_t W = 32;
  std::size_t h = 8;
  std::size_t w = 8;
  std::size_t D = 32;
  std::size_t hidden = 64;
  std::vector<std::size_t> channels{16, 16, 32, 32};  // one entry per conv layer
  std::vector<std::size_t> pool_after{0, 1};          // 2x2 average pool follows these layers

  std::size_t conv_depth() const noexcept { return channels.size(); }
  std::size_t cells() const noexcept { return h * w; }

  void validate() const {
    if (D < 1) throw UsageError("model: D must be >= 1");
    if (channels.empty() || channels.back() != D) throw UsageError("model: last conv width must equal D");
    std::size_t hh = H, ww = W;
    for (auto p : pool_after) {
      if (p >= channels.size()) throw UsageError("model: pool index out of range");
      if (hh % 2 || ww % 2) throw UsageError("model: pooling an odd spatial size");
      hh /= 2;
      ww /= 2;
    }
    if (hh != h || ww != w) {
      throw UsageError("model: pooling maps " + std::to_string(H) + "x" + std::to_string(W) + " to " +
                       std::to_string(hh) + "x" + std::to_string(ww) + ", expected " + std::to_string(h) + "x" +
                       std::to_string(w));
    }
  }
};

}  // namespace dynland
