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
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dynland/core/error.hpp"

namespace dynland {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Tape;

/// Dense row-major array of doubles, rank <= 4.
///
/// Values are immutable and shared on copy. A tensor produced while a tape is
/// recording carries the index of the node that produced it; `detach()` drops
/// that link and yields a constant.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    if (shape_.size() > 4) throw ShapeError("tensor rank " + std::to_string(shape_.size()) + " exceeds 4");
    if (numel(shape_) != data.size()) {
      throw ShapeError("shape " + to_string(shape_) + " does not match data length " +
                       std::to_string(data.size()));
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double value) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_->size(); }
  std::span<const double> data() const noexcept { return *data_; }
  const std::vector<double>& values() const noexcept { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return (*data_)[0];
  }

  /// Same values, no tape provenance.
  Tensor detach() const {
    Tensor t = *this;
    t.node_ = -1;
    t.tape_ = 0;
    return t;
  }

  std::int64_t node() const noexcept { return node_; }
  std::uint64_t tape_id() const noexcept { return tape_; }

  /// True if this tensor was recorded on the tape that is active on this thread.
  inline bool on_tape() const noexcept;

  bool same_values(const Tensor& o) const { return shape_ == o.shape_ && *data_ == *o.data_; }

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::int64_t node_ = -1;
  std::uint64_t tape_ = 0;
};

}  // namespace dynland
