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

#include <atomic>
#include <deque>
#include <cstdint>
#include <vector>

#include "dynland/core/tensor.hpp"

namespace dynland {

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  Matmul,
  Transpose,
  Permute,
  Reshape,
  Conv,
  ConvInputAdjoint,
  ConvKernelAdjoint,
  BroadcastAxis,
  ReduceToAxis,
  AvgPool2,
  Unpool2,
  Relu,
  SpatialSoftmax,
  SpatialSum,
  SpatialBroadcast,
  Sum,
  BroadcastScalar,
  Mean,
  Xent,
  SoftmaxXent,
  MaskedReciprocal,
  Mse,
  GatherRows,
  ScatterRows,
};

/// One recorded primitive application. `inputs` keep their own node ids so the
/// backward sweep can itself be recorded (grad-of-grad).
struct Node {
  OpKind kind = OpKind::Leaf;
  std::vector<Tensor> inputs;
  Tensor output;
  Tensor constant;  // op-specific constant operand (mask, target); never differentiated
  double scalar = 0.0;
  std::vector<std::size_t> aux;
};

/// Append-only record of primitive applications. Node i's inputs always have
/// indices < i. Not shareable across threads.
class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const noexcept { return id_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }

  /// Number of backward sweeps currently running with recording enabled.
  int nesting_depth() const noexcept { return depth_; }

  /// Registers `t` as a differentiable leaf.
  Tensor watch(const Tensor& t) {
    Node n;
    n.kind = OpKind::Leaf;
    n.output = t.detach();
    return push(std::move(n));
  }

  Tensor push(Node n) {
    n.output.node_ = static_cast<std::int64_t>(nodes_.size());
    n.output.tape_ = id_;
    Tensor out = n.output;
    nodes_.push_back(std::move(n));
    return out;
  }

  void clear() { nodes_.clear(); }

  static Tape*& active() {
    static thread_local Tape* current = nullptr;
    return current;
  }
  static bool& recording_flag() {
    static thread_local bool flag = true;
    return flag;
  }
  static bool recording() { return active() != nullptr && recording_flag(); }

 private:
  friend class DepthGuard;
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  std::deque<Node> nodes_;  // stable references while a recorded sweep appends
  std::uint64_t id_;
  int depth_ = 0;
};

inline bool Tensor::on_tape() const noexcept {
  const Tape* t = Tape::active();
  return node_ >= 0 && t != nullptr && tape_ == t->id();
}

/// Makes `tape` the active tape on this thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(Tape::active()), prev_flag_(Tape::recording_flag()) {
    Tape::active() = &tape;
    Tape::recording_flag() = true;
  }
  ~TapeScope() {
    Tape::active() = prev_;
    Tape::recording_flag() = prev_flag_;
  }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
  bool prev_flag_;
};

/// Enables or suspends recording on the active tape within a scope.
class RecordingGuard {
 public:
  explicit RecordingGuard(bool enabled) : prev_(Tape::recording_flag()) { Tape::recording_flag() = enabled; }
  ~RecordingGuard() { Tape::recording_flag() = prev_; }
  RecordingGuard(const RecordingGuard&) = delete;
  RecordingGuard& operator=(const RecordingGuard&) = delete;

 private:
  bool prev_;
};

class DepthGuard {
 public:
  explicit DepthGuard(Tape& t) : tape_(t) { ++tape_.depth_; }
  ~DepthGuard() { --tape_.depth_; }
  DepthGuard(const DepthGuard&) = delete;
  DepthGuard& operator=(const DepthGuard&) = delete;

 private:
  Tape& tape_;
};

}  // namespace dynland
