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
#include <string_view>
#include <utility>
#include <vector>

#include "dynland/core/ops.hpp"
#include "dynland/core/tape.hpp"
#include "dynland/core/tensor.hpp"

namespace dynland {

/// Named trainable tensors with unique names, iterated in insertion order.
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor t) {
    if (contains(name)) throw UsageError("duplicate parameter name '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(t));
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }

  const Tensor& at(std::string_view name) const {
    const Tensor* t = find(name);
    if (!t) throw UsageError("unknown parameter '" + std::string(name) + "'");
    return *t;
  }

  Tensor& at(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).at(name));
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  /// Every entry registered as a leaf on the active tape.
  ParamSet watched() const {
    Tape* tape = Tape::active();
    if (!tape) throw UsageError("ParamSet::watched requires an active tape");
    ParamSet out;
    for (const auto& [name, t] : entries_) out.entries_.emplace_back(name, tape->watch(t));
    return out;
  }

  ParamSet detached() const {
    ParamSet out;
    for (const auto& [name, t] : entries_) out.entries_.emplace_back(name, t.detach());
    return out;
  }

  /// Concatenation of all values in entry order.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(numel());
    for (const auto& [_, t] : entries_) out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
  }

  /// Same names and shapes as `*this`, values taken from `flat`.
  ParamSet unflatten(const std::vector<double>& flat) const {
    if (flat.size() != numel()) throw ShapeError("unflatten: length mismatch");
    ParamSet out;
    std::size_t off = 0;
    for (const auto& [name, t] : entries_) {
      std::vector<double> v(flat.begin() + static_cast<std::ptrdiff_t>(off),
                            flat.begin() + static_cast<std::ptrdiff_t>(off + t.size()));
      off += t.size();
      out.entries_.emplace_back(name, Tensor(t.shape(), std::move(v)));
    }
    return out;
  }

  /// Byte-level equality of names, shapes and values.
  bool same_values(const ParamSet& o) const {
    if (size() != o.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (entries_[i].first != o.entries_[i].first || !entries_[i].second.same_values(o.entries_[i].second)) return false;
    }
    return true;
  }

  /// Entries whose names start with `prefix`, with the prefix removed.
  ParamSet with_prefix_stripped(std::string_view prefix) const {
    ParamSet out;
    for (const auto& [name, t] : entries_) {
      if (name.starts_with(prefix)) out.entries_.emplace_back(name.substr(prefix.size()), t);
    }
    return out;
  }

  void merge(const ParamSet& other, std::string_view prefix = "") {
    for (const auto& [name, t] : other) add(std::string(prefix) + name, t);
  }

 private:
  const Tensor* find(std::string_view name) const {
    for (const auto& e : entries_)
      if (e.first == name) return &e.second;
    return nullptr;
  }

  std::vector<Entry> entries_;
};

/// Functional gradient step: returns params - lr * grads. Differentiable when
/// either side is on the tape.
inline ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient count mismatch");
  ParamSet out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params.entry(i);
    const auto& [gname, g] = grads.entry(i);
    if (name != gname) throw ShapeError("sgd_step: name mismatch '" + name + "' vs '" + gname + "'");
    if (p.shape() != g.shape()) {
      throw ShapeError("sgd_step: shape mismatch for '" + name + "': " + to_string(p.shape()) + " vs " +
                       to_string(g.shape()));
    }
    out.add(name, sub(p, scale(g, lr)));
  }
  return out;
}

}  // namespace dynland
