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
#include <cmath>
#include <cstddef>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynland/core/tape.hpp"
#include "dynland/core/tensor.hpp"

// Differentiable primitives. Every vector-Jacobian product below is written in
// terms of these same primitives, so a backward sweep that runs while the tape
// is recording produces differentiable gradients.

namespace dynland {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

inline Tensor finish(OpKind kind, std::vector<Tensor> inputs, Shape shape, std::vector<double> data, const char* op,
                     Tensor constant = {}, double scalar = 0.0, std::vector<std::size_t> aux = {}) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite output in ") + op);
  }
  Tensor out(std::move(shape), std::move(data));
  if (!Tape::recording()) return out;
  const bool tracked = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.on_tape(); });
  if (!tracked) return out;
  Node n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.output = std::move(out);
  n.constant = std::move(constant);
  n.scalar = scalar;
  n.aux = std::move(aux);
  return Tape::active()->push(std::move(n));
}

// Splits `shape` into (outer, extent, inner) around `axis`.
inline void split_axis(const Shape& shape, std::size_t axis, std::size_t& outer, std::size_t& extent,
                       std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

struct ConvDims {
  std::size_t n, c, h, w;
};

inline ConvDims image_dims(const Tensor& x, const char* op) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  throw ShapeError(std::string(op) + ": expected rank 3 or 4 image tensor, got " + to_string(x.shape()));
}

inline void require_kernel(const Tensor& k, const char* op) {
  if (k.rank() != 4 || k.dim(2) != 3 || k.dim(3) != 3) {
    throw ShapeError(std::string(op) + ": expected O x C x 3 x 3 kernel, got " + to_string(k.shape()));
  }
}

inline Shape image_shape(std::size_t rank, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  if (rank == 3) return {c, h, w};
  return {n, c, h, w};
}

// Valid index range [lo, hi) for destination positions when source = dest + shift.
inline void valid_range(std::size_t extent, int shift, std::size_t& lo, std::size_t& hi) {
  const auto e = static_cast<long>(extent);
  lo = static_cast<std::size_t>(std::max(0L, -static_cast<long>(shift)));
  hi = static_cast<std::size_t>(std::min(e, e - shift));
}

#if defined(__AVX__)
using simd_t = double __attribute__((vector_size(32)));
inline constexpr std::size_t kTileRows = 4, kTileCols = 8;
#else
using simd_t = double __attribute__((vector_size(16)));
inline constexpr std::size_t kTileRows = 4, kTileCols = 4;
#endif

// C[M x N] += A[M x K] * B[K x N], all row-major and densely packed.
// Every element is accumulated from zero over ascending k and then added to C,
// so the tiled, vector and scalar paths produce identical bits.
inline void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const double* __restrict A,
                     const double* __restrict B, double* __restrict C) {
  constexpr std::size_t L = sizeof(simd_t) / sizeof(double);
  constexpr std::size_t TM = kTileRows, TN = kTileCols, NV = TN / L;
  std::size_t i = 0;
  for (; i + TM <= M; i += TM) {
    std::size_t j = 0;
    for (; j + TN <= N; j += TN) {
      simd_t acc[TM][NV];
      for (auto& row : acc)
        for (auto& v : row) v = simd_t{};
      for (std::size_t k = 0; k < K; ++k) {
        simd_t b[NV];
        for (std::size_t c = 0; c < NV; ++c) std::memcpy(&b[c], B + k * N + j + c * L, sizeof(simd_t));
        for (std::size_t r = 0; r < TM; ++r) {
          const double a = A[(i + r) * K + k];
          for (std::size_t c = 0; c < NV; ++c) acc[r][c] += a * b[c];
        }
      }
      for (std::size_t r = 0; r < TM; ++r)
        for (std::size_t c = 0; c < NV; ++c)
          for (std::size_t l = 0; l < L; ++l) C[(i + r) * N + j + c * L + l] += acc[r][c][l];
    }
    for (; j < N; ++j)
      for (std::size_t r = 0; r < TM; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) acc += A[(i + r) * K + k] * B[k * N + j];
        C[(i + r) * N + j] += acc;
      }
  }
  for (; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += A[i * K + k] * B[k * N + j];
      C[i * N + j] += acc;
    }
}

// cols[(c*9 + di*3 + dj), p] = x[c, p + (di-1, dj-1)] with zero padding.
inline void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W, double* cols) {
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c)
    for (int di = 0; di < 3; ++di)
      for (int dj = 0; dj < 3; ++dj) {
        double* row = cols + (c * 9 + static_cast<std::size_t>(di * 3 + dj)) * HW;
        std::fill_n(row, HW, 0.0);
        std::size_t ilo, ihi, jlo, jhi;
        valid_range(H, di - 1, ilo, ihi);
        valid_range(W, dj - 1, jlo, jhi);
        for (std::size_t i = ilo; i < ihi; ++i) {
          const double* src = x + c * HW + (i + di - 1) * W + (dj - 1);
          for (std::size_t j = jlo; j < jhi; ++j) row[i * W + j] = src[j];
        }
      }
}

// Adjoint of im2col: accumulates shifted rows back into x.
inline void col2im(const double* cols, std::size_t C, std::size_t H, std::size_t W, double* x) {
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c)
    for (int di = 0; di < 3; ++di)
      for (int dj = 0; dj < 3; ++dj) {
        const double* row = cols + (c * 9 + static_cast<std::size_t>(di * 3 + dj)) * HW;
        std::size_t ilo, ihi, jlo, jhi;
        valid_range(H, di - 1, ilo, ihi);
        valid_range(W, dj - 1, jlo, jhi);
        for (std::size_t i = ilo; i < ihi; ++i) {
          double* dst = x + c * HW + (i + di - 1) * W + (dj - 1);
          for (std::size_t j = jlo; j < jhi; ++j) dst[j] += row[i * W + j];
        }
      }
}

}  // namespace detail

// --- elementwise --------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::finish(OpKind::Add, {a, b}, a.shape(), std::move(out), "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::finish(OpKind::Sub, {a, b}, a.shape(), std::move(out), "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::finish(OpKind::Mul, {a, b}, a.shape(), std::move(out), "mul");
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return detail::finish(OpKind::Scale, {a}, a.shape(), std::move(out), "scale", {}, c);
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return detail::finish(OpKind::Relu, {x}, x.shape(), std::move(out), "relu");
}

/// mask / x where mask != 0, zero elsewhere.
inline Tensor masked_reciprocal(const Tensor& x, const Tensor& mask) {
  detail::require_same_shape(x, mask, "masked_reciprocal");
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i] != 0.0) out[i] = mask[i] / x[i];
  }
  return detail::finish(OpKind::MaskedReciprocal, {x}, x.shape(), std::move(out), "masked_reciprocal", mask.detach());
}

// --- linear algebra and layout ------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(m, n, k, a.data().data(), b.data().data(), out.data());
  return detail::finish(OpKind::Matmul, {a, b}, {m, n}, std::move(out), "matmul");
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return detail::finish(OpKind::Transpose, {a}, {n, m}, std::move(out), "transpose");
}

/// Output axis i is input axis perm[i].
inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  const std::size_t r = a.rank();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch for " + to_string(a.shape()));
  std::vector<char> seen(r, 0);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = 1;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.dim(perm[i]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * a.dim(i);
  std::vector<double> out(a.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_stride[perm[i]];
    out[flat] = a[src];
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return detail::finish(OpKind::Permute, {a}, std::move(out_shape), std::move(out), "permute", {}, 0.0, perm);
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.values());
  return detail::finish(OpKind::Reshape, {a}, std::move(shape), std::move(out), "reshape");
}

/// Rows `idx` of a 2-D tensor, in the given order.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.rank() != 2) throw ShapeError("gather_rows: expected rank 2, got " + to_string(a.shape()));
  const std::size_t cols = a.dim(1);
  std::vector<double> out(idx.size() * cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= a.dim(0)) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(a.data().data() + idx[r] * cols, cols, out.data() + r * cols);
  }
  return detail::finish(OpKind::GatherRows, {a}, {idx.size(), cols}, std::move(out), "gather_rows", {}, 0.0, idx);
}

/// Adjoint of gather_rows: a `rows` x C tensor of zeros with a[r] added into row idx[r].
inline Tensor scatter_rows(const Tensor& a, const std::vector<std::size_t>& idx, std::size_t rows) {
  if (a.rank() != 2 || a.dim(0) != idx.size()) {
    throw ShapeError("scatter_rows: expected " + std::to_string(idx.size()) + " rows, got " + to_string(a.shape()));
  }
  const std::size_t cols = a.dim(1);
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= rows) throw ShapeError("scatter_rows: row index out of range");
    for (std::size_t c = 0; c < cols; ++c) out[idx[r] * cols + c] += a[r * cols + c];
  }
  std::vector<std::size_t> aux = idx;
  aux.push_back(rows);
  return detail::finish(OpKind::ScatterRows, {a}, {rows, cols}, std::move(out), "scatter_rows", {}, 0.0,
                        std::move(aux));
}

// --- broadcasting needed by biases and softmax ----------------------------------

/// Broadcasts a vector along `axis` of `shape`.
inline Tensor broadcast_axis(const Tensor& b, const Shape& shape, std::size_t axis) {
  if (b.rank() != 1 || axis >= shape.size() || shape[axis] != b.dim(0)) {
    throw ShapeError("broadcast_axis: cannot broadcast " + to_string(b.shape()) + " into " + to_string(shape));
  }
  std::size_t outer, extent, inner;
  detail::split_axis(shape, axis, outer, extent, inner);
  std::vector<double> out(numel(shape));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      std::fill_n(out.data() + (o * extent + e) * inner, inner, b[e]);
  return detail::finish(OpKind::BroadcastAxis, {b}, shape, std::move(out), "broadcast_axis", {}, 0.0, {axis});
}

/// Sums over every axis except `axis`.
inline Tensor reduce_to_axis(const Tensor& g, std::size_t axis) {
  if (axis >= g.rank()) throw ShapeError("reduce_to_axis: axis out of range for " + to_string(g.shape()));
  std::size_t outer, extent, inner;
  detail::split_axis(g.shape(), axis, outer, extent, inner);
  std::vector<double> out(extent, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e) {
      const double* p = g.data().data() + (o * extent + e) * inner;
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += p[i];
      out[e] += s;
    }
  return detail::finish(OpKind::ReduceToAxis, {g}, {extent}, std::move(out), "reduce_to_axis", {}, 0.0, {axis});
}

inline Tensor add_bias(const Tensor& x, const Tensor& b, std::size_t axis) {
  return add(x, broadcast_axis(b, x.shape(), axis));
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::finish(OpKind::Sum, {x}, {}, {s}, "sum");
}

inline Tensor broadcast_scalar(const Tensor& s, const Shape& shape) {
  if (s.size() != 1) throw ShapeError("broadcast_scalar: expected scalar, got " + to_string(s.shape()));
  return detail::finish(OpKind::BroadcastScalar, {s}, shape, std::vector<double>(numel(shape), s[0]),
                        "broadcast_scalar");
}

inline Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::finish(OpKind::Mean, {x}, {}, {s / static_cast<double>(x.size())}, "mean");
}

/// Sums the last two axes away.
inline Tensor spatial_sum(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("spatial_sum: expected rank >= 2, got " + to_string(x.shape()));
  const std::size_t hw = x.dim(x.rank() - 2) * x.dim(x.rank() - 1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  const std::size_t groups = x.size() / hw;
  std::vector<double> out(groups, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += x[g * hw + i];
    out[g] = s;
  }
  return detail::finish(OpKind::SpatialSum, {x}, std::move(out_shape), std::move(out), "spatial_sum");
}

/// Repeats every element over a trailing h x w grid.
inline Tensor spatial_broadcast(const Tensor& s, std::size_t h, std::size_t w) {
  Shape out_shape = s.shape();
  out_shape.push_back(h);
  out_shape.push_back(w);
  if (out_shape.size() > 4) throw ShapeError("spatial_broadcast: result rank exceeds 4");
  std::vector<double> out(s.size() * h * w);
  for (std::size_t g = 0; g < s.size(); ++g) std::fill_n(out.data() + g * h * w, h * w, s[g]);
  return detail::finish(OpKind::SpatialBroadcast, {s}, std::move(out_shape), std::move(out), "spatial_broadcast", {},
                        0.0, {h, w});
}

// --- spatial ------------------------------------------------------------------

/// Same-size 3x3 convolution (cross-correlation), stride 1, zero padding.
/// x: [N x] C x H x W, k: O x C x 3 x 3 -> [N x] O x H x W.
inline Tensor conv2d_same(const Tensor& x, const Tensor& k) {
  const auto d = detail::image_dims(x, "conv2d_same");
  detail::require_kernel(k, "conv2d_same");
  if (k.dim(1) != d.c) {
    throw ShapeError("conv2d_same: shape mismatch " + to_string(x.shape()) + " vs kernel " + to_string(k.shape()));
  }
  const std::size_t O = k.dim(0), HW = d.h * d.w, CT = d.c * 9;
  std::vector<double> out(d.n * O * HW, 0.0);
  std::vector<double> cols(CT * HW);
  for (std::size_t n = 0; n < d.n; ++n) {
    detail::im2col(x.data().data() + n * d.c * HW, d.c, d.h, d.w, cols.data());
    detail::gemm_acc(O, HW, CT, k.data().data(), cols.data(), out.data() + n * O * HW);
  }
  return detail::finish(OpKind::Conv, {x, k}, detail::image_shape(x.rank(), d.n, O, d.h, d.w), std::move(out),
                        "conv2d_same");
}

/// Adjoint of conv2d_same with respect to its input: g: [N x] O x H x W -> [N x] C x H x W.
inline Tensor conv2d_input_adjoint(const Tensor& g, const Tensor& k) {
  const auto d = detail::image_dims(g, "conv2d_input_adjoint");
  detail::require_kernel(k, "conv2d_input_adjoint");
  if (k.dim(0) != d.c) {
    throw ShapeError("conv2d_input_adjoint: shape mismatch " + to_string(g.shape()) + " vs kernel " +
                     to_string(k.shape()));
  }
  const std::size_t O = d.c, C = k.dim(1), HW = d.h * d.w, CT = C * 9;
  std::vector<double> out(d.n * C * HW, 0.0);
  std::vector<double> cols(CT * HW);
  std::vector<double> k_t(CT * O);  // CT x O
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t ct = 0; ct < CT; ++ct) k_t[ct * O + o] = k[o * CT + ct];
  for (std::size_t n = 0; n < d.n; ++n) {
    std::fill(cols.begin(), cols.end(), 0.0);
    detail::gemm_acc(CT, HW, O, k_t.data(), g.data().data() + n * O * HW, cols.data());
    detail::col2im(cols.data(), C, d.h, d.w, out.data() + n * C * HW);
  }
  return detail::finish(OpKind::ConvInputAdjoint, {g, k}, detail::image_shape(g.rank(), d.n, C, d.h, d.w),
                        std::move(out), "conv2d_input_adjoint");
}

/// Adjoint of conv2d_same with respect to its kernel: (x, g) -> O x C x 3 x 3, summed over the batch.
inline Tensor conv2d_kernel_adjoint(const Tensor& x, const Tensor& g) {
  const auto dx = detail::image_dims(x, "conv2d_kernel_adjoint");
  const auto dg = detail::image_dims(g, "conv2d_kernel_adjoint");
  if (dx.n != dg.n || dx.h != dg.h || dx.w != dg.w || x.rank() != g.rank()) {
    throw ShapeError("conv2d_kernel_adjoint: shape mismatch " + to_string(x.shape()) + " vs " + to_string(g.shape()));
  }
  const std::size_t C = dx.c, O = dg.c, HW = dx.h * dx.w, CT = C * 9;
  std::vector<double> out(O * CT, 0.0);
  std::vector<double> cols(CT * HW);
  std::vector<double> cols_t(HW * CT);
  for (std::size_t n = 0; n < dx.n; ++n) {
    detail::im2col(x.data().data() + n * C * HW, C, dx.h, dx.w, cols.data());
    for (std::size_t ct = 0; ct < CT; ++ct)
      for (std::size_t p = 0; p < HW; ++p) cols_t[p * CT + ct] = cols[ct * HW + p];
    detail::gemm_acc(O, CT, HW, g.data().data() + n * O * HW, cols_t.data(), out.data());
  }
  return detail::finish(OpKind::ConvKernelAdjoint, {x, g}, {O, C, 3, 3}, std::move(out), "conv2d_kernel_adjoint");
}

/// 2x2 average pooling over the last two axes.
inline Tensor avg_pool2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("avg_pool2: expected rank >= 2, got " + to_string(x.shape()));
  const std::size_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
  if (H % 2 || W % 2) throw ShapeError("avg_pool2: odd spatial size " + to_string(x.shape()));
  const std::size_t groups = x.size() / (H * W), h = H / 2, w = W / 2;
  Shape out_shape = x.shape();
  out_shape[x.rank() - 2] = h;
  out_shape[x.rank() - 1] = w;
  std::vector<double> out(groups * h * w);
  for (std::size_t g = 0; g < groups; ++g) {
    const double* src = x.data().data() + g * H * W;
    double* dst = out.data() + g * h * w;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double* p = src + 2 * i * W + 2 * j;
        dst[i * w + j] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
      }
  }
  return detail::finish(OpKind::AvgPool2, {x}, std::move(out_shape), std::move(out), "avg_pool2");
}

/// Adjoint of avg_pool2: spreads each value over its 2x2 block, scaled by 1/4.
inline Tensor unpool2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("unpool2: expected rank >= 2, got " + to_string(x.shape()));
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t groups = x.size() / (h * w), H = 2 * h, W = 2 * w;
  Shape out_shape = x.shape();
  out_shape[x.rank() - 2] = H;
  out_shape[x.rank() - 1] = W;
  std::vector<double> out(groups * H * W);
  for (std::size_t g = 0; g < groups; ++g) {
    const double* src = x.data().data() + g * h * w;
    double* dst = out.data() + g * H * W;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) dst[i * W + j] = 0.25 * src[(i / 2) * w + j / 2];
  }
  return detail::finish(OpKind::Unpool2, {x}, std::move(out_shape), std::move(out), "unpool2");
}

/// Softmax over the last two axes, independently for every leading index.
inline Tensor spatial_softmax(const Tensor& x) {
  if (x.rank() < 3) throw ShapeError("spatial_softmax: expected rank >= 3, got " + to_string(x.shape()));
  const std::size_t hw = x.dim(x.rank() - 2) * x.dim(x.rank() - 1);
  const std::size_t groups = x.size() / hw;
  std::vector<double> out(x.size());
  for (std::size_t g = 0; g < groups; ++g) {
    const double* src = x.data().data() + g * hw;
    double* dst = out.data() + g * hw;
    const double mx = *std::max_element(src, src + hw);
    double z = 0.0;
    for (std::size_t i = 0; i < hw; ++i) z += (dst[i] = std::exp(src[i] - mx));
    for (std::size_t i = 0; i < hw; ++i) dst[i] /= z;
  }
  return detail::finish(OpKind::SpatialSoftmax, {x}, x.shape(), std::move(out), "spatial_softmax");
}

// --- losses -------------------------------------------------------------------

/// Cross-entropy between per-channel distributions `pred` and targets over the
/// last two axes: -(1/n) sum target * log(pred), where n counts channels whose
/// target has any mass. Channels with an all-zero target contribute nothing.
inline Tensor xent_heatmap(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "xent_heatmap");
  if (pred.rank() < 2) throw ShapeError("xent_heatmap: expected rank >= 2, got " + to_string(pred.shape()));
  const std::size_t hw = pred.dim(pred.rank() - 2) * pred.dim(pred.rank() - 1);
  const std::size_t groups = pred.size() / hw;
  std::size_t active = 0;
  double s = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    bool any = false;
    for (std::size_t i = g * hw; i < (g + 1) * hw; ++i) {
      if (target[i] != 0.0) {
        any = true;
        s += target[i] * std::log(pred[i]);
      }
    }
    active += any ? 1 : 0;
  }
  if (active == 0) throw ShapeError("xent_heatmap: target has no mass");
  const double norm = static_cast<double>(active);
  return detail::finish(OpKind::Xent, {pred}, {}, {-s / norm}, "xent_heatmap", target.detach(), norm);
}

/// xent_heatmap(spatial_softmax(logits), target) evaluated with log-sum-exp, so
/// the loss and its gradient stay finite however peaked the softmax becomes.
inline Tensor softmax_xent(const Tensor& logits, const Tensor& target) {
  detail::require_same_shape(logits, target, "softmax_xent");
  if (logits.rank() < 2) throw ShapeError("softmax_xent: expected rank >= 2, got " + to_string(logits.shape()));
  const std::size_t hw = logits.dim(logits.rank() - 2) * logits.dim(logits.rank() - 1);
  const std::size_t groups = logits.size() / hw;
  std::size_t active = 0;
  double s = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    const double* x = logits.data().data() + g * hw;
    const double* t = target.data().data() + g * hw;
    double mass = 0.0;
    for (std::size_t i = 0; i < hw; ++i) mass += t[i];
    if (mass == 0.0) continue;
    ++active;
    const double mx = *std::max_element(x, x + hw);
    double z = 0.0;
    for (std::size_t i = 0; i < hw; ++i) z += std::exp(x[i] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < hw; ++i)
      if (t[i] != 0.0) s += t[i] * (x[i] - lse);
  }
  if (active == 0) throw ShapeError("softmax_xent: target has no mass");
  const double norm = static_cast<double>(active);
  return detail::finish(OpKind::SoftmaxXent, {logits}, {}, {-s / norm}, "softmax_xent", target.detach(), norm);
}

inline Tensor mse(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return detail::finish(OpKind::Mse, {pred, target}, {}, {s / static_cast<double>(pred.size())}, "mse");
}

// --- vector-Jacobian products ---------------------------------------------------

namespace detail {

inline Tensor indicator(const Tensor& x) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] != 0.0 ? 1.0 : 0.0;
  return Tensor(x.shape(), std::move(v));
}

inline Tensor positive_mask(const Tensor& x) {
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] > 0.0 ? 1.0 : 0.0;
  return Tensor(x.shape(), std::move(v));
}

inline std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& p) {
  std::vector<std::size_t> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = i;
  return inv;
}

/// Gradients of node `n`'s inputs given the adjoint `g` of its output.
/// `want[i]` selects which inputs need a result.
inline std::vector<std::optional<Tensor>> vjp(const Node& n, const Tensor& g, const std::vector<char>& want) {
  std::vector<std::optional<Tensor>> r(n.inputs.size());
  auto need = [&](std::size_t i) { return i < want.size() && want[i]; };
  const auto& in = n.inputs;
  switch (n.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::Add:
      if (need(0)) r[0] = g;
      if (need(1)) r[1] = g;
      break;
    case OpKind::Sub:
      if (need(0)) r[0] = g;
      if (need(1)) r[1] = scale(g, -1.0);
      break;
    case OpKind::Mul:
      if (need(0)) r[0] = mul(g, in[1]);
      if (need(1)) r[1] = mul(g, in[0]);
      break;
    case OpKind::Scale:
      if (need(0)) r[0] = scale(g, n.scalar);
      break;
    case OpKind::Matmul:
      if (need(0)) r[0] = matmul(g, transpose(in[1]));
      if (need(1)) r[1] = matmul(transpose(in[0]), g);
      break;
    case OpKind::Transpose:
      if (need(0)) r[0] = transpose(g);
      break;
    case OpKind::Permute:
      if (need(0)) r[0] = permute(g, inverse_permutation(n.aux));
      break;
    case OpKind::Reshape:
      if (need(0)) r[0] = reshape(g, in[0].shape());
      break;
    case OpKind::Conv:
      if (need(0)) r[0] = conv2d_input_adjoint(g, in[1]);
      if (need(1)) r[1] = conv2d_kernel_adjoint(in[0], g);
      break;
    case OpKind::ConvInputAdjoint:
      if (need(0)) r[0] = conv2d_same(g, in[1]);
      if (need(1)) r[1] = conv2d_kernel_adjoint(g, in[0]);
      break;
    case OpKind::ConvKernelAdjoint:
      if (need(0)) r[0] = conv2d_input_adjoint(in[1], g);
      if (need(1)) r[1] = conv2d_same(in[0], g);
      break;
    case OpKind::BroadcastAxis:
      if (need(0)) r[0] = reduce_to_axis(g, n.aux[0]);
      break;
    case OpKind::ReduceToAxis:
      if (need(0)) r[0] = broadcast_axis(g, in[0].shape(), n.aux[0]);
      break;
    case OpKind::AvgPool2:
      if (need(0)) r[0] = unpool2(g);
      break;
    case OpKind::Unpool2:
      if (need(0)) r[0] = avg_pool2(g);
      break;
    case OpKind::Relu:
      if (need(0)) r[0] = mul(g, positive_mask(in[0]));
      break;
    case OpKind::SpatialSoftmax:
      if (need(0)) {
        const Tensor& y = n.output;
        const std::size_t h = y.dim(y.rank() - 2), w = y.dim(y.rank() - 1);
        r[0] = mul(y, sub(g, spatial_broadcast(spatial_sum(mul(g, y)), h, w)));
      }
      break;
    case OpKind::SpatialSum:
      if (need(0)) r[0] = spatial_broadcast(g, in[0].dim(in[0].rank() - 2), in[0].dim(in[0].rank() - 1));
      break;
    case OpKind::SpatialBroadcast:
      if (need(0)) r[0] = spatial_sum(g);
      break;
    case OpKind::Sum:
      if (need(0)) r[0] = broadcast_scalar(g, in[0].shape());
      break;
    case OpKind::BroadcastScalar:
      if (need(0)) r[0] = reshape(sum(g), in[0].shape());
      break;
    case OpKind::Mean:
      if (need(0)) r[0] = scale(broadcast_scalar(g, in[0].shape()), 1.0 / static_cast<double>(in[0].size()));
      break;
    case OpKind::Xent:
      if (need(0)) {
        const Tensor& target = n.constant;
        r[0] = scale(mul(broadcast_scalar(g, target.shape()), masked_reciprocal(in[0], target)), -1.0 / n.scalar);
      }
      break;
    case OpKind::SoftmaxXent:
      if (need(0)) {
        // (softmax(x) * mass - target) / n, with mass the per-channel target sum
        const Tensor& target = n.constant;
        const std::size_t h = target.dim(target.rank() - 2), w = target.dim(target.rank() - 1);
        const Tensor mass = spatial_broadcast(spatial_sum(target), h, w);
        r[0] = scale(mul(broadcast_scalar(g, target.shape()), sub(mul(spatial_softmax(in[0]), mass), target)),
                     1.0 / n.scalar);
      }
      break;
    case OpKind::MaskedReciprocal:
      if (need(0)) {
        // d(m/x)/dx = -(m/x) * (1/x) on the mask support.
        r[0] = scale(mul(mul(g, n.output), masked_reciprocal(in[0], indicator(n.constant))), -1.0);
      }
      break;
    case OpKind::Mse:
      if (need(0) || need(1)) {
        const Tensor d = scale(mul(broadcast_scalar(g, in[0].shape()), sub(in[0], in[1])),
                               2.0 / static_cast<double>(in[0].size()));
        if (need(0)) r[0] = d;
        if (need(1)) r[1] = scale(d, -1.0);
      }
      break;
    case OpKind::GatherRows:
      if (need(0)) r[0] = scatter_rows(g, n.aux, in[0].dim(0));
      break;
    case OpKind::ScatterRows:
      if (need(0)) r[0] = gather_rows(g, std::vector<std::size_t>(n.aux.begin(), n.aux.end() - 1));
      break;
  }
  return r;
}

}  // namespace detail

}  // namespace dynland
