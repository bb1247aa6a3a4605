// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "mofe/tensor.hpp"
#include "mofe/threads.hpp"

namespace mofe {

namespace detail {

template <typename T>
bool grad_wanted(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Rows/cols view of a rank-1 or rank-2 tensor; rank-1 is treated as one row.
template <typename T>
std::pair<std::size_t, std::size_t> as_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() == 1) return {1, t.shape()[0]};
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got shape " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra primitives
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (detail::grad_wanted<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([ai, bi, oi] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        ensure_grad(*ai);
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        for (std::size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

// Bias-style broadcast: v is added to every row of a. The only broadcast
// form supported anywhere in the library.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  auto [r, c] = detail::as_matrix(a, "add_rowvec");
  if (v.rank() != 1 || v.shape()[0] != c) {
    throw ShapeError("add_rowvec: vector shape " + shape_str(v.shape()) + " does not match columns of " +
                     shape_str(a.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const auto& av = a.data();
  const auto& vv = v.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = av[i * c + j] + vv[j];
  if (detail::grad_wanted<T>({&a, &v})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), vi = v.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([ai, vi, oi, r, c] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        ensure_grad(*ai);
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
      }
      if (vi->requires_grad) {
        ensure_grad(*vi);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) vi->grad[j] += oi->grad[i * c + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (detail::grad_wanted<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([ai, bi, oi] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        ensure_grad(*ai);
        for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        for (std::size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor;
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi, factor] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> out = Tensor<T>::zeros({m, n});
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  T* op = out.mutable_data().data();
  parallel_for(m, 16, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      T* orow = op + i * n;
      const T* arow = ap + i * k;
      for (std::size_t l = 0; l < k; ++l) {
        const T av = arow[l];
        const T* brow = bp + l * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  });
  if (detail::grad_wanted<T>({&a, &b})) {
    out.set_requires_grad(true);
    auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      const T* go = oi->grad.data();
      if (ai->requires_grad) {
        ensure_grad(*ai);
        T* ga = ai->grad.data();
        const T* bp2 = bi->data.data();
        // dA = dO * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            T acc = T(0);
            const T* gorow = go + i * n;
            const T* brow = bp2 + l * n;
            for (std::size_t j = 0; j < n; ++j) acc += gorow[j] * brow[j];
            ga[i * k + l] += acc;
          }
      }
      if (bi->requires_grad) {
        ensure_grad(*bi);
        T* gb = bi->grad.data();
        const T* ap2 = ai->data.data();
        // dB = A^T * dO
        for (std::size_t i = 0; i < m; ++i) {
          const T* arow = ap2 + i * k;
          const T* gorow = go + i * n;
          for (std::size_t l = 0; l < k; ++l) {
            const T av = arow[l];
            T* gbrow = gb + l * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * gorow[j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor<T> out = Tensor<T>::zeros({c, r});
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = xv[i * c + j];
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi, r, c] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) xi->grad[i * c + j] += oi->grad[j * r + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    T s = T(1) / (T(1) + std::exp(-xv[i]));
    ov[i] = xv[i] * s;
  }
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      for (std::size_t i = 0; i < oi->grad.size(); ++i) {
        T v = xi->data[i];
        T s = T(1) / (T(1) + std::exp(-v));
        xi->grad[i] += oi->grad[i] * (s + v * s * (T(1) - s));
      }
    });
  }
  return out;
}

// Max-subtracted softmax along `axis` (0, 1, or -1 for the last axis).
// NaN inputs are rejected rather than silently propagated.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
  auto [r, c] = detail::as_matrix(x, "softmax");
  int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range for shape " + shape_str(x.shape()));
  for (T v : x.data()) {
    if (std::isnan(v)) throw ContractError("softmax: NaN input");
  }
  const bool along_rows = (rank == 1) || (axis == 1);  // normalize within each row
  const std::size_t outer = along_rows ? r : c;
  const std::size_t inner = along_rows ? c : r;
  const std::size_t stride = c;
  auto idx = [along_rows, stride](std::size_t o, std::size_t i) {
    return along_rows ? o * stride + i : i * stride + o;
  };

  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t o = 0; o < outer; ++o) {
    T mx = xv[idx(o, 0)];
    for (std::size_t i = 1; i < inner; ++i) mx = std::max(mx, xv[idx(o, i)]);
    T denom = T(0);
    for (std::size_t i = 0; i < inner; ++i) {
      T e = std::exp(xv[idx(o, i)] - mx);
      ov[idx(o, i)] = e;
      denom += e;
    }
    for (std::size_t i = 0; i < inner; ++i) ov[idx(o, i)] /= denom;
  }
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi, outer, inner, idx] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      for (std::size_t o = 0; o < outer; ++o) {
        T dot = T(0);
        for (std::size_t i = 0; i < inner; ++i) dot += oi->grad[idx(o, i)] * oi->data[idx(o, i)];
        for (std::size_t i = 0; i < inner; ++i) {
          xi->grad[idx(o, i)] += oi->data[idx(o, i)] * (oi->grad[idx(o, i)] - dot);
        }
      }
    });
  }
  return out;
}

// y = x / rms(x) * weight, row-wise over the last dimension.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& weight, T eps) {
  auto [r, c] = detail::as_matrix(x, "rms_norm");
  if (weight.rank() != 1 || weight.shape()[0] != c) {
    throw ShapeError("rms_norm: weight shape " + shape_str(weight.shape()) + " does not match columns of " +
                     shape_str(x.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const auto& xv = x.data();
  const auto& wv = weight.data();
  auto& ov = out.mutable_data();
  std::vector<T> inv(r);
  for (std::size_t i = 0; i < r; ++i) {
    T ss = T(0);
    for (std::size_t j = 0; j < c; ++j) ss += xv[i * c + j] * xv[i * c + j];
    inv[i] = T(1) / std::sqrt(ss / static_cast<T>(c) + eps);
    for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] * inv[i] * wv[j];
  }
  if (detail::grad_wanted<T>({&x, &weight})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), wi = weight.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, wi, oi, r, c, inv = std::move(inv)] {
      if (oi->grad.empty()) return;
      for (std::size_t i = 0; i < r; ++i) {
        const T* go = oi->grad.data() + i * c;
        const T* xr = xi->data.data() + i * c;
        if (wi->requires_grad) {
          ensure_grad(*wi);
          for (std::size_t j = 0; j < c; ++j) wi->grad[j] += go[j] * xr[j] * inv[i];
        }
        if (xi->requires_grad) {
          ensure_grad(*xi);
          // gu = go * w on the normalized vector u = x * inv
          T dot = T(0);
          for (std::size_t j = 0; j < c; ++j) dot += go[j] * wi->data[j] * xr[j] * inv[i];
          dot /= static_cast<T>(c);
          for (std::size_t j = 0; j < c; ++j) {
            T gu = go[j] * wi->data[j];
            xi->grad[i * c + j] += inv[i] * (gu - xr[j] * inv[i] * dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  const std::size_t vocab = table.shape()[0], dim = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ContractError("embedding_lookup: token id " + std::to_string(id) + " out of range [0, " +
                          std::to_string(vocab) + ")");
    }
  }
  Tensor<T> out = Tensor<T>::zeros({ids.size(), dim});
  const auto& tv = table.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.begin() + static_cast<std::size_t>(ids[i]) * dim, dim, ov.begin() + i * dim);
  }
  if (detail::grad_wanted<T>({&table})) {
    out.set_requires_grad(true);
    auto ti = table.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([ti, oi, ids, dim] {
      if (oi->grad.empty() || !ti->requires_grad) return;
      ensure_grad(*ti);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* dst = ti->grad.data() + static_cast<std::size_t>(ids[i]) * dim;
        const T* src = oi->grad.data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Rotary position embedding over adjacent pairs within each head. Row p of
// x is treated as position p + pos_offset; columns are n_heads contiguous
// blocks of head_dim.
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, std::size_t head_dim, T theta, std::size_t pos_offset = 0) {
  auto [r, c] = detail::as_matrix(x, "rope_apply");
  if (head_dim == 0 || head_dim % 2 != 0 || c % head_dim != 0) {
    throw ShapeError("rope_apply: columns " + std::to_string(c) + " not divisible into even head_dim " +
                     std::to_string(head_dim));
  }
  const std::size_t half = head_dim / 2;
  std::vector<T> cosv(r * half), sinv(r * half);
  for (std::size_t p = 0; p < r; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      T freq = std::pow(theta, -static_cast<T>(2 * i) / static_cast<T>(head_dim));
      T angle = static_cast<T>(p + pos_offset) * freq;
      cosv[p * half + i] = std::cos(angle);
      sinv[p * half + i] = std::sin(angle);
    }
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  const std::size_t heads = c / head_dim;
  const std::size_t rr = r, cc = c;
  auto rotate = [rr, cc, heads, half, head_dim, cosv, sinv](const std::vector<T>& src, std::vector<T>& dst,
                                                            bool inverse) {
    const std::size_t r = rr, c = cc;
    for (std::size_t p = 0; p < r; ++p) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t base = p * c + h * head_dim;
        for (std::size_t i = 0; i < half; ++i) {
          T cs = cosv[p * half + i];
          T sn = inverse ? -sinv[p * half + i] : sinv[p * half + i];
          T a = src[base + 2 * i];
          T b = src[base + 2 * i + 1];
          dst[base + 2 * i] += a * cs - b * sn;
          dst[base + 2 * i + 1] += a * sn + b * cs;
        }
      }
    }
  };
  rotate(xv, ov, false);
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi, rotate] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      rotate(oi->grad, xi->grad, true);  // transpose of a rotation = inverse rotation
    });
  }
  return out;
}

// Sum of next-token negative log-likelihoods over positions with mask true.
// `count` receives the number of contributing positions. The mean variant
// below is the usual training entry point.
template <typename T>
Tensor<T> cross_entropy_sum_with_mask(const Tensor<T>& logits, const std::vector<int>& targets,
                                      const std::vector<std::uint8_t>& mask, std::size_t* count = nullptr) {
  auto [n, vocab] = detail::as_matrix(logits, "cross_entropy");
  if (targets.size() != n || mask.size() != n) {
    throw ShapeError("cross_entropy: logits rows " + std::to_string(n) + " vs targets " +
                     std::to_string(targets.size()) + " / mask " + std::to_string(mask.size()));
  }
  const auto& lv = logits.data();
  T total = T(0);
  std::size_t used = 0;
  std::vector<T> probs;  // cached softmax rows for masked-in positions
  const bool want_grad = detail::grad_wanted<T>({&logits});
  if (want_grad) probs.assign(n * vocab, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw ContractError("cross_entropy: target id " + std::to_string(t) + " out of range [0, " +
                          std::to_string(vocab) + ")");
    }
    const T* row = lv.data() + i * vocab;
    T mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (std::size_t j = 0; j < vocab; ++j) denom += std::exp(row[j] - mx);
    T lse = mx + std::log(denom);
    total += lse - row[static_cast<std::size_t>(t)];
    if (want_grad) {
      for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] = std::exp(row[j] - mx) / denom;
    }
    ++used;
  }
  if (count != nullptr) *count = used;
  Tensor<T> out = Tensor<T>::scalar(total);
  if (want_grad) {
    out.set_requires_grad(true);
    auto li = logits.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([li, oi, targets, mask, n, vocab, probs = std::move(probs)] {
      if (oi->grad.empty() || !li->requires_grad) return;
      ensure_grad(*li);
      const T g = oi->grad[0];
      for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        T* dst = li->grad.data() + i * vocab;
        const T* p = probs.data() + i * vocab;
        for (std::size_t j = 0; j < vocab; ++j) dst[j] += g * p[j];
        dst[static_cast<std::size_t>(targets[i])] -= g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy_with_mask(const Tensor<T>& logits, const std::vector<int>& targets,
                                  const std::vector<std::uint8_t>& mask) {
  std::size_t count = 0;
  Tensor<T> total = cross_entropy_sum_with_mask(logits, targets, mask, &count);
  if (count == 0) throw ContractError("cross_entropy: no unmasked target positions");
  return scale(total, T(1) / static_cast<T>(count));
}

// ---------------------------------------------------------------------------
// Structural ops (slicing, gathering); all linear, with scatter-add backward
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t len) {
  auto [r, c] = detail::as_matrix(x, "slice_cols");
  if (begin + len > c) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + len) +
                     ") exceeds columns " + std::to_string(c));
  }
  Tensor<T> out = Tensor<T>::zeros({r, len});
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xv.begin() + i * c + begin, len, ov.begin() + i * len);
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi, r, c, begin, len] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < len; ++j) xi->grad[i * c + begin + j] += oi->grad[i * len + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    auto [pr, pc] = detail::as_matrix(p, "concat_cols");
    if (pr != r) throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
    total += pc;
  }
  Tensor<T> out = Tensor<T>::zeros({r, total});
  auto& ov = out.mutable_data();
  std::size_t off = 0;
  bool wants = false;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    const auto& pv = p.data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pv.begin() + i * pc, pc, ov.begin() + i * total + off);
    off += pc;
    wants = wants || p.requires_grad();
  }
  if (Tape<T>::active() != nullptr && wants) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    impls.reserve(parts.size());
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    auto oi = out.impl_ptr();
    Tape<T>::active()->record([impls = std::move(impls), oi, r, total] {
      if (oi->grad.empty()) return;
      std::size_t off2 = 0;
      for (auto& pi : impls) {
        const std::size_t pc = pi->shape.size() == 2 ? pi->shape[1] : pi->shape[0];
        if (pi->requires_grad) {
          ensure_grad(*pi);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) pi->grad[i * pc + j] += oi->grad[i * total + off2 + j];
        }
        off2 += pc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  auto [r, c] = detail::as_matrix(x, "gather_rows");
  for (std::size_t i : rows) {
    if (i >= r) throw ShapeError("gather_rows: row " + std::to_string(i) + " out of range " + std::to_string(r));
  }
  Tensor<T> out = Tensor<T>::zeros({rows.size(), c});
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.begin() + rows[i] * c, c, ov.begin() + i * c);
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi, rows, c] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) xi->grad[rows[i] * c + j] += oi->grad[i * c + j];
    });
  }
  return out;
}

// out[rows[i], :] += x[i, :], with out having out_rows rows of zeros.
template <typename T>
Tensor<T> scatter_rows_sum(const Tensor<T>& x, const std::vector<std::size_t>& rows, std::size_t out_rows) {
  auto [r, c] = detail::as_matrix(x, "scatter_rows_sum");
  if (rows.size() != r) throw ShapeError("scatter_rows_sum: index count does not match rows");
  for (std::size_t i : rows) {
    if (i >= out_rows) throw ShapeError("scatter_rows_sum: row " + std::to_string(i) + " out of range");
  }
  Tensor<T> out = Tensor<T>::zeros({out_rows, c});
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[rows[i] * c + j] += xv[i * c + j];
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi, rows, c] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) xi->grad[i * c + j] += oi->grad[rows[i] * c + j];
    });
  }
  return out;
}

// Per-row column gather: out[i, j] = x[i, idx[i * m + j]].
template <typename T>
Tensor<T> gather_cols_per_row(const Tensor<T>& x, const std::vector<std::size_t>& idx, std::size_t m) {
  auto [r, c] = detail::as_matrix(x, "gather_cols_per_row");
  if (idx.size() != r * m) throw ShapeError("gather_cols_per_row: index count does not match rows*m");
  for (std::size_t j : idx) {
    if (j >= c) throw ShapeError("gather_cols_per_row: column " + std::to_string(j) + " out of range");
  }
  Tensor<T> out = Tensor<T>::zeros({r, m});
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < m; ++j) ov[i * m + j] = xv[i * c + idx[i * m + j]];
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi, idx, r, c, m] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < m; ++j) xi->grad[i * c + idx[i * m + j]] += oi->grad[i * m + j];
    });
  }
  return out;
}

// Element gather into a column: out[i, 0] = x[rows[i], cols[i]].
template <typename T>
Tensor<T> gather_cells(const Tensor<T>& x, const std::vector<std::size_t>& rows,
                       const std::vector<std::size_t>& cols) {
  auto [r, c] = detail::as_matrix(x, "gather_cells");
  if (rows.size() != cols.size()) throw ShapeError("gather_cells: rows/cols length mismatch");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r || cols[i] >= c) throw ShapeError("gather_cells: index out of range");
  }
  Tensor<T> out = Tensor<T>::zeros({rows.size(), 1});
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i) ov[i] = xv[rows[i] * c + cols[i]];
  if (detail::grad_wanted<T>({&x})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, oi, rows, cols, c] {
      if (oi->grad.empty() || !xi->requires_grad) return;
      ensure_grad(*xi);
      for (std::size_t i = 0; i < rows.size(); ++i) xi->grad[rows[i] * c + cols[i]] += oi->grad[i];
    });
  }
  return out;
}

// Row scaling: out[i, :] = x[i, :] * col[i]. col is [r] or [r, 1].
template <typename T>
Tensor<T> mul_colvec(const Tensor<T>& x, const Tensor<T>& col) {
  auto [r, c] = detail::as_matrix(x, "mul_colvec");
  if (col.numel() != r) {
    throw ShapeError("mul_colvec: column shape " + shape_str(col.shape()) + " does not match rows of " +
                     shape_str(x.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const auto& xv = x.data();
  const auto& cv = col.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) ov[i * c + j] = xv[i * c + j] * cv[i];
  if (detail::grad_wanted<T>({&x, &col})) {
    out.set_requires_grad(true);
    auto xi = x.impl_ptr(), ci = col.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([xi, ci, oi, r, c] {
      if (oi->grad.empty()) return;
      if (xi->requires_grad) {
        ensure_grad(*xi);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) xi->grad[i * c + j] += oi->grad[i * c + j] * ci->data[i];
      }
      if (ci->requires_grad) {
        ensure_grad(*ci);
        for (std::size_t i = 0; i < r; ++i) {
          T acc = T(0);
          for (std::size_t j = 0; j < c; ++j) acc += oi->grad[i * c + j] * xi->data[i * c + j];
          ci->grad[i] += acc;
        }
      }
    });
  }
  return out;
}

}  // namespace mofe
