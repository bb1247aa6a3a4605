// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "mofe/ops.hpp"
#include "mofe/tensor.hpp"

namespace mofe {

template <typename T>
struct FfnBlockT {
  Tensor<T> w_gate;  // [hidden, ffn_hidden]
  Tensor<T> w_up;    // [hidden, ffn_hidden]
  Tensor<T> w_down;  // [ffn_hidden, hidden]
};

// SwiGLU: w_down applied to silu(x*w_gate) ⊙ (x*w_up). x is [rows, hidden].
template <typename T>
Tensor<T> ffn_forward(const FfnBlockT<T>& ffn, const Tensor<T>& x) {
  Tensor<T> g = silu(matmul(x, ffn.w_gate));
  Tensor<T> u = matmul(x, ffn.w_up);
  return matmul(mul(g, u), ffn.w_down);
}

template <typename T>
struct RouterGateT {
  Tensor<T> weight;  // [n_experts, hidden]; row e scores expert e

  std::size_t n_experts() const { return weight.shape()[0]; }
};

// Top-m selection outcome for one token. Indices are distinct and ordered
// by descending logit (ties resolved toward the lower expert index);
// weights are the softmax of the m selected logits.
template <typename T>
struct RoutingDecisionT {
  std::vector<int> indices;
  std::vector<T> weights;
};

// argmax-m with the deterministic tie rule: higher logit first, lower
// index on equal logits.
template <typename T>
std::vector<int> top_m_indices(const std::vector<T>& logits, std::size_t m) {
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (logits[static_cast<std::size_t>(a)] != logits[static_cast<std::size_t>(b)]) {
      return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  order.resize(m);
  return order;
}

template <typename T>
std::vector<T> softmax_values(const std::vector<T>& v) {
  T mx = *std::max_element(v.begin(), v.end());
  std::vector<T> out(v.size());
  T denom = T(0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    denom += out[i];
  }
  for (T& o : out) o /= denom;
  return out;
}

template <typename T>
RoutingDecisionT<T> route_logits(const std::vector<T>& logits, std::size_t m) {
  if (m < 1 || m > logits.size()) {
    throw ConfigError("top_m (" + std::to_string(m) + ") must be in [1, n_experts=" +
                      std::to_string(logits.size()) + "]", "m");
  }
  RoutingDecisionT<T> d;
  d.indices = top_m_indices(logits, m);
  std::vector<T> selected(m);
  for (std::size_t j = 0; j < m; ++j) selected[j] = logits[static_cast<std::size_t>(d.indices[j])];
  d.weights = softmax_values(selected);
  return d;
}

// Scores experts by dot product with the hidden state, then top-m +
// softmax over the selected logits.
template <typename T>
RoutingDecisionT<T> route(const RouterGateT<T>& gate, const Tensor<T>& hidden, std::size_t m) {
  const std::size_t n = gate.n_experts();
  const std::size_t h = gate.weight.shape()[1];
  if (hidden.numel() != h) {
    throw ShapeError("route: hidden state shape " + shape_str(hidden.shape()) + " does not match gate width " +
                     std::to_string(h));
  }
  std::vector<T> logits(n, T(0));
  const auto& w = gate.weight.data();
  const auto& hv = hidden.data();
  for (std::size_t e = 0; e < n; ++e) {
    T acc = T(0);
    for (std::size_t j = 0; j < h; ++j) acc += w[e * h + j] * hv[j];
    logits[e] = acc;
  }
  return route_logits(logits, m);
}

// Per-expert token counts and selection entropy, accumulated per layer.
struct RoutingStats {
  // counts[layer][expert]
  std::vector<std::vector<std::uint64_t>> counts;
  std::uint64_t tokens = 0;

  void ensure(std::size_t layers, std::size_t experts) {
    if (counts.size() < layers) counts.resize(layers);
    for (auto& c : counts) {
      if (c.size() < experts) c.resize(experts, 0);
    }
  }

  std::uint64_t layer_total(std::size_t layer) const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts[layer]) t += c;
    return t;
  }

  // Shannon entropy (nats) of the per-layer selection distribution.
  double layer_entropy(std::size_t layer) const {
    std::uint64_t total = layer_total(layer);
    if (total == 0) return 0.0;
    double h = 0.0;
    for (std::uint64_t c : counts[layer]) {
      if (c == 0) continue;
      double p = static_cast<double>(c) / static_cast<double>(total);
      h -= p * std::log(p);
    }
    return h;
  }

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < counts.size(); ++l) {
      layers.push_back({{"layer", l}, {"expert_counts", counts[l]}, {"entropy", layer_entropy(l)}});
    }
    return nlohmann::json{{"tokens", tokens}, {"layers", layers}};
  }
};

// Routed expert mix over a whole sequence: for each row of x, evaluate the
// m selected experts only and sum their outputs with the softmax weights.
// Differentiable in x, the gate, and the selected experts' tensors.
template <typename T>
Tensor<T> moe_forward_rows(const std::vector<FfnBlockT<T>>& bank, const RouterGateT<T>& gate, const Tensor<T>& x,
                           std::size_t m, std::vector<RoutingDecisionT<T>>* decisions_out = nullptr,
                           RoutingStats* stats = nullptr, std::size_t stats_layer = 0) {
  const std::size_t seq = x.rows();
  const std::size_t n = bank.size();
  if (gate.n_experts() != n) {
    throw ShapeError("moe_forward_rows: gate rows " + std::to_string(gate.n_experts()) +
                     " != bank size " + std::to_string(n));
  }
  if (m < 1 || m > n) {
    throw ConfigError("top_m (" + std::to_string(m) + ") must be in [1, n_experts=" + std::to_string(n) + "]",
                      "m");
  }

  Tensor<T> logits = matmul(x, transpose(gate.weight));  // [seq, n]
  const auto& lv = logits.data();
  std::vector<RoutingDecisionT<T>> decisions(seq);
  std::vector<std::size_t> sel(seq * m);
  for (std::size_t t = 0; t < seq; ++t) {
    std::vector<T> row(lv.begin() + t * n, lv.begin() + (t + 1) * n);
    decisions[t] = route_logits(row, m);
    for (std::size_t j = 0; j < m; ++j) sel[t * m + j] = static_cast<std::size_t>(decisions[t].indices[j]);
  }

  Tensor<T> selected = gather_cols_per_row(logits, sel, m);  // [seq, m]
  Tensor<T> weights = softmax(selected, -1);                 // [seq, m]

  Tensor<T> out = Tensor<T>::zeros({seq, x.cols()});
  for (std::size_t e = 0; e < n; ++e) {
    std::vector<std::size_t> rows;
    std::vector<std::size_t> slots;
    for (std::size_t t = 0; t < seq; ++t) {
      for (std::size_t j = 0; j < m; ++j) {
        if (sel[t * m + j] == e) {
          rows.push_back(t);
          slots.push_back(j);
        }
      }
    }
    if (rows.empty()) continue;
    Tensor<T> sub = gather_rows(x, rows);
    Tensor<T> y = ffn_forward(bank[e], sub);
    Tensor<T> w_col = gather_cells(weights, rows, slots);
    y = mul_colvec(y, w_col);
    out = add(out, scatter_rows_sum(y, rows, seq));
    if (stats != nullptr) {
      stats->ensure(stats_layer + 1, n);
      stats->counts[stats_layer][e] += rows.size();
    }
  }
  if (stats != nullptr) {
    stats->ensure(stats_layer + 1, n);
    stats->tokens += seq;
  }
  if (decisions_out != nullptr) *decisions_out = std::move(decisions);
  return out;
}

// [hidden] -> [1, hidden] copy preserving the gradient path.
template <typename T>
Tensor<T> as_single_row(const Tensor<T>& h) {
  if (h.rank() == 2) return h;
  Tensor<T> out = Tensor<T>::from_data({1, h.numel()}, h.data());
  if (detail::grad_wanted<T>({&h})) {
    out.set_requires_grad(true);
    auto hi = h.impl_ptr(), oi = out.impl_ptr();
    Tape<T>::active()->record([hi, oi] {
      if (oi->grad.empty() || !hi->requires_grad) return;
      ensure_grad(*hi);
      for (std::size_t i = 0; i < oi->grad.size(); ++i) hi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

// Single-token convenience matching the per-token routing contract:
// h is [hidden]; only the m selected experts are evaluated.
template <typename T>
Tensor<T> moe_ffn_forward(const std::vector<FfnBlockT<T>>& bank, const RouterGateT<T>& gate, const Tensor<T>& h,
                          std::size_t m) {
  return moe_forward_rows(bank, gate, as_single_row(h), m);
}

}  // namespace mofe
