// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mofe/archive.hpp"
#include "mofe/config.hpp"
#include "mofe/naming.hpp"
#include "mofe/ops.hpp"
#include "mofe/rng.hpp"
#include "mofe/router.hpp"

namespace mofe {

template <typename T>
struct DecoderLayerT {
  Tensor<T> attn_norm;  // [hidden]
  Tensor<T> wq;         // [hidden, n_heads*head_dim]
  Tensor<T> wk;         // [hidden, n_kv_heads*head_dim]
  Tensor<T> wv;         // [hidden, n_kv_heads*head_dim]
  Tensor<T> wo;         // [n_heads*head_dim, hidden]
  Tensor<T> ffn_norm;   // [hidden]
  std::vector<FfnBlockT<T>> experts;      // size 1 for dense layers
  std::optional<RouterGateT<T>> router;   // engaged iff MoE
};

// Pre-norm decoder: embedding -> L x (attention + FFN) -> norm -> LM head.
// Grouped-query attention with rotary embeddings and SwiGLU FFN blocks;
// in the MoE variant each layer's FFN is a routed expert bank.
template <typename T>
struct DecoderT {
  ModelConfig config;
  int n_experts = 0;  // 0 = dense
  int top_m = 0;      // 0 = dense
  Tensor<T> embedding;   // [vocab, hidden]
  std::vector<DecoderLayerT<T>> layers;
  Tensor<T> final_norm;  // [hidden]
  Tensor<T> lm_head;     // [hidden, vocab]; empty when tied

  bool is_moe() const { return n_experts > 0; }

  // Name/tensor pairs in the archive naming scheme.
  std::vector<std::pair<std::string, Tensor<T>>> named_tensors();
};

namespace decoder_detail {

template <typename T>
Tensor<T> causal_mask(std::size_t seq) {
  Tensor<T> mask = Tensor<T>::zeros({seq, seq});
  auto& mv = mask.mutable_data();
  for (std::size_t i = 0; i < seq; ++i)
    for (std::size_t j = i + 1; j < seq; ++j) mv[i * seq + j] = T(-1e9);
  return mask;
}

template <typename T>
Tensor<T> attention_block(const DecoderLayerT<T>& layer, const ModelConfig& cfg, const Tensor<T>& x_normed,
                          const Tensor<T>& mask) {
  const std::size_t dh = cfg.head_dim;
  const std::size_t groups = cfg.n_heads / cfg.n_kv_heads;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

  Tensor<T> q = rope_apply(matmul(x_normed, layer.wq), dh, static_cast<T>(cfg.rope_theta));
  Tensor<T> k = rope_apply(matmul(x_normed, layer.wk), dh, static_cast<T>(cfg.rope_theta));
  Tensor<T> v = matmul(x_normed, layer.wv);

  std::vector<Tensor<T>> head_outputs;
  head_outputs.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::size_t g = h / groups;  // kv head serving this query head
    Tensor<T> qh = slice_cols(q, h * dh, dh);
    Tensor<T> kg = slice_cols(k, g * dh, dh);
    Tensor<T> vg = slice_cols(v, g * dh, dh);
    Tensor<T> scores = scale(matmul(qh, transpose(kg)), inv_sqrt_dh);
    Tensor<T> attn = softmax(add(scores, mask), -1);
    head_outputs.push_back(matmul(attn, vg));
  }
  return matmul(concat_cols(head_outputs), layer.wo);
}

}  // namespace decoder_detail

// Residual stream entering layer `upto` (upto == 0 is the post-embedding
// stream; upto == n_layers is the pre-final-norm stream).
template <typename T>
Tensor<T> hidden_states(const DecoderT<T>& model, const std::vector<int>& token_ids, std::size_t upto) {
  const ModelConfig& cfg = model.config;
  if (upto > cfg.n_layers) {
    throw ContractError("hidden_states: layer index " + std::to_string(upto) + " out of range [0, " +
                        std::to_string(cfg.n_layers) + "]");
  }
  if (token_ids.empty()) throw ContractError("hidden_states: empty token sequence");
  if (token_ids.size() > cfg.max_seq_len) {
    throw ContractError("sequence length " + std::to_string(token_ids.size()) + " exceeds max_seq_len " +
                        std::to_string(cfg.max_seq_len));
  }
  Tensor<T> x = embedding_lookup(model.embedding, token_ids);
  Tensor<T> mask = decoder_detail::causal_mask<T>(token_ids.size());
  const T eps = static_cast<T>(cfg.norm_eps);
  for (std::size_t l = 0; l < upto; ++l) {
    const auto& layer = model.layers[l];
    Tensor<T> a = decoder_detail::attention_block(layer, cfg, rms_norm(x, layer.attn_norm, eps), mask);
    x = add(x, a);
    Tensor<T> f_in = rms_norm(x, layer.ffn_norm, eps);
    Tensor<T> f = model.is_moe()
                      ? moe_forward_rows(layer.experts, *layer.router, f_in, static_cast<std::size_t>(model.top_m))
                      : ffn_forward(layer.experts[0], f_in);
    x = add(x, f);
  }
  return x;
}

// Full forward pass to logits [seq, vocab]. Routing statistics are
// accumulated per layer when `stats` is given.
template <typename T>
Tensor<T> forward(const DecoderT<T>& model, const std::vector<int>& token_ids, RoutingStats* stats = nullptr) {
  const ModelConfig& cfg = model.config;
  if (token_ids.empty()) throw ContractError("forward: empty token sequence");
  if (token_ids.size() > cfg.max_seq_len) {
    throw ContractError("sequence length " + std::to_string(token_ids.size()) + " exceeds max_seq_len " +
                        std::to_string(cfg.max_seq_len));
  }
  Tensor<T> x = embedding_lookup(model.embedding, token_ids);
  Tensor<T> mask = decoder_detail::causal_mask<T>(token_ids.size());
  const T eps = static_cast<T>(cfg.norm_eps);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& layer = model.layers[l];
    Tensor<T> a = decoder_detail::attention_block(layer, cfg, rms_norm(x, layer.attn_norm, eps), mask);
    x = add(x, a);
    Tensor<T> f_in = rms_norm(x, layer.ffn_norm, eps);
    Tensor<T> f = model.is_moe()
                      ? moe_forward_rows(layer.experts, *layer.router, f_in,
                                         static_cast<std::size_t>(model.top_m),
                                         static_cast<std::vector<RoutingDecisionT<T>>*>(nullptr), stats, l)
                      : ffn_forward(layer.experts[0], f_in);
    x = add(x, f);
  }
  Tensor<T> xn = rms_norm(x, model.final_norm, eps);
  if (cfg.tie_lm_head) return matmul(xn, transpose(model.embedding));
  return matmul(xn, model.lm_head);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> DecoderT<T>::named_tensors() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.emplace_back("embedding.weight", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& layer = layers[l];
    out.emplace_back(layer_tensor_name(l, "attn_norm.weight"), layer.attn_norm);
    out.emplace_back(layer_tensor_name(l, "attn.wq.weight"), layer.wq);
    out.emplace_back(layer_tensor_name(l, "attn.wk.weight"), layer.wk);
    out.emplace_back(layer_tensor_name(l, "attn.wv.weight"), layer.wv);
    out.emplace_back(layer_tensor_name(l, "attn.wo.weight"), layer.wo);
    out.emplace_back(layer_tensor_name(l, "ffn_norm.weight"), layer.ffn_norm);
    if (is_moe()) {
      for (int e = 0; e < n_experts; ++e) {
        out.emplace_back(expert_tensor_name(l, e, "w_gate"), layer.experts[static_cast<std::size_t>(e)].w_gate);
        out.emplace_back(expert_tensor_name(l, e, "w_up"), layer.experts[static_cast<std::size_t>(e)].w_up);
        out.emplace_back(expert_tensor_name(l, e, "w_down"), layer.experts[static_cast<std::size_t>(e)].w_down);
      }
      out.emplace_back(router_tensor_name(l), layer.router->weight);
    } else {
      out.emplace_back(layer_tensor_name(l, "ffn.w_gate.weight"), layer.experts[0].w_gate);
      out.emplace_back(layer_tensor_name(l, "ffn.w_up.weight"), layer.experts[0].w_up);
      out.emplace_back(layer_tensor_name(l, "ffn.w_down.weight"), layer.experts[0].w_down);
    }
  }
  out.emplace_back("final_norm.weight", final_norm);
  if (!config.tie_lm_head) out.emplace_back("lm_head.weight", lm_head);
  return out;
}

// Fresh random model: matrices N(0, 0.02^2), norm weights 1.
template <typename T>
DecoderT<T> init_decoder(const ModelConfig& cfg, int n_experts, int top_m, std::uint64_t seed) {
  validate_config(cfg);
  if (n_experts < 0 || (n_experts > 0 && (top_m < 1 || top_m > n_experts)) || (n_experts == 0 && top_m != 0)) {
    throw ConfigError("invalid expert configuration: n_experts=" + std::to_string(n_experts) +
                          " top_m=" + std::to_string(top_m),
                      "n_experts");
  }
  DecoderT<T> model;
  model.config = cfg;
  model.n_experts = n_experts;
  model.top_m = top_m;
  Rng rng(seed);
  auto init = [&rng](std::vector<std::size_t> dims, bool ones = false) {
    Tensor<T> t = Tensor<T>::zeros(std::move(dims));
    auto& data = t.mutable_data();
    for (auto& v : data) v = ones ? T(1) : static_cast<T>(rng.normal(0.0, 0.02));
    return t;
  };
  const std::size_t h = cfg.hidden_dim;
  const std::size_t q_out = cfg.n_heads * cfg.head_dim;
  const std::size_t kv_out = cfg.n_kv_heads * cfg.head_dim;
  model.embedding = init({cfg.vocab_size, h});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    DecoderLayerT<T> layer;
    layer.attn_norm = init({h}, true);
    layer.wq = init({h, q_out});
    layer.wk = init({h, kv_out});
    layer.wv = init({h, kv_out});
    layer.wo = init({q_out, h});
    layer.ffn_norm = init({h}, true);
    const int slots = n_experts == 0 ? 1 : n_experts;
    for (int e = 0; e < slots; ++e) {
      layer.experts.push_back({init({h, cfg.ffn_hidden_dim}), init({h, cfg.ffn_hidden_dim}),
                               init({cfg.ffn_hidden_dim, h})});
    }
    if (n_experts > 0) layer.router = RouterGateT<T>{init({static_cast<std::size_t>(n_experts), h})};
    model.layers.push_back(std::move(layer));
  }
  model.final_norm = init({h}, true);
  if (!cfg.tie_lm_head) model.lm_head = init({h, cfg.vocab_size});
  return model;
}

// Archive <-> model. Shapes and dtype are validated against the config;
// a missing or misshapen tensor is a structural error naming the tensor.
template <typename T>
DecoderT<T> build_decoder(const TensorArchive& archive, const ModelConfig& cfg, int n_experts, int top_m) {
  validate_config(cfg);
  DecoderT<T> model;
  model.config = cfg;
  model.n_experts = n_experts;
  model.top_m = top_m;
  auto fetch = [&](const TensorSpec& spec) {
    if (!archive.contains(spec.name)) throw StructuralError("archive is missing tensor " + spec.name);
    const RawTensor& raw = archive.at(spec.name);
    if (raw.dims != spec.dims) {
      throw StructuralError("tensor " + spec.name + ": shape " + shape_str(raw.dims) + " does not match config " +
                            shape_str(spec.dims));
    }
    return tensor_from_raw<T>(raw, spec.name);
  };
  const auto specs = model_tensor_specs(cfg, n_experts);
  std::map<std::string, TensorSpec> by_name;
  for (const auto& s : specs) by_name[s.name] = s;

  model.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto& layer = model.layers[l];
    layer.attn_norm = fetch(by_name.at(layer_tensor_name(l, "attn_norm.weight")));
    layer.wq = fetch(by_name.at(layer_tensor_name(l, "attn.wq.weight")));
    layer.wk = fetch(by_name.at(layer_tensor_name(l, "attn.wk.weight")));
    layer.wv = fetch(by_name.at(layer_tensor_name(l, "attn.wv.weight")));
    layer.wo = fetch(by_name.at(layer_tensor_name(l, "attn.wo.weight")));
    layer.ffn_norm = fetch(by_name.at(layer_tensor_name(l, "ffn_norm.weight")));
    if (n_experts == 0) {
      layer.experts.push_back({fetch(by_name.at(layer_tensor_name(l, "ffn.w_gate.weight"))),
                               fetch(by_name.at(layer_tensor_name(l, "ffn.w_up.weight"))),
                               fetch(by_name.at(layer_tensor_name(l, "ffn.w_down.weight")))});
    } else {
      for (int e = 0; e < n_experts; ++e) {
        layer.experts.push_back({fetch(by_name.at(expert_tensor_name(l, e, "w_gate"))),
                                 fetch(by_name.at(expert_tensor_name(l, e, "w_up"))),
                                 fetch(by_name.at(expert_tensor_name(l, e, "w_down")))});
      }
      layer.router = RouterGateT<T>{fetch(by_name.at(router_tensor_name(l)))};
    }
  }
  model.embedding = fetch(by_name.at("embedding.weight"));
  model.final_norm = fetch(by_name.at("final_norm.weight"));
  if (!cfg.tie_lm_head) model.lm_head = fetch(by_name.at("lm_head.weight"));
  return model;
}

template <typename T>
TensorArchive dump_decoder(DecoderT<T>& model) {
  TensorArchive archive;
  for (auto& [name, tensor] : model.named_tensors()) archive.put(name, raw_from_tensor(tensor));
  return archive;
}

}  // namespace mofe
