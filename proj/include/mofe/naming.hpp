// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mofe/config.hpp"

namespace mofe {

// The archive tensor naming scheme. Weight matrices are stored [in, out]
// so a row-major activation x multiplies as x * W.
//
//   embedding.weight                    [vocab, hidden]
//   layers.<l>.attn_norm.weight         [hidden]
//   layers.<l>.attn.wq.weight           [hidden, n_heads*head_dim]
//   layers.<l>.attn.wk.weight           [hidden, n_kv_heads*head_dim]
//   layers.<l>.attn.wv.weight           [hidden, n_kv_heads*head_dim]
//   layers.<l>.attn.wo.weight           [n_heads*head_dim, hidden]
//   layers.<l>.ffn_norm.weight          [hidden]
//   layers.<l>.ffn.w_gate.weight        [hidden, ffn_hidden]        (dense)
//   layers.<l>.ffn.w_up.weight          [hidden, ffn_hidden]        (dense)
//   layers.<l>.ffn.w_down.weight        [ffn_hidden, hidden]        (dense)
//   layers.<l>.experts.<e>.w_gate.weight ...                        (moe)
//   layers.<l>.router.weight            [n_experts, hidden]         (moe)
//   final_norm.weight                   [hidden]
//   lm_head.weight                      [hidden, vocab]             (untied only)

enum class Component { embedding, attention, norms, lm_head, ffn, router };

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> dims;
  Component component;
  // Set for expert FFN tensors of a MoE model (the expert slot index).
  std::optional<int> expert;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
  }
};

// Symbolic tensor list for a dense (n_experts == 0) or MoE (n_experts >= 1)
// model. Deterministic order; no buffers are allocated.
std::vector<TensorSpec> model_tensor_specs(const ModelConfig& cfg, int n_experts);

std::string layer_tensor_name(std::size_t layer, const std::string& suffix);
std::string expert_tensor_name(std::size_t layer, int expert, const std::string& matrix);
std::string router_tensor_name(std::size_t layer);

// Expert slot index for MoE expert tensors, nullopt otherwise.
std::optional<int> expert_index_of(const std::string& tensor_name);

}  // namespace mofe
