// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/naming.hpp"

namespace mofe {

std::string layer_tensor_name(std::size_t layer, const std::string& suffix) {
  return "layers." + std::to_string(layer) + "." + suffix;
}

std::string expert_tensor_name(std::size_t layer, int expert, const std::string& matrix) {
  return "layers." + std::to_string(layer) + ".experts." + std::to_string(expert) + "." + matrix + ".weight";
}

std::string router_tensor_name(std::size_t layer) {
  return "layers." + std::to_string(layer) + ".router.weight";
}

std::vector<TensorSpec> model_tensor_specs(const ModelConfig& cfg, int n_experts) {
  const std::size_t h = cfg.hidden_dim;
  const std::size_t q_out = cfg.n_heads * cfg.head_dim;
  const std::size_t kv_out = cfg.n_kv_heads * cfg.head_dim;
  const std::size_t f = cfg.ffn_hidden_dim;

  std::vector<TensorSpec> specs;
  specs.push_back({"embedding.weight", {cfg.vocab_size, h}, Component::embedding, std::nullopt});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    specs.push_back({layer_tensor_name(l, "attn_norm.weight"), {h}, Component::norms, std::nullopt});
    specs.push_back({layer_tensor_name(l, "attn.wq.weight"), {h, q_out}, Component::attention, std::nullopt});
    specs.push_back({layer_tensor_name(l, "attn.wk.weight"), {h, kv_out}, Component::attention, std::nullopt});
    specs.push_back({layer_tensor_name(l, "attn.wv.weight"), {h, kv_out}, Component::attention, std::nullopt});
    specs.push_back({layer_tensor_name(l, "attn.wo.weight"), {q_out, h}, Component::attention, std::nullopt});
    specs.push_back({layer_tensor_name(l, "ffn_norm.weight"), {h}, Component::norms, std::nullopt});
    if (n_experts == 0) {
      specs.push_back({layer_tensor_name(l, "ffn.w_gate.weight"), {h, f}, Component::ffn, std::nullopt});
      specs.push_back({layer_tensor_name(l, "ffn.w_up.weight"), {h, f}, Component::ffn, std::nullopt});
      specs.push_back({layer_tensor_name(l, "ffn.w_down.weight"), {f, h}, Component::ffn, std::nullopt});
    } else {
      for (int e = 0; e < n_experts; ++e) {
        specs.push_back({expert_tensor_name(l, e, "w_gate"), {h, f}, Component::ffn, e});
        specs.push_back({expert_tensor_name(l, e, "w_up"), {h, f}, Component::ffn, e});
        specs.push_back({expert_tensor_name(l, e, "w_down"), {f, h}, Component::ffn, e});
      }
      specs.push_back({router_tensor_name(l), {static_cast<std::size_t>(n_experts), h}, Component::router,
                       std::nullopt});
    }
  }
  specs.push_back({"final_norm.weight", {h}, Component::norms, std::nullopt});
  if (!cfg.tie_lm_head) {
    specs.push_back({"lm_head.weight", {h, cfg.vocab_size}, Component::lm_head, std::nullopt});
  }
  return specs;
}

std::optional<int> expert_index_of(const std::string& name) {
  const std::string tag = ".experts.";
  auto pos = name.find(tag);
  if (pos == std::string::npos) return std::nullopt;
  auto begin = pos + tag.size();
  auto end = name.find('.', begin);
  if (end == std::string::npos || end == begin) return std::nullopt;
  try {
    return std::stoi(name.substr(begin, end - begin));
  } catch (...) {
    return std::nullopt;
  }
}

}  // namespace mofe
