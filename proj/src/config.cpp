// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/config.hpp"

#include "mofe/errors.hpp"

namespace mofe {

void validate_config(const ModelConfig& cfg, const std::string& path_prefix) {
  auto fail = [&](const std::string& field, const std::string& msg) {
    throw ConfigError(msg, path_prefix.empty() ? field : path_prefix + "." + field);
  };
  if (cfg.vocab_size == 0) fail("vocab_size", "vocab_size must be positive");
  if (cfg.hidden_dim == 0) fail("hidden_dim", "hidden_dim must be positive");
  if (cfg.n_layers == 0) fail("n_layers", "n_layers must be positive");
  if (cfg.n_heads == 0) fail("n_heads", "n_heads must be positive");
  if (cfg.n_kv_heads == 0) fail("n_kv_heads", "n_kv_heads must be positive");
  if (cfg.ffn_hidden_dim == 0) fail("ffn_hidden_dim", "ffn_hidden_dim must be positive");
  if (cfg.max_seq_len == 0) fail("max_seq_len", "max_seq_len must be positive");
  if (cfg.n_heads % cfg.n_kv_heads != 0) {
    fail("n_kv_heads", "n_heads (" + std::to_string(cfg.n_heads) + ") must be divisible by n_kv_heads (" +
                           std::to_string(cfg.n_kv_heads) + ")");
  }
  if (cfg.head_dim * cfg.n_heads != cfg.hidden_dim) {
    fail("head_dim", "head_dim * n_heads (" + std::to_string(cfg.head_dim * cfg.n_heads) +
                         ") must equal hidden_dim (" + std::to_string(cfg.hidden_dim) + ")");
  }
  if (cfg.head_dim % 2 != 0) fail("head_dim", "head_dim must be even for rotary embeddings");
  if (cfg.rope_theta <= 0) fail("rope_theta", "rope_theta must be positive");
  if (cfg.norm_eps <= 0) fail("norm_eps", "norm_eps must be positive");
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{
      {"vocab_size", cfg.vocab_size},   {"hidden_dim", cfg.hidden_dim},
      {"n_layers", cfg.n_layers},       {"n_heads", cfg.n_heads},
      {"n_kv_heads", cfg.n_kv_heads},   {"head_dim", cfg.head_dim},
      {"ffn_hidden_dim", cfg.ffn_hidden_dim}, {"max_seq_len", cfg.max_seq_len},
      {"rope_theta", cfg.rope_theta},   {"norm_eps", cfg.norm_eps},
      {"tie_lm_head", cfg.tie_lm_head},
  };
}

ModelConfig config_from_json(const nlohmann::json& j, const std::string& path_prefix) {
  auto get = [&](const char* key, auto& out, bool required) {
    if (!j.contains(key)) {
      if (required) {
        throw ConfigError(std::string("missing field ") + key,
                          path_prefix.empty() ? key : path_prefix + "." + key);
      }
      return;
    }
    try {
      out = j.at(key).get<std::decay_t<decltype(out)>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad value for ") + key + ": " + e.what(),
                        path_prefix.empty() ? key : path_prefix + "." + key);
    }
  };
  ModelConfig cfg;
  get("vocab_size", cfg.vocab_size, true);
  get("hidden_dim", cfg.hidden_dim, true);
  get("n_layers", cfg.n_layers, true);
  get("n_heads", cfg.n_heads, true);
  get("n_kv_heads", cfg.n_kv_heads, true);
  get("head_dim", cfg.head_dim, true);
  get("ffn_hidden_dim", cfg.ffn_hidden_dim, true);
  get("max_seq_len", cfg.max_seq_len, true);
  get("rope_theta", cfg.rope_theta, false);
  get("norm_eps", cfg.norm_eps, false);
  get("tie_lm_head", cfg.tie_lm_head, false);
  validate_config(cfg, path_prefix);
  return cfg;
}

ModelConfig preset_config(const std::string& name) {
  if (name == "tinyllama-1.1b") {
    return ModelConfig{.vocab_size = 32000,
                       .hidden_dim = 2048,
                       .n_layers = 22,
                       .n_heads = 32,
                       .n_kv_heads = 4,
                       .head_dim = 64,
                       .ffn_hidden_dim = 5632,
                       .max_seq_len = 2048,
                       .rope_theta = 10000.0,
                       .norm_eps = 1e-5,
                       .tie_lm_head = false};
  }
  if (name == "toy-byte") {
    // Byte-level tokenizer vocabulary (256 bytes + BOS/EOS/PAD).
    return ModelConfig{.vocab_size = 259,
                       .hidden_dim = 64,
                       .n_layers = 2,
                       .n_heads = 4,
                       .n_kv_heads = 2,
                       .head_dim = 16,
                       .ffn_hidden_dim = 128,
                       .max_seq_len = 64,
                       .rope_theta = 10000.0,
                       .norm_eps = 1e-5,
                       .tie_lm_head = false};
  }
  throw ConfigError("unknown preset: " + name, "preset");
}

std::vector<std::string> preset_names() { return {"tinyllama-1.1b", "toy-byte"}; }

}  // namespace mofe
