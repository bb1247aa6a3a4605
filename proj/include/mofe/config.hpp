// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace mofe {

// Architecture hyperparameters from which all tensor shapes and parameter
// counts derive.
struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 0;
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t n_kv_heads = 0;
  std::size_t head_dim = 0;
  std::size_t ffn_hidden_dim = 0;
  std::size_t max_seq_len = 0;
  double rope_theta = 10000.0;
  double norm_eps = 1e-5;
  bool tie_lm_head = false;

  bool operator==(const ModelConfig&) const = default;
};

// Throws ConfigError (with a dot-path when `path_prefix` is set) if the
// config violates its invariants.
void validate_config(const ModelConfig& cfg, const std::string& path_prefix = "");

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j, const std::string& path_prefix = "");

// Named presets: "tinyllama-1.1b" plus small toy configs used by demos.
ModelConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace mofe
