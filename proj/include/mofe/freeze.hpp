// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mofe/config.hpp"
#include "mofe/naming.hpp"

namespace mofe {

// Declarative trainable/frozen policy over tensor names. Rules are glob
// patterns ('*' matches any run of characters, '.' included); first match
// wins. Per-expert overrides take precedence over rules for expert FFN
// tensors.
struct FreezeRule {
  std::string pattern;
  bool trainable = true;

  bool operator==(const FreezeRule&) const = default;
};

struct FreezeManifest {
  std::vector<FreezeRule> rules;
  std::map<int, bool> per_expert_overrides;

  bool operator==(const FreezeManifest&) const = default;
};

// Default policy: expert FFN tensors frozen, everything else (embedding,
// attention, norms, LM head, router) trainable.
FreezeManifest manifest_mofe();
// Everything trainable.
FreezeManifest manifest_full();
// Only dense FFN tensors trainable; used to build experts whose knowledge
// lives entirely in the FFN blocks.
FreezeManifest manifest_ffn_only();

// Named preset ("mofe", "full", "ffn-only") or throws ConfigError.
FreezeManifest manifest_preset(const std::string& name);

nlohmann::json manifest_to_json(const FreezeManifest& m);
FreezeManifest manifest_from_json(const nlohmann::json& j, const std::string& path_prefix = "");

bool glob_match(const std::string& pattern, const std::string& name);

// True if the manifest marks the tensor trainable; throws ManifestError
// naming the tensor when no rule covers it.
bool manifest_trainable(const FreezeManifest& m, const std::string& tensor_name);

struct Partition {
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
};

// Deterministic partition of the given tensor names.
Partition apply_manifest(const FreezeManifest& m, const std::vector<std::string>& tensor_names);

// Exact per-component parameter accounting, computed symbolically from the
// config (no weight buffers are allocated). The "table" values follow the
// convention model sizes are usually quoted with: the non-expert trunk and
// each expert FFN block are rounded to 0.01B first and then summed.
struct ParamReport {
  ModelConfig config;
  int n_experts = 0;  // 0 = dense
  std::uint64_t embedding = 0;
  std::uint64_t attention = 0;
  std::uint64_t norms = 0;
  std::uint64_t lm_head = 0;
  std::uint64_t ffn_per_expert = 0;
  std::uint64_t routers = 0;

  std::uint64_t total = 0;
  std::uint64_t trainable = 0;
  std::uint64_t frozen = 0;
  int trainable_experts = 0;

  // Exact values rounded to 0.01B.
  double total_b = 0.0;
  double trainable_b = 0.0;
  double frozen_b = 0.0;
  double ffn_per_expert_b = 0.0;

  // Component-rounded accounting (trunk + k * ffn_per_expert, each term
  // rounded to 0.01B before summing).
  double table_total_b = 0.0;
  double table_trainable_b = 0.0;
};

double round_to_0p01b(std::uint64_t params);

ParamReport count_params(const ModelConfig& cfg, int n_experts, const FreezeManifest& manifest);

nlohmann::json param_report_to_json(const ParamReport& r);
// Aligned text table with trainable/total columns.
std::string param_report_table(const ParamReport& r);

}  // namespace mofe
