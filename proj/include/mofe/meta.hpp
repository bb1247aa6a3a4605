// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include <json.hpp>

#include "mofe/config.hpp"
#include "mofe/dtype.hpp"
#include "mofe/freeze.hpp"

namespace mofe {

// JSON sidecar stored next to every archive (<archive path> + ".json").
// Serialization is canonical (sorted keys), so semantically equal sidecars
// are byte-equal and hash equal.
struct ModelMeta {
  ModelConfig config;
  int n_experts = 0;  // 0 = dense
  int top_m = 0;
  DType dtype = DType::f32;
  FreezeManifest freeze = manifest_full();
  std::string provenance_hash;  // filled by merge; empty for fresh models

  bool operator==(const ModelMeta&) const = default;
};

nlohmann::json meta_to_json(const ModelMeta& meta);
ModelMeta meta_from_json(const nlohmann::json& j, const std::string& path_prefix = "");

// Canonical serialization (the hashing and on-disk form).
std::string meta_canonical(const ModelMeta& meta);

// FNV-1a 64 over a string, as a fixed-width hex literal.
std::string fnv1a_hex(const std::string& payload);

// Stable hash of the canonical sidecar serialization.
std::string meta_hash(const ModelMeta& meta);

std::string sidecar_path(const std::string& archive_path);
void save_meta(const ModelMeta& meta, const std::string& archive_path);
ModelMeta load_meta(const std::string& archive_path);

}  // namespace mofe
