// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/meta.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "mofe/errors.hpp"

namespace mofe {

nlohmann::json meta_to_json(const ModelMeta& meta) {
  return nlohmann::json{
      {"model", config_to_json(meta.config)},
      {"n_experts", meta.n_experts},
      {"top_m", meta.top_m},
      {"dtype", dtype_name(meta.dtype)},
      {"freeze", manifest_to_json(meta.freeze)},
      {"provenance_hash", meta.provenance_hash},
  };
}

ModelMeta meta_from_json(const nlohmann::json& j, const std::string& path_prefix) {
  auto where = [&](const std::string& sub) { return path_prefix.empty() ? sub : path_prefix + "." + sub; };
  ModelMeta meta;
  if (!j.contains("model")) throw ConfigError("sidecar missing model config", where("model"));
  meta.config = config_from_json(j.at("model"), where("model"));
  meta.n_experts = j.value("n_experts", 0);
  meta.top_m = j.value("top_m", 0);
  if (meta.n_experts < 0) throw ConfigError("n_experts must be >= 0", where("n_experts"));
  if (meta.n_experts > 0 && (meta.top_m < 1 || meta.top_m > meta.n_experts)) {
    throw ConfigError("top_m must be in [1, n_experts]", where("top_m"));
  }
  if (j.contains("dtype")) meta.dtype = dtype_from_name(j.at("dtype").get<std::string>());
  if (j.contains("freeze")) meta.freeze = manifest_from_json(j.at("freeze"), where("freeze"));
  meta.provenance_hash = j.value("provenance_hash", std::string());
  return meta;
}

std::string meta_canonical(const ModelMeta& meta) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  return meta_to_json(meta).dump();
}

std::string fnv1a_hex(const std::string& payload) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : payload) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << h;
  return os.str();
}

std::string meta_hash(const ModelMeta& meta) { return fnv1a_hex(meta_canonical(meta)); }

std::string sidecar_path(const std::string& archive_path) { return archive_path + ".json"; }

void save_meta(const ModelMeta& meta, const std::string& archive_path) {
  std::ofstream os(sidecar_path(archive_path), std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + sidecar_path(archive_path));
  os << meta_to_json(meta).dump(2) << "\n";
  if (!os) throw IoError("write failed: " + sidecar_path(archive_path));
}

ModelMeta load_meta(const std::string& archive_path) {
  const std::string path = sidecar_path(archive_path);
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sidecar " + path + " is not valid JSON: " + e.what());
  }
  return meta_from_json(j, "sidecar");
}

}  // namespace mofe
