// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/freeze.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "mofe/errors.hpp"

namespace mofe {

FreezeManifest manifest_mofe() {
  return FreezeManifest{{{"layers.*.experts.*", false}, {"*", true}}, {}};
}

FreezeManifest manifest_full() { return FreezeManifest{{{"*", true}}, {}}; }

FreezeManifest manifest_ffn_only() {
  return FreezeManifest{{{"layers.*.ffn.*", true}, {"layers.*.experts.*", true}, {"*", false}}, {}};
}

FreezeManifest manifest_preset(const std::string& name) {
  if (name == "mofe") return manifest_mofe();
  if (name == "full") return manifest_full();
  if (name == "ffn-only") return manifest_ffn_only();
  throw ConfigError("unknown manifest preset: " + name, "manifest");
}

nlohmann::json manifest_to_json(const FreezeManifest& m) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : m.rules) rules.push_back({{"pattern", r.pattern}, {"trainable", r.trainable}});
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [e, t] : m.per_expert_overrides) overrides[std::to_string(e)] = t;
  return nlohmann::json{{"rules", rules}, {"per_expert_overrides", overrides}};
}

FreezeManifest manifest_from_json(const nlohmann::json& j, const std::string& path_prefix) {
  auto where = [&](const std::string& sub) { return path_prefix.empty() ? sub : path_prefix + "." + sub; };
  FreezeManifest m;
  if (!j.contains("rules") || !j.at("rules").is_array() || j.at("rules").empty()) {
    throw ConfigError("manifest requires a nonempty rules array", where("rules"));
  }
  for (std::size_t i = 0; i < j.at("rules").size(); ++i) {
    const auto& r = j.at("rules")[i];
    if (!r.contains("pattern") || !r.contains("trainable")) {
      throw ConfigError("rule needs pattern and trainable", where("rules[" + std::to_string(i) + "]"));
    }
    m.rules.push_back({r.at("pattern").get<std::string>(), r.at("trainable").get<bool>()});
  }
  if (j.contains("per_expert_overrides")) {
    for (const auto& [key, val] : j.at("per_expert_overrides").items()) {
      try {
        m.per_expert_overrides[std::stoi(key)] = val.get<bool>();
      } catch (const std::invalid_argument&) {
        throw ConfigError("expert override key must be an integer", where("per_expert_overrides." + key));
      }
    }
  }
  return m;
}

bool glob_match(const std::string& pattern, const std::string& name) {
  // Iterative '*' matcher; '*' spans any characters including dots.
  std::size_t p = 0, n = 0, star = std::string::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() && (pattern[p] == name[n])) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (star != std::string::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

bool manifest_trainable(const FreezeManifest& m, const std::string& tensor_name) {
  if (auto e = expert_index_of(tensor_name)) {
    auto it = m.per_expert_overrides.find(*e);
    if (it != m.per_expert_overrides.end()) return it->second;
  }
  for (const auto& rule : m.rules) {
    if (glob_match(rule.pattern, tensor_name)) return rule.trainable;
  }
  throw ManifestError("no manifest rule covers tensor: " + tensor_name);
}

Partition apply_manifest(const FreezeManifest& m, const std::vector<std::string>& tensor_names) {
  Partition p;
  for (const auto& name : tensor_names) {
    (manifest_trainable(m, name) ? p.trainable : p.frozen).push_back(name);
  }
  return p;
}

double round_to_0p01b(std::uint64_t params) {
  return std::round(static_cast<double>(params) / 1e9 * 100.0) / 100.0;
}

ParamReport count_params(const ModelConfig& cfg, int n_experts, const FreezeManifest& manifest) {
  validate_config(cfg);
  if (n_experts < 0) throw ConfigError("n_experts must be >= 0", "n_experts");
  ParamReport r;
  r.config = cfg;
  r.n_experts = n_experts;

  std::uint64_t ffn_trainable = 0;
  std::vector<bool> expert_trainable(std::max(n_experts, 0), false);
  for (const auto& spec : model_tensor_specs(cfg, n_experts)) {
    const std::uint64_t n = spec.numel();
    const bool trainable = manifest_trainable(manifest, spec.name);
    switch (spec.component) {
      case Component::embedding: r.embedding += n; break;
      case Component::attention: r.attention += n; break;
      case Component::norms: r.norms += n; break;
      case Component::lm_head: r.lm_head += n; break;
      case Component::router: r.routers += n; break;
      case Component::ffn:
        if (spec.expert.has_value()) {
          if (*spec.expert == 0) r.ffn_per_expert += n;
          if (trainable) expert_trainable[*spec.expert] = true;
        } else {
          r.ffn_per_expert += n;
        }
        break;
    }
    r.total += n;
    if (trainable) {
      r.trainable += n;
      if (spec.component == Component::ffn) ffn_trainable += n;
    }
  }
  r.frozen = r.total - r.trainable;
  for (bool t : expert_trainable) r.trainable_experts += t ? 1 : 0;
  if (n_experts == 0 && ffn_trainable > 0) r.trainable_experts = 1;

  r.total_b = round_to_0p01b(r.total);
  r.trainable_b = round_to_0p01b(r.trainable);
  r.frozen_b = round_to_0p01b(r.frozen);
  r.ffn_per_expert_b = round_to_0p01b(r.ffn_per_expert);

  const int total_experts = n_experts == 0 ? 1 : n_experts;
  const std::uint64_t trunk = r.total - static_cast<std::uint64_t>(total_experts) * r.ffn_per_expert;
  const std::uint64_t trunk_trainable = r.trainable - ffn_trainable;
  r.table_total_b = round_to_0p01b(trunk) + total_experts * r.ffn_per_expert_b;
  r.table_trainable_b = round_to_0p01b(trunk_trainable) + r.trainable_experts * r.ffn_per_expert_b;
  return r;
}

nlohmann::json param_report_to_json(const ParamReport& r) {
  return nlohmann::json{
      {"config", config_to_json(r.config)},
      {"n_experts", r.n_experts},
      {"components",
       {{"embedding", r.embedding},
        {"attention", r.attention},
        {"norms", r.norms},
        {"lm_head", r.lm_head},
        {"ffn_per_expert", r.ffn_per_expert},
        {"routers", r.routers}}},
      {"exact", {{"total", r.total}, {"trainable", r.trainable}, {"frozen", r.frozen}}},
      {"rounded_b",
       {{"total", r.total_b},
        {"trainable", r.trainable_b},
        {"frozen", r.frozen_b},
        {"ffn_per_expert", r.ffn_per_expert_b}}},
      {"table_b", {{"total", r.table_total_b}, {"trainable", r.table_trainable_b}}},
      {"trainable_experts", r.trainable_experts},
  };
}

std::string param_report_table(const ParamReport& r) {
  std::ostringstream os;
  auto b = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v << "B";
    return s.str();
  };
  os << std::left << std::setw(26) << "component" << std::right << std::setw(16) << "params" << "\n";
  os << std::string(42, '-') << "\n";
  auto row = [&](const std::string& name, std::uint64_t v) {
    os << std::left << std::setw(26) << name << std::right << std::setw(16) << v << "\n";
  };
  row("embedding", r.embedding);
  row("attention", r.attention);
  row("norms", r.norms);
  row("lm_head", r.lm_head);
  row("ffn_per_expert", r.ffn_per_expert);
  row("routers", r.routers);
  os << std::string(42, '-') << "\n";
  os << std::left << std::setw(26) << "experts" << std::right << std::setw(16) << (r.n_experts == 0 ? 1 : r.n_experts)
     << "\n";
  row("total (exact)", r.total);
  row("trainable (exact)", r.trainable);
  row("frozen (exact)", r.frozen);
  os << std::string(42, '-') << "\n";
  os << std::left << std::setw(26) << "trainable" << std::right << std::setw(16) << b(r.table_trainable_b) << "\n";
  os << std::left << std::setw(26) << "total" << std::right << std::setw(16) << b(r.table_total_b) << "\n";
  return os.str();
}

}  // namespace mofe
