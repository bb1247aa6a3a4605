// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/merge.hpp"

#include <fstream>

#include "mofe/tokenizer.hpp"

namespace mofe {

GateMode gate_mode_from_name(const std::string& name) {
  if (name == "hidden") return GateMode::hidden;
  if (name == "random") return GateMode::random;
  if (name == "zero") return GateMode::zero;
  throw ConfigError("unknown gate mode: " + name + " (expected hidden|random|zero)", "gate_mode");
}

std::string gate_mode_name(GateMode mode) {
  switch (mode) {
    case GateMode::hidden: return "hidden";
    case GateMode::random: return "random";
    case GateMode::zero: return "zero";
  }
  return "hidden";
}

namespace {

std::vector<int> tokens_from_value(const nlohmann::json& v, const std::string& where) {
  if (v.is_string()) return ByteTokenizer::encode(v.get<std::string>());
  if (v.is_array()) {
    std::vector<int> ids;
    for (const auto& x : v) {
      if (!x.is_number_integer()) throw ConfigError("token arrays must hold integers", where);
      ids.push_back(x.get<int>());
    }
    return ids;
  }
  throw ConfigError("expected a string or an array of token ids", where);
}

std::vector<std::vector<int>> prompt_list(const nlohmann::json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError("prompt list must be an array", where);
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(tokens_from_value(v[i], where + "[" + std::to_string(i) + "]"));
  }
  return out;
}

}  // namespace

nlohmann::json merge_spec_to_json(const MergeSpec& spec) {
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : spec.experts) {
    experts.push_back({{"name", e.name},
                       {"archive", e.archive_path},
                       {"positive_prompts", e.positive_prompts},
                       {"negative_prompts", e.negative_prompts}});
  }
  return nlohmann::json{{"base", spec.base_path},   {"experts", experts},
                        {"m", spec.m},              {"gate_mode", gate_mode_name(spec.gate_mode)},
                        {"seed", spec.seed},        {"normalize_gate", spec.normalize_gate}};
}

MergeSpec merge_spec_from_json(const nlohmann::json& j, const std::string& path_prefix) {
  auto where = [&](const std::string& sub) { return path_prefix.empty() ? sub : path_prefix + "." + sub; };
  MergeSpec spec;
  if (!j.contains("base")) throw ConfigError("merge spec requires base", where("base"));
  spec.base_path = j.at("base").get<std::string>();
  if (!j.contains("experts") || !j.at("experts").is_array() || j.at("experts").empty()) {
    throw ConfigError("merge spec requires a nonempty experts array", where("experts"));
  }
  for (std::size_t i = 0; i < j.at("experts").size(); ++i) {
    const auto& ej = j.at("experts")[i];
    const std::string ewhere = where("experts[" + std::to_string(i) + "]");
    ExpertSpec e;
    if (!ej.contains("archive")) throw ConfigError("expert requires archive path", ewhere + ".archive");
    e.archive_path = ej.at("archive").get<std::string>();
    e.name = ej.value("name", "expert" + std::to_string(i));
    if (ej.contains("positive_prompts")) {
      e.positive_prompts = prompt_list(ej.at("positive_prompts"), ewhere + ".positive_prompts");
    }
    if (ej.contains("negative_prompts")) {
      e.negative_prompts = prompt_list(ej.at("negative_prompts"), ewhere + ".negative_prompts");
    }
    spec.experts.push_back(std::move(e));
  }
  spec.m = j.value("m", 2);
  if (spec.m < 1 || static_cast<std::size_t>(spec.m) > spec.experts.size()) {
    throw ConfigError("m (" + std::to_string(spec.m) + ") must be in [1, n_experts=" +
                          std::to_string(spec.experts.size()) + "]",
                      where("m"));
  }
  if (j.contains("gate_mode")) spec.gate_mode = gate_mode_from_name(j.at("gate_mode").get<std::string>());
  spec.seed = j.value("seed", 0);
  spec.normalize_gate = j.value("normalize_gate", true);
  return spec;
}

void load_prompt_sets_jsonl(MergeSpec& spec, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open prompts file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    const std::string where = path + ":" + std::to_string(lineno);
    if (!row.contains("name")) throw ConfigError("prompt row needs an expert name", where + ".name");
    const std::string name = row.at("name").get<std::string>();
    bool matched = false;
    for (auto& e : spec.experts) {
      if (e.name != name) continue;
      matched = true;
      if (row.contains("positive")) e.positive_prompts = prompt_list(row.at("positive"), where + ".positive");
      if (row.contains("negative")) e.negative_prompts = prompt_list(row.at("negative"), where + ".negative");
    }
    if (!matched) throw ConfigError("prompt row names unknown expert: " + name, where + ".name");
  }
}

namespace {

struct LoadedModel {
  TensorArchive archive;
  ModelMeta meta;
};

LoadedModel load_dense(const std::string& path, const std::string& role) {
  LoadedModel m;
  m.archive = load_archive(path);
  m.meta = load_meta(path);
  if (m.meta.n_experts != 0) {
    throw MergeError(role + " archive " + path + " must be a dense model (n_experts=0), got n_experts=" +
                     std::to_string(m.meta.n_experts));
  }
  return m;
}

// Copies a raw tensor verbatim, verifying shape against the symbolic spec
// so a bad archive is reported by tensor name.
void copy_verbatim(TensorArchive& out, const std::string& out_name, const TensorArchive& src,
                   const std::string& src_name, const std::vector<std::size_t>& want_dims, DType want_dtype,
                   const std::string& src_label, nlohmann::json& provenance) {
  if (!src.contains(src_name)) {
    throw StructuralError(src_label + " is missing tensor " + src_name);
  }
  const RawTensor& raw = src.at(src_name);
  if (raw.dims != want_dims) {
    throw MergeError("tensor " + src_name + " from " + src_label + ": shape " + shape_str(raw.dims) +
                     " does not match expected " + shape_str(want_dims));
  }
  if (raw.dtype != want_dtype) {
    throw MergeError("tensor " + src_name + " from " + src_label + ": dtype " + dtype_name(raw.dtype) +
                     " does not match expected " + dtype_name(want_dtype));
  }
  out.put(out_name, raw);
  provenance[out_name] = src_label + ":" + src_name;
}

template <typename T>
void init_routers(const MergeSpec& spec, const LoadedModel& base, TensorArchive& out, nlohmann::json& provenance,
                  nlohmann::json& gate_stats) {
  const ModelConfig& cfg = base.meta.config;
  const std::size_t n = spec.experts.size();
  const std::size_t h = cfg.hidden_dim;

  DecoderT<T> base_model;
  if (spec.gate_mode == GateMode::hidden) {
    base_model = build_decoder<T>(base.archive, cfg, 0, 0);
    for (std::size_t e = 0; e < n; ++e) {
      if (spec.experts[e].positive_prompts.empty()) {
        throw ConfigError("gate_mode hidden requires positive prompts for expert " + spec.experts[e].name,
                          "experts[" + std::to_string(e) + "].positive_prompts");
      }
    }
  }
  Rng rng(spec.seed);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    Tensor<T> router = Tensor<T>::zeros({n, h});
    auto& rv = router.mutable_data();
    nlohmann::json norms = nlohmann::json::array();
    for (std::size_t e = 0; e < n; ++e) {
      Tensor<T> row;
      switch (spec.gate_mode) {
        case GateMode::hidden:
          row = init_gate_hidden(base_model, spec.experts[e].positive_prompts, spec.experts[e].negative_prompts,
                                 l, spec.normalize_gate);
          break;
        case GateMode::random:
          row = init_gate_random<T>(rng, h, spec.normalize_gate);
          break;
        case GateMode::zero:
          row = init_gate_zero<T>(h);
          break;
      }
      std::copy(row.data().begin(), row.data().end(), rv.begin() + e * h);
      double sq = 0.0;
      for (T v : row.data()) sq += static_cast<double>(v) * static_cast<double>(v);
      norms.push_back(std::sqrt(sq));
    }
    const std::string name = router_tensor_name(l);
    out.put(name, raw_from_tensor(router));
    provenance[name] = "init:" + gate_mode_name(spec.gate_mode);
    gate_stats.push_back({{"layer", l}, {"row_l2_norms", norms}});
  }
}

}  // namespace

MergeOutput merge_models(const MergeSpec& spec) {
  if (spec.experts.empty()) throw ConfigError("merge requires at least one expert", "experts");
  if (spec.m < 1 || static_cast<std::size_t>(spec.m) > spec.experts.size()) {
    throw ConfigError("m must be in [1, n_experts]", "m");
  }

  LoadedModel base = load_dense(spec.base_path, "base");
  const ModelConfig& cfg = base.meta.config;

  std::vector<LoadedModel> experts;
  experts.reserve(spec.experts.size());
  for (const auto& e : spec.experts) {
    LoadedModel m = load_dense(e.archive_path, "expert " + e.name);
    if (!(m.meta.config == cfg)) {
      // Identify a concrete offending tensor for the message.
      std::string offender = "embedding.weight";
      for (const auto& s : model_tensor_specs(m.meta.config, 0)) {
        bool found = false;
        for (const auto& b : model_tensor_specs(cfg, 0)) {
          if (b.name == s.name && b.dims == s.dims) {
            found = true;
            break;
          }
        }
        if (!found) {
          offender = s.name;
          break;
        }
      }
      throw MergeError("expert " + e.name + " (" + e.archive_path + ") config is incompatible with base; first " +
                       "mismatching tensor: " + offender);
    }
    if (m.meta.dtype != base.meta.dtype) {
      throw MergeError("expert " + e.name + " dtype " + dtype_name(m.meta.dtype) + " does not match base " +
                       dtype_name(base.meta.dtype));
    }
    experts.push_back(std::move(m));
  }

  MergeOutput out;
  nlohmann::json provenance = nlohmann::json::object();
  nlohmann::json gate_stats = nlohmann::json::array();
  const int n_experts = static_cast<int>(spec.experts.size());

  // Trunk verbatim from the base; expert FFN tensors verbatim into their
  // slots.
  for (const auto& s : model_tensor_specs(cfg, n_experts)) {
    if (s.component == Component::router) continue;  // initialized below
    if (s.expert.has_value()) {
      const std::string src_name = s.name;
      // layers.<l>.experts.<e>.w_x.weight <- layers.<l>.ffn.w_x.weight
      const std::string tag = ".experts." + std::to_string(*s.expert) + ".";
      auto pos = s.name.find(tag);
      std::string dense_name = s.name.substr(0, pos) + ".ffn." + s.name.substr(pos + tag.size());
      copy_verbatim(out.archive, s.name, experts[static_cast<std::size_t>(*s.expert)].archive, dense_name,
                    s.dims, base.meta.dtype, "expert " + spec.experts[static_cast<std::size_t>(*s.expert)].name,
                    provenance);
    } else {
      copy_verbatim(out.archive, s.name, base.archive, s.name, s.dims, base.meta.dtype, "base", provenance);
    }
  }

  if (base.meta.dtype == DType::f32) {
    init_routers<float>(spec, base, out.archive, provenance, gate_stats);
  } else {
    init_routers<double>(spec, base, out.archive, provenance, gate_stats);
  }

  out.meta.config = cfg;
  out.meta.n_experts = n_experts;
  out.meta.top_m = spec.m;
  out.meta.dtype = base.meta.dtype;
  out.meta.freeze = manifest_mofe();
  out.meta.provenance_hash = fnv1a_hex(merge_spec_to_json(spec).dump() + meta_canonical(base.meta));

  nlohmann::json expert_names = nlohmann::json::array();
  for (const auto& e : spec.experts) expert_names.push_back(e.name);
  out.report = nlohmann::json{
      {"provenance", provenance},
      {"gate_stats", gate_stats},
      {"config_hash", meta_hash(out.meta)},
      {"provenance_hash", out.meta.provenance_hash},
      {"experts", expert_names},
      {"m", spec.m},
      {"gate_mode", gate_mode_name(spec.gate_mode)},
      {"normalize_gate", spec.normalize_gate},
      {"conventions",
       {{"router_softmax", "after-top-m-over-selected-logits"},
        {"gate_pooling", "mean-over-token-positions-then-mean-over-prompts"},
        {"gate_stream", "residual-stream-entering-layer"},
        {"gate_prompt_bos", false}}},
  };
  return out;
}

}  // namespace mofe
