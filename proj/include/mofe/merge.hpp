// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "mofe/archive.hpp"
#include "mofe/decoder.hpp"
#include "mofe/meta.hpp"
#include "mofe/rng.hpp"

namespace mofe {

enum class GateMode { hidden, random, zero };

GateMode gate_mode_from_name(const std::string& name);
std::string gate_mode_name(GateMode mode);

struct ExpertSpec {
  std::string name;
  std::string archive_path;
  std::vector<std::vector<int>> positive_prompts;
  std::vector<std::vector<int>> negative_prompts;
};

// Recipe: one base + N experts + gate init -> one MoE checkpoint.
struct MergeSpec {
  std::string base_path;
  std::vector<ExpertSpec> experts;
  int m = 2;
  GateMode gate_mode = GateMode::hidden;
  std::uint64_t seed = 0;
  bool normalize_gate = true;
};

nlohmann::json merge_spec_to_json(const MergeSpec& spec);
// Prompt values may be strings (byte-tokenized) or arrays of token ids.
MergeSpec merge_spec_from_json(const nlohmann::json& j, const std::string& path_prefix = "");

// Prompt sets as JSONL, one {"name", "positive": [...], "negative": [...]}
// object per expert, matched by expert name.
void load_prompt_sets_jsonl(MergeSpec& spec, const std::string& path);

struct MergeOutput {
  TensorArchive archive;
  ModelMeta meta;
  nlohmann::json report;
};

// Assembles the MoE checkpoint: trunk tensors verbatim from the base,
// per-layer expert FFN tensors verbatim from each expert archive, and one
// router tensor per layer initialized per gate_mode. The output carries the
// default freeze policy (experts frozen).
MergeOutput merge_models(const MergeSpec& spec);

namespace merge_detail {

template <typename T>
void l2_normalize_row(std::vector<T>& row) {
  T sq = T(0);
  for (T v : row) sq += v * v;
  T norm = std::sqrt(sq);
  if (norm < T(1e-12)) return;  // zero rows stay zero
  for (T& v : row) v /= norm;
}

}  // namespace merge_detail

// Mean-pooled positive hidden states minus mean-pooled negative hidden
// states at the residual stream entering `layer` (layer 0 = post-embedding).
// Prompts are pooled by mean over token positions, then mean over prompts.
template <typename T>
Tensor<T> init_gate_hidden(const DecoderT<T>& base, const std::vector<std::vector<int>>& positive,
                           const std::vector<std::vector<int>>& negative, std::size_t layer,
                           bool normalize = true) {
  if (positive.empty()) throw ConfigError("gate init requires at least one positive prompt", "positive_prompts");
  const std::size_t h = base.config.hidden_dim;
  auto pooled_mean = [&](const std::vector<std::vector<int>>& prompts) {
    std::vector<T> acc(h, T(0));
    for (const auto& prompt : prompts) {
      if (prompt.empty()) throw ConfigError("gate init prompts must be nonempty", "prompts");
      Tensor<T> states = hidden_states(base, prompt, layer);
      const auto& sv = states.data();
      const T inv = T(1) / static_cast<T>(prompt.size());
      for (std::size_t p = 0; p < prompt.size(); ++p) {
        for (std::size_t j = 0; j < h; ++j) acc[j] += sv[p * h + j] * inv;
      }
    }
    const T inv_count = T(1) / static_cast<T>(prompts.size());
    for (T& v : acc) v *= inv_count;
    return acc;
  };
  std::vector<T> row = pooled_mean(positive);
  if (!negative.empty()) {
    std::vector<T> neg = pooled_mean(negative);
    for (std::size_t j = 0; j < h; ++j) row[j] -= neg[j];
  }
  if (normalize) merge_detail::l2_normalize_row(row);
  return Tensor<T>::from_data({h}, std::move(row));
}

// Scaled-normal rows (std 0.02), deterministic per seed. The rng is shared
// across rows so call order defines the stream.
template <typename T>
Tensor<T> init_gate_random(Rng& rng, std::size_t hidden_dim, bool normalize = false) {
  std::vector<T> row(hidden_dim);
  for (T& v : row) v = static_cast<T>(rng.normal(0.0, 0.02));
  if (normalize) merge_detail::l2_normalize_row(row);
  return Tensor<T>::from_data({hidden_dim}, std::move(row));
}

template <typename T>
Tensor<T> init_gate_zero(std::size_t hidden_dim) {
  return Tensor<T>::zeros({hidden_dim});
}

}  // namespace mofe
