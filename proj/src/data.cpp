// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/data.hpp"

#include <fstream>

#include "mofe/errors.hpp"
#include "mofe/tokenizer.hpp"

namespace mofe {

LossMode loss_mode_from_name(const std::string& name) {
  if (name == "instruction") return LossMode::instruction;
  if (name == "pretrain") return LossMode::pretrain;
  throw ConfigError("unknown loss mode: " + name + " (expected instruction|pretrain)", "train.loss_mode");
}

std::string loss_mode_name(LossMode mode) {
  return mode == LossMode::instruction ? "instruction" : "pretrain";
}

namespace {

std::vector<int> tokens_from_value(const nlohmann::json& v, const std::string& where) {
  if (v.is_string()) return ByteTokenizer::encode(v.get<std::string>());
  if (v.is_array()) {
    std::vector<int> ids;
    ids.reserve(v.size());
    for (const auto& x : v) {
      if (!x.is_number_integer()) throw ConfigError("token arrays must hold integers", where);
      ids.push_back(x.get<int>());
    }
    return ids;
  }
  throw ConfigError("expected a string or an array of token ids", where);
}

}  // namespace

Dataset dataset_from_json_lines(const std::vector<nlohmann::json>& rows, LossMode mode,
                                const std::string& path_for_errors) {
  Dataset ds;
  ds.mode = mode;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const std::string where = path_for_errors + ":" + std::to_string(i + 1);
    Sample s;
    if (mode == LossMode::instruction) {
      if (!row.contains("prompt") || !row.contains("completion")) {
        throw ConfigError("instruction rows need prompt and completion", where);
      }
      s.prompt_tokens = tokens_from_value(row.at("prompt"), where + ".prompt");
      s.completion_tokens = tokens_from_value(row.at("completion"), where + ".completion");
    } else {
      if (!row.contains("text")) throw ConfigError("pretrain rows need text", where);
      s.completion_tokens = tokens_from_value(row.at("text"), where + ".text");
    }
    if (s.completion_tokens.empty()) throw ConfigError("sample has no completion tokens", where);
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw ConfigError("dataset is empty", path_for_errors);
  return ds;
}

Dataset load_dataset_jsonl(const std::string& path, LossMode mode) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset: " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
  }
  return dataset_from_json_lines(rows, mode, path);
}

std::size_t Batch::target_count() const {
  std::size_t n = 0;
  for (const auto& row : loss_mask) {
    for (std::uint8_t m : row) n += m ? 1 : 0;
  }
  return n;
}

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices, std::size_t max_seq_len) {
  Batch batch;
  std::size_t longest = 0;
  for (std::size_t idx : indices) {
    if (idx >= dataset.samples.size()) throw ContractError("sample index out of range");
    const Sample& s = dataset.samples[idx];
    std::vector<int> ids;
    std::vector<std::uint8_t> mask;
    ids.push_back(ByteTokenizer::kBos);
    mask.push_back(0);
    for (int t : s.prompt_tokens) {
      ids.push_back(t);
      mask.push_back(0);
    }
    for (int t : s.completion_tokens) {
      ids.push_back(t);
      mask.push_back(1);
    }
    ids.push_back(ByteTokenizer::kEos);
    mask.push_back(1);
    if (ids.size() > max_seq_len) {
      ids.resize(max_seq_len);
      mask.resize(max_seq_len);
    }
    longest = std::max(longest, ids.size());
    batch.token_ids.push_back(std::move(ids));
    batch.loss_mask.push_back(std::move(mask));
  }
  for (std::size_t i = 0; i < batch.token_ids.size(); ++i) {
    batch.token_ids[i].resize(longest, ByteTokenizer::kPad);
    batch.loss_mask[i].resize(longest, 0);
  }
  if (batch.target_count() == 0) throw ContractError("batch has no unmasked target positions");
  return batch;
}

std::vector<std::size_t> sample_indices(Rng& rng, std::size_t dataset_size, std::size_t count) {
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<std::size_t>(rng.below(dataset_size));
  return out;
}

}  // namespace mofe
