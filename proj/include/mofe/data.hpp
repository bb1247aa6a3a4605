// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mofe/rng.hpp"

namespace mofe {

enum class LossMode { instruction, pretrain };

LossMode loss_mode_from_name(const std::string& name);
std::string loss_mode_name(LossMode mode);

// One training example. Pretrain samples have an empty prompt; loss covers
// every completion token. Instruction samples compute loss on completion
// tokens (and EOS) only.
struct Sample {
  std::vector<int> prompt_tokens;
  std::vector<int> completion_tokens;
};

struct Dataset {
  LossMode mode = LossMode::pretrain;
  std::vector<Sample> samples;
};

// JSONL rows: {"prompt": ..., "completion": ...} for instruction mode or
// {"text": ...} for pretrain mode. Values are strings (byte-tokenized) or
// arrays of token ids.
Dataset load_dataset_jsonl(const std::string& path, LossMode mode);
Dataset dataset_from_json_lines(const std::vector<nlohmann::json>& rows, LossMode mode,
                                const std::string& path_for_errors = "<memory>");

// Tokenized microbatch. Rows are padded to a common length with PAD;
// loss_mask[i][p] marks token p of row i as a supervised target (targets
// start at position 1; position 0 is never a target).
struct Batch {
  std::vector<std::vector<int>> token_ids;
  std::vector<std::vector<std::uint8_t>> loss_mask;

  std::size_t rows() const { return token_ids.size(); }
  std::size_t target_count() const;
};

// Assembles BOS + prompt + completion + EOS rows, truncated to max_seq_len.
Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices, std::size_t max_seq_len);

// Uniform-with-replacement sampling; consumes exactly `count` draws from
// the rng stream, which keeps resume deterministic.
std::vector<std::size_t> sample_indices(Rng& rng, std::size_t dataset_size, std::size_t count);

}  // namespace mofe
