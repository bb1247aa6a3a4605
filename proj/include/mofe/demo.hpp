// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mofe/data.hpp"
#include "mofe/evaluator.hpp"

namespace mofe {

// Deterministic key->value lookup task over byte tokens. Prompts look like
// "A:k=" and the completion is the single mapped value character. Two tasks
// built with disjoint mappings (no key maps to the same value) give a clean
// signal for which expert bank a merged model inherited.
struct SyntheticTask {
  std::string name;
  std::map<int, int> mapping;  // key token -> value token
  Dataset train;               // instruction-mode samples, one per key
  std::vector<MultipleChoiceItem> items;
  std::vector<std::vector<int>> prompts;  // tokenized prompts for gate init
};

struct KvTaskOptions {
  int n_keys = 16;
  int n_choices = 4;
  int items_per_key = 3;
};

SyntheticTask make_kv_task(const std::string& prefix, std::uint64_t seed, const KvTaskOptions& options = {});

// Same keys/values as `base` but a mapping that disagrees on every key.
SyntheticTask make_disjoint_kv_task(const std::string& prefix, std::uint64_t seed, const SyntheticTask& base,
                                    const KvTaskOptions& options = {});

// Random prompts with random distinct single-token choices; used for
// chance-level checks.
std::vector<MultipleChoiceItem> make_random_mc_task(std::uint64_t seed, std::size_t n_items, int n_choices = 4,
                                                    std::size_t prompt_len = 8);

// Random byte sequences for memorization runs (pretrain mode).
Dataset make_memorization_corpus(std::uint64_t seed, std::size_t n_sequences = 32, std::size_t seq_len = 16);

struct TransferOptions {
  int expert_steps = 300;
  double expert_lr = 5e-3;
  int tune_steps = 40;
  double tune_lr = 1e-3;
  int batch_size = 8;
};

struct TransferRun {
  std::uint64_t seed = 0;
  double acc_two_a = 0.0;    // merged bank {A, A}
  double acc_mixed = 0.0;    // merged bank {A, B}
  double acc_zero_a = 0.0;   // merged bank {B, B}
};

// Knowledge-transfer pipeline: build a shared base, train expert A/B with
// only FFN tensors trainable on disjoint tasks, merge the three expert
// compositions, tune each briefly with experts frozen, and score task A.
// Passing requires acc(2A) >= acc(mixed) >= acc(0A) for a majority of
// seeds.
struct TransferReport {
  std::vector<TransferRun> runs;
  int first_margin_votes = 0;   // acc(2A) >= acc(mixed)
  int second_margin_votes = 0;  // acc(mixed) >= acc(0A)
  bool pass = false;

  nlohmann::json to_json() const;
};

TransferReport demo_transfer(const std::string& work_dir, const std::vector<std::uint64_t>& seeds,
                             const TransferOptions& options = {});

}  // namespace mofe
