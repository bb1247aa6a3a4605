// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/demo.hpp"

#include <algorithm>
#include <filesystem>

#include "mofe/merge.hpp"
#include "mofe/model_io.hpp"
#include "mofe/tokenizer.hpp"
#include "mofe/trainer.hpp"

namespace mofe {

namespace {

constexpr const char* kKeyAlphabet = "abcdefghijklmnop";
constexpr const char* kValueAlphabet = "QRSTUVWXYZ123456";

std::vector<int> prompt_tokens(const std::string& prefix, int key_token) {
  std::vector<int> ids = ByteTokenizer::encode(prefix + ":");
  ids.push_back(key_token);
  ids.push_back(static_cast<int>('='));
  return ids;
}

SyntheticTask build_kv_task(const std::string& prefix, std::uint64_t seed, const KvTaskOptions& options,
                            const std::map<int, int>* avoid) {
  if (options.n_keys < 2 || options.n_keys > 16) throw ConfigError("n_keys must be in [2, 16]", "n_keys");
  if (options.n_choices < 2 || options.n_choices > options.n_keys) {
    throw ConfigError("n_choices must be in [2, n_keys]", "n_choices");
  }
  Rng rng(seed);
  SyntheticTask task;
  task.name = prefix;

  std::vector<int> keys, values;
  for (int i = 0; i < options.n_keys; ++i) {
    keys.push_back(static_cast<int>(kKeyAlphabet[i]));
    values.push_back(static_cast<int>(kValueAlphabet[i]));
  }
  std::vector<int> assigned = values;
  rng.shuffle(assigned);
  if (avoid != nullptr) {
    // Rotate collisions away so no key keeps the avoided task's value.
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (assigned[i] != avoid->at(keys[i])) continue;
      const std::size_t j = (i + 1) % keys.size();
      std::swap(assigned[i], assigned[j]);
      if (assigned[i] == avoid->at(keys[i])) {
        for (std::size_t k = 0; k < keys.size(); ++k) {
          if (k == i) continue;
          if (assigned[k] != avoid->at(keys[i]) && assigned[i] != avoid->at(keys[k])) {
            std::swap(assigned[i], assigned[k]);
            break;
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < keys.size(); ++i) task.mapping[keys[i]] = assigned[i];

  task.train.mode = LossMode::instruction;
  for (int key : keys) {
    Sample s;
    s.prompt_tokens = prompt_tokens(prefix, key);
    s.completion_tokens = {task.mapping.at(key)};
    task.train.samples.push_back(std::move(s));
    task.prompts.push_back(prompt_tokens(prefix, key));
  }

  for (int key : keys) {
    for (int rep = 0; rep < options.items_per_key; ++rep) {
      MultipleChoiceItem item;
      item.prompt = prompt_tokens(prefix, key);
      const int correct = task.mapping.at(key);
      std::vector<int> distractors;
      for (int v : values) {
        if (v != correct) distractors.push_back(v);
      }
      rng.shuffle(distractors);
      std::vector<int> chosen(distractors.begin(), distractors.begin() + options.n_choices - 1);
      chosen.push_back(correct);
      rng.shuffle(chosen);
      for (int v : chosen) item.choices.push_back({v});
      item.answer_index = static_cast<int>(
          std::find(chosen.begin(), chosen.end(), correct) - chosen.begin());
      task.items.push_back(std::move(item));
    }
  }
  return task;
}

}  // namespace

SyntheticTask make_kv_task(const std::string& prefix, std::uint64_t seed, const KvTaskOptions& options) {
  return build_kv_task(prefix, seed, options, nullptr);
}

SyntheticTask make_disjoint_kv_task(const std::string& prefix, std::uint64_t seed, const SyntheticTask& base,
                                    const KvTaskOptions& options) {
  SyntheticTask task = build_kv_task(prefix, seed, options, &base.mapping);
  for (const auto& [key, value] : task.mapping) {
    if (base.mapping.at(key) == value) {
      throw ContractError("disjoint task construction failed for key " + std::to_string(key));
    }
  }
  return task;
}

std::vector<MultipleChoiceItem> make_random_mc_task(std::uint64_t seed, std::size_t n_items, int n_choices,
                                                    std::size_t prompt_len) {
  Rng rng(seed);
  std::vector<MultipleChoiceItem> items;
  items.reserve(n_items);
  for (std::size_t i = 0; i < n_items; ++i) {
    MultipleChoiceItem item;
    for (std::size_t p = 0; p < prompt_len; ++p) {
      item.prompt.push_back(static_cast<int>('a') + static_cast<int>(rng.below(26)));
    }
    std::vector<int> tokens;
    while (tokens.size() < static_cast<std::size_t>(n_choices)) {
      int t = static_cast<int>('A') + static_cast<int>(rng.below(26));
      if (std::find(tokens.begin(), tokens.end(), t) == tokens.end()) tokens.push_back(t);
    }
    for (int t : tokens) item.choices.push_back({t});
    item.answer_index = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_choices)));
    items.push_back(std::move(item));
  }
  return items;
}

Dataset make_memorization_corpus(std::uint64_t seed, std::size_t n_sequences, std::size_t seq_len) {
  Rng rng(seed);
  Dataset ds;
  ds.mode = LossMode::pretrain;
  for (std::size_t i = 0; i < n_sequences; ++i) {
    Sample s;
    for (std::size_t p = 0; p < seq_len; ++p) {
      s.completion_tokens.push_back(static_cast<int>('a') + static_cast<int>(rng.below(26)));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

namespace {

TrainConfig tune_config(int steps, double lr, int batch_size, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.learning_rate = lr;
  cfg.batch_size = batch_size;
  cfg.grad_accum_steps = 1;
  cfg.weight_decay = 0.01;
  cfg.total_steps = steps;
  cfg.seed = seed;
  cfg.loss_mode = LossMode::instruction;
  return cfg;
}

// Merge the given two-expert bank on disk and tune it briefly with the
// default freeze policy (experts frozen).
double merge_tune_score(const std::string& work_dir, const std::string& tag, const std::string& base_path,
                        const std::string& left_path, const SyntheticTask& left_task,
                        const std::string& right_path, const SyntheticTask& right_task,
                        const SyntheticTask& eval_task, const TransferOptions& options, std::uint64_t seed) {
  MergeSpec spec;
  spec.base_path = base_path;
  spec.m = 2;
  spec.gate_mode = GateMode::hidden;
  spec.seed = seed;
  spec.normalize_gate = true;
  spec.experts.push_back({left_task.name, left_path, left_task.prompts, right_task.prompts});
  spec.experts.push_back({right_task.name, right_path, right_task.prompts, left_task.prompts});

  MergeOutput merged = merge_models(spec);
  const std::string merged_path = work_dir + "/" + tag + ".mofe";
  save_archive(merged.archive, merged_path);
  save_meta(merged.meta, merged_path);

  ModelMeta meta;
  DecoderT<float> model = load_model<float>(merged_path, &meta);
  run_training(model, meta, eval_task.train, tune_config(options.tune_steps, options.tune_lr, options.batch_size, seed),
               manifest_mofe(), RunOptions{});
  return mc_accuracy(model, eval_task.items).accuracy;
}

}  // namespace

nlohmann::json TransferReport::to_json() const {
  nlohmann::json runs_json = nlohmann::json::array();
  for (const auto& r : runs) {
    runs_json.push_back({{"seed", r.seed},
                         {"task_a_accuracy",
                          {{"two_a_experts", r.acc_two_a}, {"one_a_expert", r.acc_mixed}, {"zero_a_experts", r.acc_zero_a}}}});
  }
  return nlohmann::json{{"runs", runs_json},
                        {"first_margin_votes", first_margin_votes},
                        {"second_margin_votes", second_margin_votes},
                        {"seeds", runs.size()},
                        {"pass", pass}};
}

TransferReport demo_transfer(const std::string& work_dir, const std::vector<std::uint64_t>& seeds,
                             const TransferOptions& options) {
  if (seeds.empty()) throw ConfigError("demo transfer needs at least one seed", "seeds");
  namespace fs = std::filesystem;
  fs::create_directories(work_dir);

  TransferReport report;
  for (std::uint64_t seed : seeds) {
    const std::string run_dir = work_dir + "/seed_" + std::to_string(seed);
    fs::create_directories(run_dir);

    SyntheticTask task_a = make_kv_task("A", seed * 7919 + 1);
    SyntheticTask task_b = make_disjoint_kv_task("B", seed * 7919 + 2, task_a);

    const ModelConfig cfg = preset_config("toy-byte");
    DecoderT<float> base = init_decoder<float>(cfg, 0, 0, seed);
    ModelMeta base_meta = make_meta(base);
    const std::string base_path = run_dir + "/base.mofe";
    save_model(base, base_meta, base_path);

    // Experts: the base with only FFN tensors trained on one task, so all
    // task knowledge lands in the (later frozen) FFN blocks and the trunk
    // stays aligned with the base.
    auto train_expert = [&](const SyntheticTask& task, const std::string& path) {
      DecoderT<float> expert = load_model<float>(base_path);
      ModelMeta meta = make_meta(expert);
      run_training(expert, meta, task.train,
                   tune_config(options.expert_steps, options.expert_lr, options.batch_size, seed + 17),
                   manifest_ffn_only(), RunOptions{});
      save_model(expert, meta, path);
    };
    const std::string expert_a_path = run_dir + "/expert_a.mofe";
    const std::string expert_b_path = run_dir + "/expert_b.mofe";
    train_expert(task_a, expert_a_path);
    train_expert(task_b, expert_b_path);

    TransferRun run;
    run.seed = seed;
    run.acc_two_a = merge_tune_score(run_dir, "moe_2a", base_path, expert_a_path, task_a, expert_a_path, task_a,
                                     task_a, options, seed);
    run.acc_mixed = merge_tune_score(run_dir, "moe_1a1b", base_path, expert_a_path, task_a, expert_b_path,
                                     task_b, task_a, options, seed);
    run.acc_zero_a = merge_tune_score(run_dir, "moe_0a", base_path, expert_b_path, task_b, expert_b_path,
                                      task_b, task_a, options, seed);
    report.runs.push_back(run);
    if (run.acc_two_a >= run.acc_mixed) ++report.first_margin_votes;
    if (run.acc_mixed >= run.acc_zero_a) ++report.second_margin_votes;
  }
  const int majority = static_cast<int>(seeds.size()) / 2 + 1;
  report.pass = report.first_margin_votes >= majority && report.second_margin_votes >= majority;
  return report;
}

}  // namespace mofe
