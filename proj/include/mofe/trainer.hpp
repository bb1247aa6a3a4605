// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mofe/data.hpp"
#include "mofe/decoder.hpp"
#include "mofe/errors.hpp"
#include "mofe/freeze.hpp"
#include "mofe/meta.hpp"

namespace mofe {

struct TrainConfig {
  double learning_rate = 3e-5;
  int batch_size = 4;
  int grad_accum_steps = 512;
  double weight_decay = 0.01;
  int total_steps = 0;
  int warmup_steps = 0;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::instruction;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping
  int checkpoint_every = 0;    // 0 = final checkpoint only
};

void validate_train_config(const TrainConfig& cfg);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path_prefix = "");

// Linear warmup from 0 over warmup_steps, then linear decay to 0 at
// total_steps. Steps outside [0, total_steps] are errors.
double lr_at_step(const TrainConfig& cfg, int step);

struct TrainRecord {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainingLog {
  std::vector<TrainRecord> records;
};

void write_training_log_csv(const TrainingLog& log, const std::string& path);

// First/second moment buffers, kept only for trainable tensors.
template <typename T>
struct AdamWStateT {
  struct Slot {
    std::vector<T> m;
    std::vector<T> v;
  };
  std::map<std::string, Slot> slots;
  std::int64_t step_count = 0;
};

// Marks tensors trainable/frozen per the manifest and returns the
// partition. Frozen tensors never enter the tape afterwards.
template <typename T>
Partition apply_manifest_to_model(DecoderT<T>& model, const FreezeManifest& manifest) {
  std::vector<std::string> names;
  auto named = model.named_tensors();
  names.reserve(named.size());
  for (auto& [name, tensor] : named) names.push_back(name);
  Partition part = apply_manifest(manifest, names);
  for (auto& [name, tensor] : named) tensor.set_requires_grad(manifest_trainable(manifest, name));
  return part;
}

template <typename T>
AdamWStateT<T> init_optimizer(DecoderT<T>& model, const FreezeManifest& manifest) {
  AdamWStateT<T> state;
  for (auto& [name, tensor] : model.named_tensors()) {
    if (!manifest_trainable(manifest, name)) continue;
    state.slots[name] = {std::vector<T>(tensor.numel(), T(0)), std::vector<T>(tensor.numel(), T(0))};
  }
  return state;
}

// Decoupled weight decay applies to 2-D matrices except the embedding.
inline bool weight_decay_applies(const std::string& name, std::size_t rank) {
  return rank == 2 && name != "embedding.weight";
}

struct MicrobatchResult {
  double loss_sum = 0.0;
  std::size_t target_count = 0;
};

// Forward + backward over one microbatch. Gradients accumulate into the
// trainable tensors' grad buffers; the loss is the sum of per-target NLL
// so accumulation stays exact when microbatches differ in target counts.
template <typename T>
MicrobatchResult accumulate_gradients(DecoderT<T>& model, const Batch& batch) {
  MicrobatchResult result;
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const auto& ids = batch.token_ids[r];
    const auto& mask = batch.loss_mask[r];
    if (ids.size() < 2) continue;
    std::vector<int> targets(ids.size(), 0);
    std::vector<std::uint8_t> cemask(ids.size(), 0);
    for (std::size_t p = 0; p + 1 < ids.size(); ++p) {
      targets[p] = ids[p + 1];
      cemask[p] = mask[p + 1];
    }
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Tensor<T> logits = forward(model, ids);
    std::size_t count = 0;
    Tensor<T> loss = cross_entropy_sum_with_mask(logits, targets, cemask, &count);
    if (count == 0) continue;
    backward(loss);
    result.loss_sum += static_cast<double>(loss.item());
    result.target_count += count;
  }
  return result;
}

// One AdamW update after gradient accumulation. Present gradients are
// scaled by 1/total_targets (the mean-loss gradient); tensors that saw no
// gradient this step are skipped, matching the usual framework behavior.
template <typename T>
void optimizer_update(DecoderT<T>& model, AdamWStateT<T>& opt, const TrainConfig& cfg, int step,
                      std::size_t total_targets) {
  if (total_targets == 0) throw ContractError("optimizer_update: no target positions accumulated");
  const double lr = lr_at_step(cfg, step);
  const T inv_count = T(1) / static_cast<T>(total_targets);

  auto named = model.named_tensors();

  if (cfg.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (auto& [name, tensor] : named) {
      if (!tensor.requires_grad() || !tensor.has_grad()) continue;
      for (T g : tensor.grad()) {
        double gs = static_cast<double>(g) * inv_count;
        sq += gs * gs;
      }
    }
    double norm = std::sqrt(sq);
    if (norm > cfg.max_grad_norm) {
      const T factor = static_cast<T>(cfg.max_grad_norm / norm);
      for (auto& [name, tensor] : named) {
        if (!tensor.requires_grad() || !tensor.has_grad()) continue;
        for (T& g : tensor.grad_buffer()) g *= factor;
      }
    }
  }

  opt.step_count += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(opt.step_count));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(opt.step_count));
  for (auto& [name, tensor] : named) {
    if (!tensor.requires_grad() || !tensor.has_grad()) continue;
    auto it = opt.slots.find(name);
    if (it == opt.slots.end()) {
      throw ContractError("optimizer has no state for trainable tensor " + name);
    }
    auto& slot = it->second;
    auto& theta = tensor.mutable_data();
    const auto& grad = tensor.grad();
    const T b1 = static_cast<T>(cfg.adam_beta1);
    const T b2 = static_cast<T>(cfg.adam_beta2);
    const bool decay = weight_decay_applies(name, tensor.rank());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const T g = grad[i] * inv_count;
      slot.m[i] = b1 * slot.m[i] + (T(1) - b1) * g;
      slot.v[i] = b2 * slot.v[i] + (T(1) - b2) * g * g;
      const T mhat = slot.m[i] / static_cast<T>(bc1);
      const T vhat = slot.v[i] / static_cast<T>(bc2);
      theta[i] -= static_cast<T>(lr) * (mhat / (std::sqrt(vhat) + static_cast<T>(cfg.adam_eps)));
      if (decay) theta[i] -= static_cast<T>(lr * cfg.weight_decay) * theta[i];
    }
    tensor.zero_grad();
  }
}

// One optimizer step over a group of microbatches (the gradient
// accumulation window). Returns the mean loss per target token.
template <typename T>
double train_step(DecoderT<T>& model, const std::vector<Batch>& microbatches, const TrainConfig& cfg,
                  AdamWStateT<T>& opt, int step) {
  double loss_sum = 0.0;
  std::size_t targets = 0;
  for (const Batch& b : microbatches) {
    MicrobatchResult r = accumulate_gradients(model, b);
    loss_sum += r.loss_sum;
    targets += r.target_count;
  }
  if (targets == 0) throw ContractError("train_step: batch has no unmasked target positions");
  const double loss = loss_sum / static_cast<double>(targets);
  if (!std::isfinite(loss)) {
    throw ContractError("train_step: non-finite loss " + std::to_string(loss) + " at step " +
                        std::to_string(step) + " (lr " + std::to_string(lr_at_step(cfg, step)) + ")");
  }
  optimizer_update(model, opt, cfg, step, targets);
  return loss;
}

template <typename T>
double train_step(DecoderT<T>& model, const Batch& batch, const TrainConfig& cfg, AdamWStateT<T>& opt,
                  int step) {
  return train_step(model, std::vector<Batch>{batch}, cfg, opt, step);
}

template <typename T>
TensorArchive optimizer_to_archive(const AdamWStateT<T>& opt) {
  TensorArchive archive;
  for (const auto& [name, slot] : opt.slots) {
    archive.put(name + ".m", raw_from_tensor(Tensor<T>::from_data({slot.m.size()}, slot.m)));
    archive.put(name + ".v", raw_from_tensor(Tensor<T>::from_data({slot.v.size()}, slot.v)));
  }
  return archive;
}

template <typename T>
void optimizer_from_archive(AdamWStateT<T>& opt, const TensorArchive& archive) {
  for (auto& [name, slot] : opt.slots) {
    slot.m = tensor_from_raw<T>(archive.at(name + ".m"), name + ".m").data();
    slot.v = tensor_from_raw<T>(archive.at(name + ".v"), name + ".v").data();
  }
}

struct TrainPaths {
  std::string model;  // <prefix>.mofe
  std::string optimizer;
  std::string state;
};

TrainPaths train_paths(const std::string& prefix);

// Model + optimizer + rng + step counter, sufficient to resume a run
// exactly.
template <typename T>
void save_training_state(const std::string& prefix, DecoderT<T>& model, const ModelMeta& meta,
                         const AdamWStateT<T>& opt, const Rng& rng, int next_step) {
  TrainPaths paths = train_paths(prefix);
  TensorArchive model_archive = dump_decoder(model);
  save_archive(model_archive, paths.model);
  save_meta(meta, paths.model);
  save_archive(optimizer_to_archive(opt), paths.optimizer);
  nlohmann::json state{{"next_step", next_step}, {"opt_step", opt.step_count}, {"rng", rng.serialize()}};
  std::ofstream os(paths.state, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + paths.state);
  os << state.dump(2) << "\n";
}

struct RunOptions {
  std::string out_dir;          // empty disables checkpointing entirely
  std::string resume_from;      // checkpoint prefix to continue from
};

// The training loop: sample microbatches, accumulate, update, log. Fully
// deterministic given the seed; resuming from a saved checkpoint continues
// the identical trajectory.
template <typename T>
TrainingLog run_training(DecoderT<T>& model, ModelMeta meta, const Dataset& dataset, const TrainConfig& cfg,
                         const FreezeManifest& manifest, const RunOptions& options = {}) {
  validate_train_config(cfg);
  if (dataset.samples.empty()) throw ConfigError("dataset is empty", "dataset");

  meta.freeze = manifest;
  apply_manifest_to_model(model, manifest);
  AdamWStateT<T> opt = init_optimizer(model, manifest);
  Rng rng(cfg.seed);
  int start_step = 0;

  if (!options.resume_from.empty()) {
    TrainPaths paths = train_paths(options.resume_from);
    TensorArchive model_archive = load_archive(paths.model);
    model = build_decoder<T>(model_archive, meta.config, meta.n_experts, meta.top_m);
    apply_manifest_to_model(model, manifest);
    optimizer_from_archive(opt, load_archive(paths.optimizer));
    std::ifstream is(paths.state);
    if (!is) throw IoError("cannot open for reading: " + paths.state);
    nlohmann::json state;
    is >> state;
    start_step = state.at("next_step").get<int>();
    opt.step_count = state.at("opt_step").get<std::int64_t>();
    rng = Rng::deserialize(state.at("rng").get<std::string>());
  }

  namespace fs = std::filesystem;
  const bool io = !options.out_dir.empty();
  if (io) fs::create_directories(options.out_dir);
  auto prefix_for = [&](const std::string& tag) { return options.out_dir + "/" + tag; };

  TrainingLog log;
  for (int step = start_step; step < cfg.total_steps; ++step) {
    std::vector<Batch> microbatches;
    microbatches.reserve(static_cast<std::size_t>(cfg.grad_accum_steps));
    for (int g = 0; g < cfg.grad_accum_steps; ++g) {
      auto indices = sample_indices(rng, dataset.samples.size(), static_cast<std::size_t>(cfg.batch_size));
      microbatches.push_back(make_batch(dataset, indices, model.config.max_seq_len));
    }
    double loss = train_step(model, microbatches, cfg, opt, step);
    log.records.push_back({step, lr_at_step(cfg, step), loss});
    if (io && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.total_steps) {
      save_training_state(prefix_for("step_" + std::to_string(step + 1)), model, meta, opt, rng, step + 1);
    }
  }
  if (io) {
    save_training_state(prefix_for("final"), model, meta, opt, rng, cfg.total_steps);
    write_training_log_csv(log, options.out_dir + "/log.csv");
  }
  return log;
}

}  // namespace mofe
