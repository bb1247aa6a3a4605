// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/trainer.hpp"

#include <fstream>

namespace mofe {

void validate_train_config(const TrainConfig& cfg) {
  auto fail = [](const std::string& field, const std::string& msg) { throw ConfigError(msg, "train." + field); };
  if (cfg.learning_rate < 0) fail("learning_rate", "learning_rate must be >= 0");
  if (cfg.batch_size < 1) fail("batch_size", "batch_size must be >= 1");
  if (cfg.grad_accum_steps < 1) fail("grad_accum_steps", "grad_accum_steps must be >= 1");
  if (cfg.weight_decay < 0) fail("weight_decay", "weight_decay must be >= 0");
  if (cfg.total_steps < 0) fail("total_steps", "total_steps must be >= 0");
  if (cfg.warmup_steps < 0) fail("warmup_steps", "warmup_steps must be >= 0");
  if (cfg.warmup_steps > cfg.total_steps) fail("warmup_steps", "warmup_steps must be <= total_steps");
  if (cfg.adam_eps <= 0) fail("adam_eps", "adam_eps must be positive");
  if (cfg.adam_beta1 < 0 || cfg.adam_beta1 >= 1) fail("adam_beta1", "adam_beta1 must be in [0, 1)");
  if (cfg.adam_beta2 < 0 || cfg.adam_beta2 >= 1) fail("adam_beta2", "adam_beta2 must be in [0, 1)");
  if (cfg.max_grad_norm < 0) fail("max_grad_norm", "max_grad_norm must be >= 0");
  if (cfg.checkpoint_every < 0) fail("checkpoint_every", "checkpoint_every must be >= 0");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return nlohmann::json{
      {"learning_rate", cfg.learning_rate},
      {"batch_size", cfg.batch_size},
      {"grad_accum_steps", cfg.grad_accum_steps},
      {"weight_decay", cfg.weight_decay},
      {"total_steps", cfg.total_steps},
      {"warmup_steps", cfg.warmup_steps},
      {"seed", cfg.seed},
      {"loss_mode", loss_mode_name(cfg.loss_mode)},
      {"adam_beta1", cfg.adam_beta1},
      {"adam_beta2", cfg.adam_beta2},
      {"adam_eps", cfg.adam_eps},
      {"max_grad_norm", cfg.max_grad_norm},
      {"checkpoint_every", cfg.checkpoint_every},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path_prefix) {
  auto where = [&](const std::string& sub) { return path_prefix.empty() ? sub : path_prefix + "." + sub; };
  TrainConfig cfg;
  auto get = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<std::decay_t<decltype(out)>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad value for ") + key + ": " + e.what(), where(key));
    }
  };
  get("learning_rate", cfg.learning_rate);
  get("batch_size", cfg.batch_size);
  get("grad_accum_steps", cfg.grad_accum_steps);
  get("weight_decay", cfg.weight_decay);
  get("total_steps", cfg.total_steps);
  get("warmup_steps", cfg.warmup_steps);
  get("seed", cfg.seed);
  if (j.contains("loss_mode")) cfg.loss_mode = loss_mode_from_name(j.at("loss_mode").get<std::string>());
  get("adam_beta1", cfg.adam_beta1);
  get("adam_beta2", cfg.adam_beta2);
  get("adam_eps", cfg.adam_eps);
  get("max_grad_norm", cfg.max_grad_norm);
  get("checkpoint_every", cfg.checkpoint_every);
  validate_train_config(cfg);
  return cfg;
}

double lr_at_step(const TrainConfig& cfg, int step) {
  if (step < 0 || step > cfg.total_steps) {
    throw ContractError("lr_at_step: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(cfg.total_steps) + "]");
  }
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.total_steps == cfg.warmup_steps) return step == cfg.total_steps ? 0.0 : cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

void write_training_log_csv(const TrainingLog& log, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "step,lr,loss\n";
  os.precision(17);
  for (const auto& r : log.records) os << r.step << "," << r.lr << "," << r.loss << "\n";
  if (!os) throw IoError("write failed: " + path);
}

TrainPaths train_paths(const std::string& prefix) {
  return TrainPaths{prefix + ".mofe", prefix + ".opt.mofe", prefix + ".state.json"};
}

}  // namespace mofe
