// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "mofe/demo.hpp"
#include "mofe/model_io.hpp"
#include "mofe/trainer.hpp"

using namespace mofe;
using mofe::testing::TempDir;
using mofe::testing::tiny_config;

namespace {

TrainConfig quick_config(int steps, double lr = 1e-3, int batch = 2, std::uint64_t seed = 5) {
  TrainConfig cfg;
  cfg.learning_rate = lr;
  cfg.batch_size = batch;
  cfg.grad_accum_steps = 1;
  cfg.total_steps = steps;
  cfg.seed = seed;
  cfg.loss_mode = LossMode::pretrain;
  return cfg;
}

Dataset tiny_corpus(std::uint64_t seed, std::size_t vocab, std::size_t n = 8, std::size_t len = 6) {
  Rng rng(seed);
  Dataset ds;
  ds.mode = LossMode::pretrain;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    for (std::size_t p = 0; p < len; ++p) s.completion_tokens.push_back(static_cast<int>(rng.below(vocab)));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

template <typename T>
std::map<std::string, std::vector<T>> snapshot(DecoderT<T>& model) {
  std::map<std::string, std::vector<T>> out;
  for (auto& [name, t] : model.named_tensors()) out[name] = t.data();
  return out;
}

}  // namespace

TEST_CASE("lr schedule: warmup then linear decay") {
  TrainConfig cfg;
  cfg.learning_rate = 3e-5;
  cfg.total_steps = 100;
  cfg.warmup_steps = 0;
  CHECK(lr_at_step(cfg, 0) == doctest::Approx(3e-5));
  CHECK(lr_at_step(cfg, 100) == doctest::Approx(0.0));
  CHECK(lr_at_step(cfg, 50) == doctest::Approx(1.5e-5));

  cfg.warmup_steps = 10;
  CHECK(lr_at_step(cfg, 5) == doctest::Approx(1.5e-5));
  CHECK(lr_at_step(cfg, 0) == doctest::Approx(0.0));
  CHECK(lr_at_step(cfg, 10) == doctest::Approx(3e-5));

  CHECK_THROWS_AS(lr_at_step(cfg, -1), ContractError);
  CHECK_THROWS_AS(lr_at_step(cfg, 101), ContractError);
}

TEST_CASE("train config validation names the offending field") {
  nlohmann::json j{{"batch_size", 0}};
  try {
    train_config_from_json(j, "train");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.json_path() == "train.batch_size");
  }
}

TEST_CASE("masked-out tokens contribute exactly zero gradient") {
  // toy-byte keeps vocabulary compatible with the byte tokenizer ids used
  // by make_batch (BOS/EOS/PAD).
  const ModelConfig cfg = preset_config("toy-byte");
  auto model_a = init_decoder<float>(cfg, 0, 0, 3);
  TensorArchive archive = dump_decoder(model_a);
  auto model_b = build_decoder<float>(archive, cfg, 0, 0);
  apply_manifest_to_model(model_a, manifest_full());
  apply_manifest_to_model(model_b, manifest_full());

  // The final token is masked out, so it is neither a loss target nor a
  // causal input to any scored position; perturbing it must change nothing.
  Batch batch_a;
  batch_a.token_ids = {{256, 10, 20, 30, 40}};
  batch_a.loss_mask = {{0, 1, 1, 1, 0}};
  Batch batch_b = batch_a;
  batch_b.token_ids[0][4] = 99;

  auto ra = accumulate_gradients(model_a, batch_a);
  auto rb = accumulate_gradients(model_b, batch_b);
  CHECK(ra.loss_sum == doctest::Approx(rb.loss_sum));
  CHECK(ra.target_count == rb.target_count);
  for (auto& [name, ta] : model_a.named_tensors()) {
    for (auto& [name_b, tb] : model_b.named_tensors()) {
      if (name_b != name) continue;
      REQUIRE(ta.has_grad() == tb.has_grad());
      if (ta.has_grad()) CHECK(ta.grad() == tb.grad());
    }
  }
}

TEST_CASE("lr zero computes the loss but leaves weights bit-identical") {
  const ModelConfig cfg = preset_config("toy-byte");
  auto model = init_decoder<float>(cfg, 2, 2, 7);
  FreezeManifest manifest = manifest_mofe();
  apply_manifest_to_model(model, manifest);
  auto opt = init_optimizer(model, manifest);
  auto before = snapshot(model);

  Dataset ds = tiny_corpus(1, 200);
  Rng rng(2);
  Batch batch = make_batch(ds, sample_indices(rng, ds.samples.size(), 2), cfg.max_seq_len);
  TrainConfig tc = quick_config(1, /*lr=*/0.0);
  const double loss = train_step(model, batch, tc, opt, 0);
  CHECK(std::isfinite(loss));
  CHECK(loss > 0.0);
  for (auto& [name, t] : model.named_tensors()) CHECK(t.data() == before.at(name));
}

TEST_CASE("frozen tensors stay bit-identical through training") {
  const ModelConfig cfg = preset_config("toy-byte");
  auto model = init_decoder<float>(cfg, 2, 2, 9);
  ModelMeta meta = make_meta(model);
  auto before = snapshot(model);
  Dataset ds = tiny_corpus(3, 200);
  TrainConfig tc = quick_config(30, 1e-3, 2, 11);
  run_training(model, meta, ds, tc, manifest_mofe(), RunOptions{});
  std::size_t frozen_checked = 0, trainable_changed = 0;
  for (auto& [name, t] : model.named_tensors()) {
    if (!manifest_trainable(manifest_mofe(), name)) {
      CHECK(t.data() == before.at(name));
      ++frozen_checked;
    } else if (t.data() != before.at(name)) {
      ++trainable_changed;
    }
  }
  CHECK(frozen_checked == 2 * 2 * 3);  // 2 layers x 2 experts x 3 matrices
  CHECK(trainable_changed > 0);
}

TEST_CASE("optimizer state exists only for trainable tensors and tracks the trainable count") {
  const ModelConfig cfg = tiny_config();
  for (int n : {2, 4}) {
    auto model = init_decoder<float>(cfg, n, 2, 13);
    FreezeManifest manifest = manifest_mofe();
    apply_manifest_to_model(model, manifest);
    auto opt = init_optimizer(model, manifest);
    std::uint64_t state_params = 0;
    for (const auto& [name, slot] : opt.slots) {
      CHECK(manifest_trainable(manifest, name));
      CHECK(name.find(".experts.") == std::string::npos);
      state_params += slot.m.size();
    }
    const auto report = count_params(cfg, n, manifest);
    CHECK(state_params == report.trainable);
  }
  // The footprint difference between expert counts is exactly the router
  // growth, so everything else is independent of n.
  const auto r2 = count_params(cfg, 2, manifest_mofe());
  const auto r4 = count_params(cfg, 4, manifest_mofe());
  CHECK(r4.trainable - r2.trainable == 2 * cfg.n_layers * cfg.hidden_dim);
}

TEST_CASE("gradient accumulation equals the single large batch") {
  const ModelConfig cfg = preset_config("toy-byte");
  auto model_a = init_decoder<double>(cfg, 2, 2, 17);
  TensorArchive archive = dump_decoder(model_a);
  auto model_b = build_decoder<double>(archive, cfg, 2, 2);
  FreezeManifest manifest = manifest_mofe();
  apply_manifest_to_model(model_a, manifest);
  apply_manifest_to_model(model_b, manifest);
  auto opt_a = init_optimizer(model_a, manifest);
  auto opt_b = init_optimizer(model_b, manifest);

  Dataset ds = tiny_corpus(19, 200, 8, 6);
  std::vector<std::size_t> indices{0, 1, 2, 3, 4, 5, 6, 7};
  Batch big = make_batch(ds, indices, cfg.max_seq_len);
  std::vector<Batch> micro;
  for (int g = 0; g < 4; ++g) {
    micro.push_back(make_batch(ds, {indices[2 * g], indices[2 * g + 1]}, cfg.max_seq_len));
  }

  TrainConfig tc = quick_config(1, 1e-3);
  const double loss_big = train_step(model_a, big, tc, opt_a, 0);
  const double loss_micro = train_step(model_b, micro, tc, opt_b, 0);
  CHECK(loss_big == doctest::Approx(loss_micro).epsilon(1e-12));
  for (auto& [name, ta] : model_a.named_tensors()) {
    for (auto& [nb, tb] : model_b.named_tensors()) {
      if (nb != name) continue;
      for (std::size_t i = 0; i < ta.numel(); ++i) {
        CHECK(std::abs(ta.data()[i] - tb.data()[i]) <= 1e-6);
      }
    }
  }
}

TEST_CASE("training is deterministic given the seed") {
  const ModelConfig cfg = preset_config("toy-byte");
  Dataset ds = tiny_corpus(23, 200);
  TrainConfig tc = quick_config(5, 1e-3, 2, 29);
  auto run = [&] {
    auto model = init_decoder<float>(cfg, 2, 2, 31);
    ModelMeta meta = make_meta(model);
    return run_training(model, meta, ds, tc, manifest_mofe(), RunOptions{});
  };
  TrainingLog a = run();
  TrainingLog b = run();
  REQUIRE(a.records.size() == b.records.size());
  CHECK(a.records.size() == 5);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].loss == b.records[i].loss);
    CHECK(a.records[i].lr == b.records[i].lr);
  }
}

TEST_CASE("resume reproduces the uninterrupted trajectory") {
  TempDir dir("trainer_resume");
  const ModelConfig cfg = preset_config("toy-byte");
  Dataset ds = tiny_corpus(37, 200);
  TrainConfig tc = quick_config(8, 1e-3, 2, 41);
  tc.checkpoint_every = 4;

  auto model = init_decoder<float>(cfg, 2, 2, 43);
  ModelMeta meta = make_meta(model);
  RunOptions opts;
  opts.out_dir = dir.file("run");
  TrainingLog full = run_training(model, meta, ds, tc, manifest_mofe(), opts);
  REQUIRE(full.records.size() == 8);

  auto resumed_model = init_decoder<float>(cfg, 2, 2, 999);  // replaced by the checkpoint
  RunOptions resume_opts;
  resume_opts.resume_from = dir.file("run") + "/step_4";
  TrainingLog tail = run_training(resumed_model, meta, ds, tc, manifest_mofe(), resume_opts);
  REQUIRE(tail.records.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(tail.records[i].step == full.records[4 + i].step);
    CHECK(std::abs(tail.records[i].loss - full.records[4 + i].loss) <= 1e-6);
  }
}

TEST_CASE("training rejects empty effective batches and non-finite losses") {
  const ModelConfig cfg = preset_config("toy-byte");
  auto model = init_decoder<float>(cfg, 0, 0, 47);
  FreezeManifest manifest = manifest_full();
  apply_manifest_to_model(model, manifest);
  auto opt = init_optimizer(model, manifest);
  TrainConfig tc = quick_config(1);

  Batch empty;
  empty.token_ids = {{256, 1, 2}};
  empty.loss_mask = {{0, 0, 0}};
  CHECK_THROWS_AS(train_step(model, empty, tc, opt, 0), ContractError);

  model.embedding.mutable_data()[0] = std::numeric_limits<float>::infinity();
  Batch bad;
  bad.token_ids = {{0, 1, 2}};
  bad.loss_mask = {{0, 1, 1}};
  CHECK_THROWS_AS(train_step(model, bad, tc, opt, 0), Error);
}

TEST_CASE("weight decay applies to matrices but not norms or the embedding") {
  CHECK(weight_decay_applies("layers.0.attn.wq.weight", 2));
  CHECK(weight_decay_applies("lm_head.weight", 2));
  CHECK(weight_decay_applies("layers.0.router.weight", 2));
  CHECK_FALSE(weight_decay_applies("embedding.weight", 2));
  CHECK_FALSE(weight_decay_applies("final_norm.weight", 1));
  CHECK_FALSE(weight_decay_applies("layers.0.attn_norm.weight", 1));
}

TEST_CASE("training log CSV has one row per step") {
  TempDir dir("trainer_csv");
  TrainingLog log;
  log.records = {{0, 3e-5, 2.0}, {1, 2e-5, 1.5}};
  write_training_log_csv(log, dir.file("log.csv"));
  std::ifstream is(dir.file("log.csv"));
  std::string line;
  std::getline(is, line);
  CHECK(line == "step,lr,loss");
  int rows = 0;
  while (std::getline(is, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2);
}
