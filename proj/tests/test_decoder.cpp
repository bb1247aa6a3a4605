// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "mofe/decoder.hpp"

using namespace mofe;
using mofe::testing::max_abs_diff;
using mofe::testing::tiny_config;

namespace {

// Dense twin of a MoE model: same trunk, FFN taken from one expert slot.
DecoderT<float> dense_from_expert(const DecoderT<float>& moe, int expert) {
  DecoderT<float> dense;
  dense.config = moe.config;
  dense.n_experts = 0;
  dense.top_m = 0;
  dense.embedding = moe.embedding.clone();
  dense.final_norm = moe.final_norm.clone();
  dense.lm_head = moe.lm_head.clone();
  for (const auto& layer : moe.layers) {
    DecoderLayerT<float> copy;
    copy.attn_norm = layer.attn_norm.clone();
    copy.wq = layer.wq.clone();
    copy.wk = layer.wk.clone();
    copy.wv = layer.wv.clone();
    copy.wo = layer.wo.clone();
    copy.ffn_norm = layer.ffn_norm.clone();
    const auto& src = layer.experts[static_cast<std::size_t>(expert)];
    copy.experts.push_back({src.w_gate.clone(), src.w_up.clone(), src.w_down.clone()});
    dense.layers.push_back(std::move(copy));
  }
  return dense;
}

}  // namespace

TEST_CASE("forward produces [seq, vocab] logits on a tiny MoE config") {
  auto model = init_decoder<float>(tiny_config(), 2, 2, 1);
  for (std::size_t seq : {1, 3, 7}) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < seq; ++i) ids.push_back(static_cast<int>(i % 16));
    auto logits = forward(model, ids);
    CHECK(logits.shape() == std::vector<std::size_t>{seq, 16});
    for (float v : logits.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("MoE with one expert and m=1 equals the dense twin") {
  auto moe = init_decoder<float>(tiny_config(), 1, 1, 7);
  auto dense = dense_from_expert(moe, 0);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> ids;
    const std::size_t seq = 1 + rng.below(10);
    for (std::size_t i = 0; i < seq; ++i) ids.push_back(static_cast<int>(rng.below(16)));
    CHECK(max_abs_diff(forward(moe, ids), forward(dense, ids)) < 1e-5);
  }
}

TEST_CASE("duplicated experts with m=2 equal the single-expert model") {
  auto moe = init_decoder<float>(tiny_config(), 2, 2, 9);
  for (auto& layer : moe.layers) {
    layer.experts[1] = {layer.experts[0].w_gate.clone(), layer.experts[0].w_up.clone(),
                        layer.experts[0].w_down.clone()};
  }
  auto dense = dense_from_expert(moe, 0);
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> ids;
    const std::size_t seq = 1 + rng.below(10);
    for (std::size_t i = 0; i < seq; ++i) ids.push_back(static_cast<int>(rng.below(16)));
    CHECK(max_abs_diff(forward(moe, ids), forward(dense, ids)) < 1e-5);
  }
}

TEST_CASE("hidden_states layer 0 is exactly the embedding rows") {
  auto model = init_decoder<float>(tiny_config(), 2, 2, 5);
  std::vector<int> ids{3, 1, 4, 1, 5};
  auto h0 = hidden_states(model, ids, 0);
  const std::size_t hdim = model.config.hidden_dim;
  for (std::size_t p = 0; p < ids.size(); ++p) {
    for (std::size_t j = 0; j < hdim; ++j) {
      CHECK(h0.data()[p * hdim + j] ==
            model.embedding.data()[static_cast<std::size_t>(ids[p]) * hdim + j]);
    }
  }
}

TEST_CASE("hidden_states at n_layers is the pre-final-norm stream") {
  auto model = init_decoder<float>(tiny_config(), 2, 2, 6);
  std::vector<int> ids{2, 9, 7};
  auto stream = hidden_states(model, ids, model.config.n_layers);
  auto logits_direct = forward(model, ids);
  auto normed = rms_norm(stream, model.final_norm, static_cast<float>(model.config.norm_eps));
  auto logits_rebuilt = matmul(normed, model.lm_head);
  CHECK(max_abs_diff(logits_direct, logits_rebuilt) == 0.0);
}

TEST_CASE("hidden_states is deterministic and validates the layer index") {
  auto model = init_decoder<float>(tiny_config(), 2, 2, 8);
  std::vector<int> ids{1, 2, 3};
  auto a = hidden_states(model, ids, 1);
  auto b = hidden_states(model, ids, 1);
  CHECK(a.data() == b.data());
  CHECK_THROWS_AS(hidden_states(model, ids, model.config.n_layers + 1), ContractError);
}

TEST_CASE("causality: a changed future token never affects earlier logits") {
  for (int experts : {0, 2}) {
    auto model = init_decoder<float>(tiny_config(), experts, experts == 0 ? 0 : 2, 13);
    Rng rng(17);
    std::vector<int> ids;
    for (int i = 0; i < 8; ++i) ids.push_back(static_cast<int>(rng.below(16)));
    auto base = forward(model, ids);
    for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
      std::vector<int> perturbed = ids;
      perturbed[t + 1] = (perturbed[t + 1] + 1 + static_cast<int>(rng.below(15))) % 16;
      auto out = forward(model, perturbed);
      for (std::size_t p = 0; p <= t; ++p) {
        for (std::size_t v = 0; v < 16; ++v) {
          CHECK(out.data()[p * 16 + v] == base.data()[p * 16 + v]);
        }
      }
    }
  }
}

TEST_CASE("MoE forward consumes exactly seq*layers*m expert evaluations") {
  auto model = init_decoder<float>(tiny_config(), 3, 2, 19);
  std::vector<int> ids{1, 2, 3, 4, 5, 6, 7};
  RoutingStats stats;
  forward(model, ids, &stats);
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < model.config.n_layers; ++l) total += stats.layer_total(l);
  CHECK(total == ids.size() * model.config.n_layers * 2);
}

TEST_CASE("forward validates token ids and sequence length") {
  auto model = init_decoder<float>(tiny_config(), 0, 0, 23);
  CHECK_THROWS_AS(forward(model, {16}), ContractError);
  std::vector<int> too_long(model.config.max_seq_len + 1, 1);
  CHECK_THROWS_AS(forward(model, too_long), ContractError);
  CHECK_THROWS_AS(forward(model, {}), ContractError);
}

TEST_CASE("archive round trip preserves the model bit-exactly") {
  auto model = init_decoder<float>(tiny_config(), 2, 2, 29);
  TensorArchive archive = dump_decoder(model);
  auto rebuilt = build_decoder<float>(archive, model.config, 2, 2);
  std::vector<int> ids{1, 2, 3, 4};
  CHECK(forward(model, ids).data() == forward(rebuilt, ids).data());
}

TEST_CASE("build_decoder reports missing and misshapen tensors by name") {
  auto model = init_decoder<float>(tiny_config(), 0, 0, 31);
  TensorArchive archive = dump_decoder(model);
  TensorArchive missing = archive;
  missing.tensors().erase("layers.1.ffn.w_up.weight");
  try {
    build_decoder<float>(missing, model.config, 0, 0);
    FAIL("expected StructuralError");
  } catch (const StructuralError& e) {
    CHECK(std::string(e.what()).find("layers.1.ffn.w_up.weight") != std::string::npos);
  }

  TensorArchive bad = archive;
  RawTensor wrong = bad.at("final_norm.weight");
  wrong.dims = {4};
  wrong.bytes.resize(16);
  bad.tensors()["final_norm.weight"] = wrong;
  CHECK_THROWS_AS(build_decoder<float>(bad, model.config, 0, 0), StructuralError);
}
