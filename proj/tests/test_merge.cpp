// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "mofe/merge.hpp"
#include "mofe/model_io.hpp"

using namespace mofe;
using mofe::testing::max_abs_diff;
using mofe::testing::small_config;
using mofe::testing::TempDir;

namespace {

std::string write_dense(const TempDir& dir, const std::string& name, std::uint64_t seed,
                        const ModelConfig& cfg) {
  auto model = init_decoder<float>(cfg, 0, 0, seed);
  ModelMeta meta = make_meta(model);
  const std::string path = dir.file(name);
  save_model(model, meta, path);
  return path;
}

std::vector<char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

MergeSpec two_expert_spec(const std::string& base, const std::string& ea, const std::string& eb,
                          GateMode mode = GateMode::zero) {
  MergeSpec spec;
  spec.base_path = base;
  spec.experts.push_back({"a", ea, {{1, 2, 3}}, {}});
  spec.experts.push_back({"b", eb, {{4, 5, 6}}, {}});
  spec.m = 2;
  spec.gate_mode = mode;
  spec.seed = 7;
  return spec;
}

}  // namespace

TEST_CASE("single-expert merge forwards identically to the assembled dense model") {
  TempDir dir("merge_n1");
  const ModelConfig cfg = small_config();
  const std::string base_path = write_dense(dir, "base.mofe", 1, cfg);
  const std::string expert_path = write_dense(dir, "expert.mofe", 2, cfg);

  MergeSpec spec;
  spec.base_path = base_path;
  spec.experts.push_back({"only", expert_path, {{1, 2}}, {}});
  spec.m = 1;
  spec.gate_mode = GateMode::random;
  MergeOutput out = merge_models(spec);
  const std::string merged_path = dir.file("merged.mofe");
  save_archive(out.archive, merged_path);
  save_meta(out.meta, merged_path);

  auto moe = load_model<float>(merged_path);

  // Expected dense twin: base trunk, expert FFN.
  auto expected = load_model<float>(base_path);
  auto expert = load_model<float>(expert_path);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) expected.layers[l].experts[0] = expert.layers[l].experts[0];

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> ids;
    const std::size_t seq = 1 + rng.below(8);
    for (std::size_t i = 0; i < seq; ++i) ids.push_back(static_cast<int>(rng.below(cfg.vocab_size)));
    CHECK(max_abs_diff(forward(moe, ids), forward(expected, ids)) < 1e-5);
  }
}

TEST_CASE("every non-router tensor is copied verbatim with recorded provenance") {
  TempDir dir("merge_verbatim");
  const ModelConfig cfg = small_config();
  const std::string base_path = write_dense(dir, "base.mofe", 11, cfg);
  const std::string ea_path = write_dense(dir, "ea.mofe", 12, cfg);
  const std::string eb_path = write_dense(dir, "eb.mofe", 13, cfg);

  MergeOutput out = merge_models(two_expert_spec(base_path, ea_path, eb_path));
  TensorArchive base = load_archive(base_path);
  TensorArchive ea = load_archive(ea_path);
  TensorArchive eb = load_archive(eb_path);

  std::size_t provenance_entries = 0;
  for (const auto& [name, tensor] : out.archive.tensors()) {
    REQUIRE(out.report.at("provenance").contains(name));
    ++provenance_entries;
    if (name.find("router") != std::string::npos) continue;
    auto e = expert_index_of(name);
    if (!e) {
      CHECK(tensor.bytes == base.at(name).bytes);
    } else {
      const std::string tag = ".experts." + std::to_string(*e) + ".";
      const auto pos = name.find(tag);
      const std::string dense_name = name.substr(0, pos) + ".ffn." + name.substr(pos + tag.size());
      CHECK(tensor.bytes == (*e == 0 ? ea : eb).at(dense_name).bytes);
    }
  }
  CHECK(provenance_entries == out.report.at("provenance").size());
  CHECK(out.meta.freeze == manifest_mofe());
  CHECK(out.meta.n_experts == 2);
  CHECK(out.meta.top_m == 2);
  CHECK_FALSE(out.meta.provenance_hash.empty());
}

TEST_CASE("merging is deterministic") {
  TempDir dir("merge_det");
  const ModelConfig cfg = small_config();
  const std::string base_path = write_dense(dir, "base.mofe", 21, cfg);
  const std::string ea_path = write_dense(dir, "ea.mofe", 22, cfg);
  const std::string eb_path = write_dense(dir, "eb.mofe", 23, cfg);
  MergeSpec spec = two_expert_spec(base_path, ea_path, eb_path, GateMode::random);
  MergeOutput first = merge_models(spec);
  MergeOutput second = merge_models(spec);
  save_archive(first.archive, dir.file("m1.mofe"));
  save_archive(second.archive, dir.file("m2.mofe"));
  CHECK(read_file(dir.file("m1.mofe")) == read_file(dir.file("m2.mofe")));
}

TEST_CASE("same expert in every slot makes forward independent of gate mode") {
  TempDir dir("merge_gatemode");
  const ModelConfig cfg = small_config();
  const std::string base_path = write_dense(dir, "base.mofe", 31, cfg);
  const std::string expert_path = write_dense(dir, "e.mofe", 32, cfg);

  std::vector<Tensor<float>> outputs;
  std::vector<int> ids{1, 9, 17, 25, 3};
  for (GateMode mode : {GateMode::hidden, GateMode::random, GateMode::zero}) {
    MergeSpec spec = two_expert_spec(base_path, expert_path, expert_path, mode);
    MergeOutput out = merge_models(spec);
    const std::string path = dir.file("m_" + gate_mode_name(mode) + ".mofe");
    save_archive(out.archive, path);
    save_meta(out.meta, path);
    auto model = load_model<float>(path);
    outputs.push_back(forward(model, ids));
  }
  CHECK(max_abs_diff(outputs[0], outputs[1]) < 1e-5);
  CHECK(max_abs_diff(outputs[1], outputs[2]) < 1e-5);
}

TEST_CASE("hidden gate init: identical positive and negative sets give the zero row") {
  const ModelConfig cfg = small_config();
  auto base = init_decoder<float>(cfg, 0, 0, 41);
  std::vector<std::vector<int>> prompts{{1, 2, 3}, {4, 5}};
  auto row = init_gate_hidden(base, prompts, prompts, 1, false);
  for (float v : row.data()) CHECK(v == doctest::Approx(0.0));
  // L2-normalizing a zero row keeps it zero.
  auto normalized = init_gate_hidden(base, prompts, prompts, 1, true);
  for (float v : normalized.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("hidden gate init at layer 0 of a one-token prompt is the normalized embedding row") {
  const ModelConfig cfg = small_config();
  auto base = init_decoder<float>(cfg, 0, 0, 43);
  const int token = 7;
  auto row = init_gate_hidden(base, {{token}}, {}, 0, true);
  std::vector<float> expected(cfg.hidden_dim);
  double norm = 0.0;
  for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
    expected[j] = base.embedding.data()[static_cast<std::size_t>(token) * cfg.hidden_dim + j];
    norm += static_cast<double>(expected[j]) * expected[j];
  }
  norm = std::sqrt(norm);
  for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
    CHECK(row.data()[j] == doctest::Approx(expected[j] / norm).epsilon(1e-5));
  }
}

TEST_CASE("separated prompt clusters route to the matching expert") {
  // Orthogonal embedding clusters: tokens 1..4 live on axis 0, tokens
  // 20..23 on axis 1. Gate rows initialized from layer-0 states must then
  // rank the matching expert first.
  const ModelConfig cfg = small_config();
  auto base = init_decoder<float>(cfg, 0, 0, 47);
  auto& emb = base.embedding.mutable_data();
  std::fill(emb.begin(), emb.end(), 0.0f);
  for (int t = 1; t <= 4; ++t) emb[static_cast<std::size_t>(t) * cfg.hidden_dim + 0] = 1.0f;
  for (int t = 20; t <= 23; ++t) emb[static_cast<std::size_t>(t) * cfg.hidden_dim + 1] = 1.0f;

  std::vector<std::vector<int>> cluster_a{{1, 2}, {3, 4}};
  std::vector<std::vector<int>> cluster_b{{20, 21}, {22, 23}};
  RouterGateT<float> gate{Tensor<float>::zeros({2, cfg.hidden_dim})};
  auto row_a = init_gate_hidden(base, cluster_a, cluster_b, 0, true);
  auto row_b = init_gate_hidden(base, cluster_b, cluster_a, 0, true);
  std::copy(row_a.data().begin(), row_a.data().end(), gate.weight.mutable_data().begin());
  std::copy(row_b.data().begin(), row_b.data().end(),
            gate.weight.mutable_data().begin() + cfg.hidden_dim);

  auto h_a = hidden_states(base, {2, 3}, 0);
  std::vector<float> pooled(cfg.hidden_dim, 0.0f);
  for (std::size_t p = 0; p < 2; ++p) {
    for (std::size_t j = 0; j < cfg.hidden_dim; ++j) pooled[j] += h_a.data()[p * cfg.hidden_dim + j] / 2.0f;
  }
  auto decision = route(gate, Tensor<float>::from_data({cfg.hidden_dim}, pooled), 1);
  CHECK(decision.indices[0] == 0);
}

TEST_CASE("random gates are seed-deterministic, zero gates fall back to tie order") {
  Rng rng_a(9), rng_b(9), rng_c(10);
  auto a = init_gate_random<float>(rng_a, 16);
  auto b = init_gate_random<float>(rng_b, 16);
  auto c = init_gate_random<float>(rng_c, 16);
  CHECK(a.data() == b.data());
  CHECK(a.data() != c.data());

  auto zero = init_gate_zero<float>(16);
  RouterGateT<float> gate{Tensor<float>::zeros({3, 16})};
  auto d = route(gate, zero, 2);
  CHECK(d.indices == std::vector<int>{0, 1});
  CHECK(d.weights[0] == doctest::Approx(0.5));
  CHECK(d.weights[1] == doctest::Approx(0.5));
}

TEST_CASE("hidden mode requires positive prompts") {
  TempDir dir("merge_noprompts");
  const ModelConfig cfg = small_config();
  const std::string base_path = write_dense(dir, "base.mofe", 51, cfg);
  const std::string expert_path = write_dense(dir, "e.mofe", 52, cfg);
  MergeSpec spec;
  spec.base_path = base_path;
  spec.experts.push_back({"a", expert_path, {}, {}});
  spec.m = 1;
  spec.gate_mode = GateMode::hidden;
  CHECK_THROWS_AS(merge_models(spec), ConfigError);
}

TEST_CASE("config mismatch and missing tensors are reported by name") {
  TempDir dir("merge_mismatch");
  const ModelConfig cfg = small_config();
  ModelConfig other = cfg;
  other.ffn_hidden_dim = 24;
  const std::string base_path = write_dense(dir, "base.mofe", 61, cfg);
  const std::string bad_path = write_dense(dir, "bad.mofe", 62, other);
  MergeSpec spec;
  spec.base_path = base_path;
  spec.experts.push_back({"bad", bad_path, {{1}}, {}});
  spec.m = 1;
  spec.gate_mode = GateMode::zero;
  try {
    merge_models(spec);
    FAIL("expected MergeError");
  } catch (const MergeError& e) {
    CHECK(std::string(e.what()).find("ffn") != std::string::npos);
  }

  // Remove one FFN tensor from an otherwise compatible expert.
  const std::string gap_path = write_dense(dir, "gap.mofe", 63, cfg);
  TensorArchive gap = load_archive(gap_path);
  gap.tensors().erase("layers.1.ffn.w_down.weight");
  save_archive(gap, gap_path);
  MergeSpec spec2;
  spec2.base_path = base_path;
  spec2.experts.push_back({"gap", gap_path, {{1}}, {}});
  spec2.m = 1;
  spec2.gate_mode = GateMode::zero;
  try {
    merge_models(spec2);
    FAIL("expected StructuralError");
  } catch (const StructuralError& e) {
    CHECK(std::string(e.what()).find("layers.1.ffn.w_down.weight") != std::string::npos);
  }
}

TEST_CASE("merge spec JSON parsing validates m and prompt shapes") {
  nlohmann::json j{{"base", "b.mofe"},
                   {"experts", nlohmann::json::array({{{"name", "a"}, {"archive", "a.mofe"}}})},
                   {"m", 2}};
  CHECK_THROWS_AS(merge_spec_from_json(j), ConfigError);
  j["m"] = 1;
  MergeSpec spec = merge_spec_from_json(j);
  CHECK(spec.m == 1);
  CHECK(spec.experts.size() == 1);
  // String prompts byte-tokenize.
  j["experts"][0]["positive_prompts"] = nlohmann::json::array({"hi"});
  spec = merge_spec_from_json(j);
  CHECK(spec.experts[0].positive_prompts[0] == std::vector<int>{'h', 'i'});
}

TEST_CASE("merged archive round-trips bit-exactly") {
  TempDir dir("merge_roundtrip");
  const ModelConfig cfg = small_config();
  const std::string base_path = write_dense(dir, "base.mofe", 71, cfg);
  const std::string ea_path = write_dense(dir, "ea.mofe", 72, cfg);
  const std::string eb_path = write_dense(dir, "eb.mofe", 73, cfg);
  MergeOutput out = merge_models(two_expert_spec(base_path, ea_path, eb_path, GateMode::random));
  const std::string path = dir.file("merged.mofe");
  save_archive(out.archive, path);
  TensorArchive loaded = load_archive(path);
  for (const auto& [name, t] : out.archive.tensors()) CHECK(loaded.at(name).bytes == t.bytes);
}
