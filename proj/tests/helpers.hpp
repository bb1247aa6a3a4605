// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <string>

#include "mofe/config.hpp"
#include "mofe/decoder.hpp"

namespace mofe::testing {

// vocab 16 / hidden 8 config for shape-level tests.
inline ModelConfig tiny_config() {
  return ModelConfig{.vocab_size = 16,
                     .hidden_dim = 8,
                     .n_layers = 2,
                     .n_heads = 2,
                     .n_kv_heads = 1,
                     .head_dim = 4,
                     .ffn_hidden_dim = 16,
                     .max_seq_len = 32,
                     .rope_theta = 10000.0,
                     .norm_eps = 1e-5,
                     .tie_lm_head = false};
}

// A slightly wider config for merge/eval tests (vocab fits byte prompts).
inline ModelConfig small_config() {
  return ModelConfig{.vocab_size = 32,
                     .hidden_dim = 16,
                     .n_layers = 2,
                     .n_heads = 2,
                     .n_kv_heads = 1,
                     .head_dim = 8,
                     .ffn_hidden_dim = 32,
                     .max_seq_len = 48,
                     .rope_theta = 10000.0,
                     .norm_eps = 1e-5,
                     .tie_lm_head = false};
}

// Scratch directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    path_ = (fs::temp_directory_path() / ("mofe_test_" + tag + "_" + std::to_string(counter()++))).string();
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string path_;
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return worst;
}

}  // namespace mofe::testing
