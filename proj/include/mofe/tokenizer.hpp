// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace mofe {

// Byte-level fallback tokenizer: ids 0..255 are raw bytes, then BOS/EOS/PAD.
// Vocabulary size is 259; model configs used with text input must be at
// least that large.
class ByteTokenizer {
 public:
  static constexpr int kBos = 256;
  static constexpr int kEos = 257;
  static constexpr int kPad = 258;
  static constexpr std::size_t kVocabSize = 259;

  static std::vector<int> encode(const std::string& text);
  static std::string decode(const std::vector<int>& ids);
};

}  // namespace mofe
