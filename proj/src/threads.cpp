// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#include "mofe/threads.hpp"

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace mofe {

std::size_t max_kernel_threads() {
  static const std::size_t cached = [] {
    if (const char* env = std::getenv("MOFE_THREADS")) {
      long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<std::size_t>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return static_cast<std::size_t>(hw == 0 ? 1 : hw);
  }();
  return cached;
}

void parallel_for(std::size_t n, std::size_t grain, const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  std::size_t threads = max_kernel_threads();
  if (threads <= 1 || n < 2 * grain) {
    body(0, n);
    return;
  }
  std::size_t chunks = std::min(threads, (n + grain - 1) / grain);
  std::size_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    std::size_t begin = c * per;
    std::size_t end = std::min(n, begin + per);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mofe
