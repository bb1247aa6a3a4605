// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace mofe {

// Kernel parallelism cap. Reads MOFE_THREADS once; values < 1 fall back
// to the hardware concurrency.
std::size_t max_kernel_threads();

// Static row partition over [0, n). Each index is processed by exactly one
// worker, so results are bit-deterministic regardless of the thread count.
// Small ranges run inline.
void parallel_for(std::size_t n, std::size_t grain, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace mofe
