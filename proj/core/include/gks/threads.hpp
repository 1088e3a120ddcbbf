// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace gks {

// Worker cap for independent experiment cells: the GKS_THREADS environment
// variable when set (minimum 1), otherwise the hardware concurrency.
std::size_t thread_cap();

// Runs fn(0..jobs-1), fanning out to min(jobs, thread_cap()) workers. Each
// job must be self-contained; exceptions are collected and the first one
// rethrown after all workers finish.
void parallel_cells(std::size_t jobs,
                    const std::function<void(std::size_t)>& fn);

}  // namespace gks
