// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "gks/tensor.hpp"

namespace gks {

// First/second moment estimates for one list of parameter tensors, in the
// order they are first presented. Shapes are locked on first use.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<Tensor> m, v;
};

// One bias-corrected moment update over a parameter list. `params` and
// `grads` run in parallel; shapes must match the state (which is created on
// first call).
void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, double lr,
               AdamState& state);

// Plain gradient descent: p -= lr * g.
void sgd_step(const std::vector<Tensor*>& params,
              const std::vector<const Tensor*>& grads, double lr);

}  // namespace gks
