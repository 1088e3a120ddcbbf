// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/optim.hpp"

#include <cmath>
#include <string>

#include "gks/error.hpp"

namespace gks {

namespace {

void check_pairs(const std::vector<Tensor*>& params,
                 const std::vector<const Tensor*>& grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer got " + std::to_string(params.size()) +
                     " params but " + std::to_string(grads.size()) +
                     " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i])) {
      throw ShapeError("optimizer: param " + std::to_string(i) + " has shape " +
                       shape_string(params[i]->shape()) +
                       " but its gradient has shape " +
                       shape_string(grads[i]->shape()));
    }
  }
}

}  // namespace

void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, double lr,
               AdamState& state) {
  if (!(lr > 0.0)) throw ConfigError("adam_step: lr must be positive");
  check_pairs(params, grads);
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros_like(*p));
      state.v.push_back(Tensor::zeros_like(*p));
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: state tracks " +
                     std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, double(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, double(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (!p.same_shape(m)) {
      throw ShapeError("adam_step: param " + std::to_string(i) +
                       " changed shape since the state was created");
    }
    for (std::size_t k = 0; k < p.numel(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

void sgd_step(const std::vector<Tensor*>& params,
              const std::vector<const Tensor*>& grads, double lr) {
  if (!(lr > 0.0)) throw ConfigError("sgd_step: lr must be positive");
  check_pairs(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    for (std::size_t k = 0; k < p.numel(); ++k) p[k] -= lr * g[k];
  }
}

}  // namespace gks
