// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef GKS_PROFILE_BACKWARD
#include <chrono>
#include <map>
#endif

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gks/error.hpp"

namespace gks {

#ifdef GKS_PROFILE_BACKWARD
std::map<std::string, double>& profile_backward_seconds();
#endif

namespace {

// Every training step records a tape whose intermediate tensors have the same
// shapes as the step before, then frees them all. With glibc defaults those
// multi-megabyte blocks are either served by mmap (and unmapped on free) or
// coalesce into a top chunk large enough to get trimmed back to the kernel,
// so the steady state is a page-fault storm. Raising both thresholds keeps
// the blocks on the malloc free lists; the cost is that the process holds on
// to one tape's peak working set, which is what the next step needs anyway.
void tune_allocator_once() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 0x7fffffff);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

// ---- BatchNormState --------------------------------------------------------

BatchNormState BatchNormState::init(std::size_t channels, double epsilon,
                                    double momentum) {
  if (channels == 0) throw ConfigError("batch norm needs at least 1 channel");
  if (!(epsilon > 0.0)) throw ConfigError("batch norm epsilon must be > 0");
  if (!(momentum > 0.0 && momentum < 1.0))
    throw ConfigError("batch norm momentum must lie in (0, 1)");
  BatchNormState s;
  s.gamma = Tensor::full({channels}, 1.0);
  s.beta = Tensor({channels});
  s.running_mean = Tensor({channels});
  s.running_var = Tensor::full({channels}, 1.0);
  s.epsilon = epsilon;
  s.momentum = momentum;
  return s;
}

// ---- Tape ------------------------------------------------------------------

void Tape::check(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw Error("variable is not recorded on this tape");
  }
}

Var Tape::leaf(Tensor value, std::string name) {
  return push(std::move(name), {}, std::move(value), nullptr);
}

Var Tape::push(std::string op, std::vector<Var> inputs, Tensor value,
               BackwardFn backward) {
  if (nodes_.empty()) tune_allocator_once();
  for (Var in : inputs) check(in);
  Node n;
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

const std::string& Tape::op_name(Var v) const {
  check(v);
  return nodes_[v.id].op;
}

Tensor& Tape::grad_slot(Var v) {
  check(v);
  if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
  Tensor& g = grads_[v.id];
  if (g.empty() && nodes_[v.id].value.numel() > 0) {
    g = Tensor::zeros_like(nodes_[v.id].value);
  }
  return g;
}

bool Tape::grad_live(Var v) const {
  return v.valid() && v.id < grads_.size() && !grads_[v.id].empty();
}

const Tensor& Tape::grad(Var v) {
  check(v);
  if (!ran_backward_) throw Error("grad() called before backward()");
  return grad_slot(v);
}

void Tape::backward(Var loss) {
  check(loss);
  if (ran_backward_) throw Error("backward() already ran on this tape");
  if (nodes_[loss.id].value.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     shape_string(nodes_[loss.id].value.shape()));
  }
  grads_.assign(nodes_.size(), Tensor{});
  ran_backward_ = true;
  grad_slot(loss)[0] = 1.0;
  // Nodes are recorded in topological order, so a reverse index sweep visits
  // every consumer before its producers. Nodes whose grad slot was never
  // touched do not influence the loss and are skipped.
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || grads_[i].empty()) continue;
#ifdef GKS_PROFILE_BACKWARD
    const auto t0 = std::chrono::steady_clock::now();
    n.backward(*this, grads_[i]);
    profile_backward_seconds()[n.op] +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
#else
    n.backward(*this, grads_[i]);
#endif
  }
}

#ifdef GKS_PROFILE_BACKWARD
std::map<std::string, double>& profile_backward_seconds() {
  static std::map<std::string, double> m;
  return m;
}
#endif

std::size_t Tape::first_non_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].value.all_finite()) return i;
  }
  return nodes_.size();
}

std::string Tape::describe(std::size_t node_index) const {
  if (node_index >= nodes_.size()) return "node <none>";
  return "node " + std::to_string(node_index) + " (" + nodes_[node_index].op +
         ")";
}

void Tape::fold_branch(std::uint64_t word) {
  // FNV-1a over the 8 bytes of the word.
  for (int i = 0; i < 8; ++i) {
    fingerprint_ ^= (word >> (8 * i)) & 0xffu;
    fingerprint_ *= 1099511628211ull;
  }
}

// ---- shape helpers ---------------------------------------------------------

namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) shape_fail(op, detail);
}

}  // namespace

// ---- dense inner loops -----------------------------------------------------
//
// The restrict qualifiers matter: without them the compiler must assume the
// output row may alias the inputs and keeps these loops scalar. With them the
// accumulation loops vectorize. dot4 breaks the reduction dependency chain
// with four accumulators combined in a fixed order, so results stay
// deterministic run to run.

namespace {

inline void axpy(std::size_t n, double a, const double* __restrict__ x,
                 double* __restrict__ y) {
  for (std::size_t j = 0; j < n; ++j) y[j] += a * x[j];
}

inline double dot4(std::size_t n, const double* __restrict__ x,
                   const double* __restrict__ y) {
  double s = 0.0;
  // The pragma permits reassociating this one reduction so it can run in
  // SIMD lanes (no effect unless compiled with -fopenmp-simd). The lane
  // order is fixed at compile time, so results stay deterministic.
#pragma omp simd reduction(+ : s)
  for (std::size_t j = 0; j < n; ++j) s += x[j] * y[j];
  return s;
}

}  // namespace

// ---- conv2d ----------------------------------------------------------------

namespace {

// Loop structure: the (dy,dx) window offsets are the outermost loops, so the
// kernel slice for one offset (Ci*Co doubles) stays cache-resident across the
// whole batch instead of being re-streamed for every output pixel. For any
// single output element the contributions still arrive in (dy, dx, ci) order,
// identical to a naive per-pixel loop nest.
void conv2d_forward_kernel(const double* __restrict__ in,
                           const double* __restrict__ ker,
                           const double* __restrict__ bias,
                           double* __restrict__ out, std::size_t B,
                           std::size_t H, std::size_t W, std::size_t Ci,
                           std::size_t Co, std::size_t K) {
  const std::size_t pad = (K - 1) / 2;
  for (std::size_t r = 0; r < B * H * W; ++r) {
    double* op = out + r * Co;
    for (std::size_t co = 0; co < Co; ++co) op[co] = bias[co];
  }
  for (std::size_t dy = 0; dy < K; ++dy) {
    for (std::size_t dx = 0; dx < K; ++dx) {
      const double* kbase = ker + (dy * K + dx) * Ci * Co;
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t y = 0; y < H; ++y) {
          const std::size_t iy = y + dy - pad;  // wraps below 0; single check
          if (iy >= H) continue;
          for (std::size_t x = 0; x < W; ++x) {
            const std::size_t ix = x + dx - pad;
            if (ix >= W) continue;
            double* orow = out + ((b * H + y) * W + x) * Co;
            const double* irow = in + ((b * H + iy) * W + ix) * Ci;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              axpy(Co, irow[ci], kbase + ci * Co, orow);
            }
          }
        }
      }
    }
  }
}

// Same (dy,dx)-outer structure as the forward pass, so the kernel slice and
// its gradient slice for one offset stay cache-resident across the batch.
void conv2d_backward_kernel(const double* __restrict__ in,
                            const double* __restrict__ ker,
                            const double* __restrict__ gp,
                            double* __restrict__ gin,
                            double* __restrict__ gker,
                            double* __restrict__ gbias, std::size_t B,
                            std::size_t H, std::size_t W, std::size_t Ci,
                            std::size_t Co, std::size_t K) {
  const std::size_t pad = (K - 1) / 2;
  for (std::size_t r = 0; r < B * H * W; ++r) {
    const double* grow = gp + r * Co;
    for (std::size_t co = 0; co < Co; ++co) gbias[co] += grow[co];
  }
  for (std::size_t dy = 0; dy < K; ++dy) {
    for (std::size_t dx = 0; dx < K; ++dx) {
      const double* kbase = ker + (dy * K + dx) * Ci * Co;
      double* gkbase = gker + (dy * K + dx) * Ci * Co;
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t y = 0; y < H; ++y) {
          const std::size_t iy = y + dy - pad;
          if (iy >= H) continue;
          for (std::size_t x = 0; x < W; ++x) {
            const std::size_t ix = x + dx - pad;
            if (ix >= W) continue;
            const double* grow = gp + ((b * H + y) * W + x) * Co;
            const double* irow = in + ((b * H + iy) * W + ix) * Ci;
            double* girow = gin + ((b * H + iy) * W + ix) * Ci;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              girow[ci] += dot4(Co, kbase + ci * Co, grow);
              axpy(Co, irow[ci], grow, gkbase + ci * Co);
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Tape& t, Var input, Var kernel, Var bias) {
  const Tensor& in = t.value(input);
  const Tensor& ker = t.value(kernel);
  const Tensor& bi = t.value(bias);
  require(in.rank() == 4, "conv2d", "input must be [B,H,W,Cin], got " +
                                        shape_string(in.shape()));
  require(ker.rank() == 4, "conv2d", "kernel must be [k,k,Cin,Cout], got " +
                                         shape_string(ker.shape()));
  const std::size_t B = in.dim(0), H = in.dim(1), W = in.dim(2),
                    Ci = in.dim(3);
  const std::size_t K = ker.dim(0), Co = ker.dim(3);
  require(ker.dim(1) == K, "conv2d", "kernel window must be square, got " +
                                         shape_string(ker.shape()));
  require(K % 2 == 1, "conv2d", "kernel size must be odd for same padding");
  require(ker.dim(2) == Ci, "conv2d",
          "kernel input channels " + std::to_string(ker.dim(2)) +
              " != input channels " + std::to_string(Ci));
  require(bi.rank() == 1 && bi.dim(0) == Co, "conv2d",
          "bias must be [Cout] = [" + std::to_string(Co) + "], got " +
              shape_string(bi.shape()));

  Tensor out({B, H, W, Co});
  conv2d_forward_kernel(in.data(), ker.data(), bi.data(), out.data(), B, H, W,
                        Ci, Co, K);

  auto backward = [input, kernel, bias, B, H, W, Ci, Co,
                   K](Tape& tp, const Tensor& g) {
    const double* in = tp.value(input).data();
    const double* ker = tp.value(kernel).data();
    Tensor& gin = tp.grad_slot(input);
    Tensor& gker = tp.grad_slot(kernel);
    Tensor& gbias = tp.grad_slot(bias);
    conv2d_backward_kernel(in, ker, g.data(), gin.data(), gker.data(),
                           gbias.data(), B, H, W, Ci, Co, K);
  };
  return t.push("conv2d", {input, kernel, bias}, std::move(out),
                std::move(backward));
}

// ---- batch_norm ------------------------------------------------------------

Var batch_norm(Tape& t, Var input, Var gamma, Var beta, BatchNormState* state,
               Mode mode) {
  if (state == nullptr) throw ConfigError("batch_norm: state is required");
  const Tensor& x = t.value(input);
  const Tensor& ga = t.value(gamma);
  const Tensor& be = t.value(beta);
  require(x.rank() >= 2, "batch_norm",
          "input must have a channel axis, got " + shape_string(x.shape()));
  const std::size_t C = x.shape().back();
  const std::size_t rows = x.numel() / C;
  require(ga.rank() == 1 && ga.dim(0) == C, "batch_norm",
          "gamma must be [" + std::to_string(C) + "], got " +
              shape_string(ga.shape()));
  require(be.rank() == 1 && be.dim(0) == C, "batch_norm",
          "beta must be [" + std::to_string(C) + "], got " +
              shape_string(be.shape()));
  require(state->channels() == C, "batch_norm",
          "state holds " + std::to_string(state->channels()) +
              " channels, input has " + std::to_string(C));
  if (mode == Mode::kTrain && rows < 2) {
    throw ShapeError(
        "batch_norm: training mode needs at least 2 rows per channel");
  }

  std::vector<double> mean(C, 0.0), var(C, 0.0), inv(C);
  const double* xp = x.data();
  if (mode == Mode::kTrain) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = xp + r * C;
      for (std::size_t c = 0; c < C; ++c) mean[c] += row[c];
    }
    const double im = 1.0 / static_cast<double>(rows);
    for (std::size_t c = 0; c < C; ++c) mean[c] *= im;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = xp + r * C;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = row[c] - mean[c];
        var[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < C; ++c) var[c] *= im;
    // Running statistics: biased variance normalizes the batch, the unbiased
    // estimate feeds the running average.
    const double mom = state->momentum;
    const double unbias =
        static_cast<double>(rows) / static_cast<double>(rows - 1);
    for (std::size_t c = 0; c < C; ++c) {
      state->running_mean[c] =
          (1.0 - mom) * state->running_mean[c] + mom * mean[c];
      state->running_var[c] =
          (1.0 - mom) * state->running_var[c] + mom * var[c] * unbias;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state->running_mean[c];
      var[c] = state->running_var[c];
    }
  }
  const double eps = state->epsilon;
  for (std::size_t c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(var[c] + eps);

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xp + r * C;
    double* hrow = xhat.data() + r * C;
    double* orow = out.data() + r * C;
    for (std::size_t c = 0; c < C; ++c) {
      hrow[c] = (row[c] - mean[c]) * inv[c];
      orow[c] = ga[c] * hrow[c] + be[c];
    }
  }

  auto backward = [input, gamma, beta, xhat = std::move(xhat),
                   inv = std::move(inv), rows, C,
                   mode](Tape& tp, const Tensor& g) {
    const Tensor& ga = tp.value(gamma);
    Tensor& gin = tp.grad_slot(input);
    Tensor& gga = tp.grad_slot(gamma);
    Tensor& gbe = tp.grad_slot(beta);
    const double* gp = g.data();
    std::vector<double> sg(C, 0.0), sgx(C, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* grow = gp + r * C;
      const double* hrow = xhat.data() + r * C;
      for (std::size_t c = 0; c < C; ++c) {
        sg[c] += grow[c];
        sgx[c] += grow[c] * hrow[c];
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      gga[c] += sgx[c];
      gbe[c] += sg[c];
    }
    if (mode == Mode::kTrain) {
      const double im = 1.0 / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = gp + r * C;
        const double* hrow = xhat.data() + r * C;
        double* girow = gin.data() + r * C;
        for (std::size_t c = 0; c < C; ++c) {
          girow[c] += ga[c] * inv[c] *
                      (grow[c] - sg[c] * im - hrow[c] * sgx[c] * im);
        }
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = gp + r * C;
        double* girow = gin.data() + r * C;
        for (std::size_t c = 0; c < C; ++c) {
          girow[c] += ga[c] * inv[c] * grow[c];
        }
      }
    }
  };
  return t.push("batch_norm", {input, gamma, beta}, std::move(out),
                std::move(backward));
}

// ---- relu ------------------------------------------------------------------

Var relu(Tape& t, Var input) {
  const Tensor& x = t.value(input);
  Tensor out(x.shape());
  {
    BranchRecorder rec(t);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const bool on = x[i] > 0.0;
      out[i] = on ? x[i] : 0.0;
      rec.bit(on);
    }
  }
  auto backward = [input](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(input);
    Tensor& gin = tp.grad_slot(input);
    // Branchless form so the loop vectorizes as a masked blend.
    for (std::size_t i = 0; i < x.numel(); ++i) {
      gin[i] += x[i] > 0.0 ? g[i] : 0.0;
    }
  };
  return t.push("relu", {input}, std::move(out), std::move(backward));
}

// ---- matmul / linear -------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rank() == 2 && B.rank() == 2, "matmul",
          "operands must be rank-2, got " + shape_string(A.shape()) + " x " +
              shape_string(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  require(B.dim(0) == k, "matmul",
          "inner dimensions differ: " + shape_string(A.shape()) + " x " +
              shape_string(B.shape()));
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = A.data() + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      axpy(n, arow[kk], B.data() + kk * n, orow);
    }
  }
  auto backward = [a, b, m, k, n](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    Tensor& ga = tp.grad_slot(a);
    Tensor& gb = tp.grad_slot(b);
    for (std::size_t i = 0; i < m; ++i) {
      const double* grow = g.data() + i * n;
      const double* arow = A.data() + i * k;
      double* garow = ga.data() + i * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        garow[kk] += dot4(n, grow, B.data() + kk * n);
        axpy(n, arow[kk], grow, gb.data() + kk * n);
      }
    }
  };
  return t.push("matmul", {a, b}, std::move(out), std::move(backward));
}

Var linear(Tape& t, Var x, Var weight, Var bias) {
  const Tensor& X = t.value(x);
  const Tensor& W = t.value(weight);
  require(X.rank() == 2 || X.rank() == 3, "linear",
          "input must be rank 2 or 3, got " + shape_string(X.shape()));
  require(W.rank() == 2, "linear",
          "weight must be rank-2, got " + shape_string(W.shape()));
  const std::size_t p = W.dim(0), q = W.dim(1);
  require(X.shape().back() == p, "linear",
          "input feature width " + std::to_string(X.shape().back()) +
              " != weight rows " + std::to_string(p));
  const bool has_bias = bias.valid();
  if (has_bias) {
    const Tensor& bb = t.value(bias);
    require(bb.rank() == 1 && bb.dim(0) == q, "linear",
            "bias must be [" + std::to_string(q) + "], got " +
                shape_string(bb.shape()));
  }
  const std::size_t rows = X.numel() / p;
  std::vector<std::size_t> out_shape = X.shape();
  out_shape.back() = q;
  Tensor out(out_shape);
  const double* bp = has_bias ? t.value(bias).data() : nullptr;
  if (bp) {
    for (std::size_t r = 0; r < rows; ++r) {
      double* orow = out.data() + r * q;
      for (std::size_t j = 0; j < q; ++j) orow[j] = bp[j];
    }
  }
  // Each output element accumulates its kk terms in ascending order under
  // either loop nesting, so both orders give bit-identical results; pick the
  // one that keeps the smaller operand cache-resident. A tall weight (for
  // example a wide flattened feature into a small hidden layer) is streamed
  // once with kk outermost; otherwise iterate rows outermost.
  if (p > rows) {
    for (std::size_t kk = 0; kk < p; ++kk) {
      const double* wrow = W.data() + kk * q;
      for (std::size_t r = 0; r < rows; ++r) {
        axpy(q, X.data()[r * p + kk], wrow, out.data() + r * q);
      }
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      double* orow = out.data() + r * q;
      const double* xrow = X.data() + r * p;
      for (std::size_t kk = 0; kk < p; ++kk) {
        axpy(q, xrow[kk], W.data() + kk * q, orow);
      }
    }
  }
  std::vector<Var> inputs = {x, weight};
  if (has_bias) inputs.push_back(bias);
  auto backward = [x, weight, bias, has_bias, rows, p,
                   q](Tape& tp, const Tensor& g) {
    const Tensor& X = tp.value(x);
    const Tensor& W = tp.value(weight);
    Tensor& gx = tp.grad_slot(x);
    Tensor& gw = tp.grad_slot(weight);
    double* gbp = has_bias ? tp.grad_slot(bias).data() : nullptr;
    if (gbp) {
      for (std::size_t r = 0; r < rows; ++r) axpy(q, 1.0, g.data() + r * q, gbp);
    }
    // Same cache-driven loop-order choice as the forward pass; per-element
    // accumulation order (ascending r for gw, ascending kk dot for gx) is
    // unchanged by the nesting, so both orders are bit-identical.
    if (p > rows) {
      for (std::size_t kk = 0; kk < p; ++kk) {
        const double* wrow = W.data() + kk * q;
        double* gwrow = gw.data() + kk * q;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* grow = g.data() + r * q;
          gx.data()[r * p + kk] += dot4(q, grow, wrow);
          axpy(q, X.data()[r * p + kk], grow, gwrow);
        }
      }
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = g.data() + r * q;
        const double* xrow = X.data() + r * p;
        double* gxrow = gx.data() + r * p;
        for (std::size_t kk = 0; kk < p; ++kk) {
          gxrow[kk] += dot4(q, grow, W.data() + kk * q);
          axpy(q, xrow[kk], grow, gw.data() + kk * q);
        }
      }
    }
  };
  return t.push("linear", std::move(inputs), std::move(out),
                std::move(backward));
}

// ---- graph products --------------------------------------------------------

Var adj_matmul(Tape& t, Var adjacency, Var nodes) {
  const Tensor& A = t.value(adjacency);
  const Tensor& Y = t.value(nodes);
  require(A.rank() == 2 && A.dim(0) == A.dim(1), "adj_matmul",
          "adjacency must be square, got " + shape_string(A.shape()));
  require(Y.rank() == 3, "adj_matmul",
          "nodes must be [B,N,d], got " + shape_string(Y.shape()));
  const std::size_t N = A.dim(0);
  require(Y.dim(1) == N, "adj_matmul",
          "adjacency is " + std::to_string(N) + "-node, nodes have " +
              std::to_string(Y.dim(1)));
  const std::size_t B = Y.dim(0), d = Y.dim(2);
  Tensor out({B, N, d});
  for (std::size_t b = 0; b < B; ++b) {
    const double* yb = Y.data() + b * N * d;
    double* ob = out.data() + b * N * d;
    for (std::size_t i = 0; i < N; ++i) {
      double* orow = ob + i * d;
      const double* arow = A.data() + i * N;
      for (std::size_t kk = 0; kk < N; ++kk) {
        axpy(d, arow[kk], yb + kk * d, orow);
      }
    }
  }
  auto backward = [adjacency, nodes, B, N, d](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(adjacency);
    const Tensor& Y = tp.value(nodes);
    Tensor& gA = tp.grad_slot(adjacency);
    Tensor& gY = tp.grad_slot(nodes);
    for (std::size_t b = 0; b < B; ++b) {
      const double* yb = Y.data() + b * N * d;
      double* gyb = gY.data() + b * N * d;
      const double* gb = g.data() + b * N * d;
      for (std::size_t i = 0; i < N; ++i) {
        const double* grow = gb + i * d;
        const double* arow = A.data() + i * N;
        double* garow = gA.data() + i * N;
        for (std::size_t kk = 0; kk < N; ++kk) {
          garow[kk] += dot4(d, grow, yb + kk * d);
          axpy(d, arow[kk], grow, gyb + kk * d);
        }
      }
    }
  };
  return t.push("adj_matmul", {adjacency, nodes}, std::move(out),
                std::move(backward));
}

Var pair_matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rank() == 3 && B.rank() == 3, "pair_matmul",
          "operands must be [B,N,M] x [B,M,d], got " +
              shape_string(A.shape()) + " x " + shape_string(B.shape()));
  require(A.dim(0) == B.dim(0) && A.dim(2) == B.dim(1), "pair_matmul",
          "operand shapes do not chain: " + shape_string(A.shape()) + " x " +
              shape_string(B.shape()));
  const std::size_t Bn = A.dim(0), N = A.dim(1), M = A.dim(2), d = B.dim(2);
  Tensor out({Bn, N, d});
  for (std::size_t bb = 0; bb < Bn; ++bb) {
    const double* ab = A.data() + bb * N * M;
    const double* yb = B.data() + bb * M * d;
    double* ob = out.data() + bb * N * d;
    for (std::size_t i = 0; i < N; ++i) {
      double* orow = ob + i * d;
      const double* arow = ab + i * M;
      for (std::size_t kk = 0; kk < M; ++kk) {
        axpy(d, arow[kk], yb + kk * d, orow);
      }
    }
  }
  auto backward = [a, b, Bn, N, M, d](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    Tensor& gA = tp.grad_slot(a);
    Tensor& gB = tp.grad_slot(b);
    for (std::size_t bb = 0; bb < Bn; ++bb) {
      const double* ab = A.data() + bb * N * M;
      const double* yb = B.data() + bb * M * d;
      double* gab = gA.data() + bb * N * M;
      double* gyb = gB.data() + bb * M * d;
      const double* gb = g.data() + bb * N * d;
      for (std::size_t i = 0; i < N; ++i) {
        const double* grow = gb + i * d;
        const double* arow = ab + i * M;
        double* garow = gab + i * M;
        for (std::size_t kk = 0; kk < M; ++kk) {
          garow[kk] += dot4(d, grow, yb + kk * d);
          axpy(d, arow[kk], grow, gyb + kk * d);
        }
      }
    }
  };
  return t.push("pair_matmul", {a, b}, std::move(out), std::move(backward));
}

// ---- softmax ---------------------------------------------------------------

Var softmax_rows(Tape& t, Var x) {
  const Tensor& X = t.value(x);
  require(X.rank() >= 1, "softmax_rows", "input must have at least rank 1");
  const std::size_t n = X.shape().back();
  const std::size_t rows = X.numel() / n;
  Tensor out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xrow = X.data() + r * n;
    double* orow = out.data() + r * n;
    double mx = xrow[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xrow[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(xrow[j] - mx);
      sum += orow[j];
    }
    const double isum = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) orow[j] *= isum;
  }
  auto backward = [x, rows, n, y = out](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_slot(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yrow = y.data() + r * n;
      const double* grow = g.data() + r * n;
      double* gxrow = gx.data() + r * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * yrow[j];
      for (std::size_t j = 0; j < n; ++j) gxrow[j] += yrow[j] * (grow[j] - s);
    }
  };
  return t.push("softmax_rows", {x}, std::move(out), std::move(backward));
}

// ---- similarity logits -----------------------------------------------------

Var cosine_logits(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rank() == 3 && B.rank() == 3, "cosine_logits",
          "operands must be [B,N,d] x [B,M,d], got " +
              shape_string(A.shape()) + " x " + shape_string(B.shape()));
  require(A.dim(0) == B.dim(0) && A.dim(2) == B.dim(2), "cosine_logits",
          "batch or feature extents differ: " + shape_string(A.shape()) +
              " x " + shape_string(B.shape()));
  const std::size_t Bn = A.dim(0), N = A.dim(1), M = B.dim(1), d = A.dim(2);
  Tensor na({Bn, N}), nb({Bn, M});
  {
    BranchRecorder rec(t);
    for (std::size_t bb = 0; bb < Bn; ++bb) {
      for (std::size_t i = 0; i < N; ++i) {
        const double* v = A.data() + (bb * N + i) * d;
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += v[k] * v[k];
        na.at(bb, i) = std::sqrt(s);
        rec.bit(s > 0.0);
      }
      for (std::size_t j = 0; j < M; ++j) {
        const double* v = B.data() + (bb * M + j) * d;
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += v[k] * v[k];
        nb.at(bb, j) = std::sqrt(s);
        rec.bit(s > 0.0);
      }
    }
  }
  Tensor out({Bn, N, M});
  for (std::size_t bb = 0; bb < Bn; ++bb) {
    for (std::size_t i = 0; i < N; ++i) {
      const double* ai = A.data() + (bb * N + i) * d;
      const double nai = na.at(bb, i);
      double* orow = out.data() + (bb * N + i) * M;
      for (std::size_t j = 0; j < M; ++j) {
        const double nbj = nb.at(bb, j);
        if (nai == 0.0 || nbj == 0.0) {
          orow[j] = 0.0;
          continue;
        }
        const double* bj = B.data() + (bb * M + j) * d;
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += ai[k] * bj[k];
        orow[j] = s / (nai * nbj);
      }
    }
  }
  auto backward = [a, b, Bn, N, M, d, na = std::move(na), nb = std::move(nb),
                   y = out](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    Tensor& gA = tp.grad_slot(a);
    Tensor& gB = tp.grad_slot(b);
    for (std::size_t bb = 0; bb < Bn; ++bb) {
      for (std::size_t i = 0; i < N; ++i) {
        const double nai = na.at(bb, i);
        if (nai == 0.0) continue;
        const double* ai = A.data() + (bb * N + i) * d;
        double* gai = gA.data() + (bb * N + i) * d;
        const double* grow = g.data() + (bb * N + i) * M;
        const double* yrow = y.data() + (bb * N + i) * M;
        for (std::size_t j = 0; j < M; ++j) {
          const double nbj = nb.at(bb, j);
          const double gij = grow[j];
          if (nbj == 0.0 || gij == 0.0) continue;
          const double* bj = B.data() + (bb * M + j) * d;
          double* gbj = gB.data() + (bb * M + j) * d;
          const double inv = 1.0 / (nai * nbj);
          const double c = yrow[j];
          const double ca = c / (nai * nai);
          const double cb = c / (nbj * nbj);
          for (std::size_t k = 0; k < d; ++k) {
            gai[k] += gij * (bj[k] * inv - ca * ai[k]);
            gbj[k] += gij * (ai[k] * inv - cb * bj[k]);
          }
        }
      }
    }
  };
  return t.push("cosine_logits", {a, b}, std::move(out), std::move(backward));
}

Var gaussian_kernel(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.rank() == 3 && B.rank() == 3, "gaussian_kernel",
          "operands must be [B,N,d] x [B,M,d], got " +
              shape_string(A.shape()) + " x " + shape_string(B.shape()));
  require(A.dim(0) == B.dim(0) && A.dim(2) == B.dim(2), "gaussian_kernel",
          "batch or feature extents differ: " + shape_string(A.shape()) +
              " x " + shape_string(B.shape()));
  const std::size_t Bn = A.dim(0), N = A.dim(1), M = B.dim(1), d = A.dim(2);
  Tensor d2({Bn, N, M});
  for (std::size_t bb = 0; bb < Bn; ++bb) {
    for (std::size_t i = 0; i < N; ++i) {
      const double* ai = A.data() + (bb * N + i) * d;
      double* row = d2.data() + (bb * N + i) * M;
      for (std::size_t j = 0; j < M; ++j) {
        const double* bj = B.data() + (bb * M + j) * d;
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double df = ai[k] - bj[k];
          s += df * df;
        }
        row[j] = s;
      }
    }
  }
  // Median distance per batch entry; ties broken by flat index so the
  // selection is deterministic.
  std::vector<double> sigma(Bn);
  std::vector<std::size_t> med_lo(Bn), med_hi(Bn);
  {
    BranchRecorder rec(t);
    std::vector<std::size_t> order(N * M);
    for (std::size_t bb = 0; bb < Bn; ++bb) {
      const double* block = d2.data() + bb * N * M;
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::sort(order.begin(), order.end(),
                [block](std::size_t u, std::size_t v) {
                  if (block[u] != block[v]) return block[u] < block[v];
                  return u < v;
                });
      const std::size_t total = N * M;
      med_lo[bb] = order[(total - 1) / 2];
      med_hi[bb] = order[total / 2];
      sigma[bb] =
          0.5 * (std::sqrt(block[med_lo[bb]]) + std::sqrt(block[med_hi[bb]]));
      rec.word(static_cast<std::uint64_t>(med_lo[bb]) * total + med_hi[bb]);
      rec.bit(sigma[bb] > 0.0);
    }
  }
  Tensor out({Bn, N, M});
  for (std::size_t bb = 0; bb < Bn; ++bb) {
    double* orow = out.data() + bb * N * M;
    const double* drow = d2.data() + bb * N * M;
    if (sigma[bb] == 0.0) {
      for (std::size_t e = 0; e < N * M; ++e) orow[e] = 1.0;
    } else {
      const double f = -0.5 / (sigma[bb] * sigma[bb]);
      for (std::size_t e = 0; e < N * M; ++e) orow[e] = std::exp(f * drow[e]);
    }
  }
  auto backward = [a, b, Bn, N, M, d, d2 = std::move(d2),
                   sigma = std::move(sigma), med_lo = std::move(med_lo),
                   med_hi = std::move(med_hi),
                   y = out](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    Tensor& gA = tp.grad_slot(a);
    Tensor& gB = tp.grad_slot(b);
    std::vector<double> gd2(N * M);
    for (std::size_t bb = 0; bb < Bn; ++bb) {
      if (sigma[bb] == 0.0) continue;
      const double sg = sigma[bb];
      const double* gblock = g.data() + bb * N * M;
      const double* dblock = d2.data() + bb * N * M;
      const double* yblock = y.data() + bb * N * M;
      const double f = -0.5 / (sg * sg);
      double gsigma = 0.0;
      for (std::size_t e = 0; e < N * M; ++e) {
        // y = exp(f * d2): both f (via sigma) and d2 carry gradient.
        const double gy = gblock[e] * yblock[e];
        gd2[e] = f * gy;
        gsigma += gy * dblock[e];
      }
      gsigma /= sg * sg * sg;  // d(exp(-d2/(2 s^2)))/ds = y * d2 / s^3
      // sigma = (sqrt(d2[lo]) + sqrt(d2[hi])) / 2
      for (std::size_t m : {med_lo[bb], med_hi[bb]}) {
        const double dist = std::sqrt(dblock[m]);
        if (dist > 0.0) gd2[m] += 0.5 * gsigma / (2.0 * dist);
      }
      for (std::size_t i = 0; i < N; ++i) {
        const double* ai = A.data() + (bb * N + i) * d;
        double* gai = gA.data() + (bb * N + i) * d;
        const double* grow = gd2.data() + i * M;
        for (std::size_t j = 0; j < M; ++j) {
          const double w = 2.0 * grow[j];
          if (w == 0.0) continue;
          const double* bj = B.data() + (bb * M + j) * d;
          double* gbj = gB.data() + (bb * M + j) * d;
          for (std::size_t k = 0; k < d; ++k) {
            const double df = ai[k] - bj[k];
            gai[k] += w * df;
            gbj[k] -= w * df;
          }
        }
      }
    }
  };
  return t.push("gaussian_kernel", {a, b}, std::move(out),
                std::move(backward));
}

// ---- structural ops --------------------------------------------------------

Var concat_nodes(Tape& t, Var a, Var b, Var c) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  const Tensor& C = t.value(c);
  require(A.rank() == 3 && B.rank() == 3 && C.rank() == 3, "concat_nodes",
          "operands must be rank-3");
  require(A.dim(0) == B.dim(0) && A.dim(0) == C.dim(0) &&
              A.dim(1) == B.dim(1) && A.dim(1) == C.dim(1),
          "concat_nodes",
          "leading extents differ: " + shape_string(A.shape()) + ", " +
              shape_string(B.shape()) + ", " + shape_string(C.shape()));
  const std::size_t Bn = A.dim(0), N = A.dim(1);
  const std::size_t pa = A.dim(2), pb = B.dim(2), pc = C.dim(2);
  Tensor out({Bn, N, pa + pb + pc});
  const std::size_t q = pa + pb + pc;
  for (std::size_t r = 0; r < Bn * N; ++r) {
    double* orow = out.data() + r * q;
    std::copy_n(A.data() + r * pa, pa, orow);
    std::copy_n(B.data() + r * pb, pb, orow + pa);
    std::copy_n(C.data() + r * pc, pc, orow + pa + pb);
  }
  auto backward = [a, b, c, Bn, N, pa, pb, pc, q](Tape& tp, const Tensor& g) {
    Tensor& gA = tp.grad_slot(a);
    Tensor& gB = tp.grad_slot(b);
    Tensor& gC = tp.grad_slot(c);
    for (std::size_t r = 0; r < Bn * N; ++r) {
      const double* grow = g.data() + r * q;
      double* ga = gA.data() + r * pa;
      double* gb = gB.data() + r * pb;
      double* gc = gC.data() + r * pc;
      for (std::size_t k = 0; k < pa; ++k) ga[k] += grow[k];
      for (std::size_t k = 0; k < pb; ++k) gb[k] += grow[pa + k];
      for (std::size_t k = 0; k < pc; ++k) gc[k] += grow[pa + pb + k];
    }
  };
  return t.push("concat_nodes", {a, b, c}, std::move(out),
                std::move(backward));
}

Var reshape(Tape& t, Var x, std::vector<std::size_t> shape) {
  const Tensor& X = t.value(x);
  const std::size_t n = Tensor::check_shape(shape);
  require(n == X.numel(), "reshape",
          "cannot reshape " + shape_string(X.shape()) + " to " +
              shape_string(shape));
  Tensor out(std::move(shape), X.storage());
  auto backward = [x](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_slot(x);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  };
  return t.push("reshape", {x}, std::move(out), std::move(backward));
}

Var add(Tape& t, Var a, Var b) { return add_scaled(t, a, b, 1.0); }

Var add_scaled(Tape& t, Var a, Var b, double s) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.same_shape(B), "add",
          "operand shapes differ: " + shape_string(A.shape()) + " vs " +
              shape_string(B.shape()));
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A[i] + s * B[i];
  auto backward = [a, b, s](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad_slot(a);
    Tensor& gb = tp.grad_slot(b);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i];
      gb[i] += s * g[i];
    }
  };
  return t.push(s == 1.0 ? "add" : "add_scaled", {a, b}, std::move(out),
                std::move(backward));
}

Var scale(Tape& t, Var x, double s) {
  const Tensor& X = t.value(x);
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.numel(); ++i) out[i] = s * X[i];
  auto backward = [x, s](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_slot(x);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += s * g[i];
  };
  return t.push("scale", {x}, std::move(out), std::move(backward));
}

Var hadamard(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  require(A.same_shape(B), "hadamard",
          "operand shapes differ: " + shape_string(A.shape()) + " vs " +
              shape_string(B.shape()));
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.numel(); ++i) out[i] = A[i] * B[i];
  auto backward = [a, b](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    Tensor& ga = tp.grad_slot(a);
    Tensor& gb = tp.grad_slot(b);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i] * B[i];
      gb[i] += g[i] * A[i];
    }
  };
  return t.push("hadamard", {a, b}, std::move(out), std::move(backward));
}

Var sum_all(Tape& t, Var x) {
  const Tensor& X = t.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < X.numel(); ++i) s += X[i];
  auto backward = [x](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_slot(x);
    const double gv = g[0];
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gv;
  };
  return t.push("sum_all", {x}, Tensor::scalar(s), std::move(backward));
}

Var cross_entropy(Tape& t, Var logits, const std::vector<int>& labels) {
  const Tensor& X = t.value(logits);
  require(X.rank() == 2, "cross_entropy",
          "logits must be [B,K], got " + shape_string(X.shape()));
  const std::size_t B = X.dim(0), K = X.dim(1);
  require(labels.size() == B, "cross_entropy",
          "got " + std::to_string(labels.size()) + " labels for batch of " +
              std::to_string(B));
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= K) {
      throw ConfigError("cross_entropy: label " + std::to_string(l) +
                        " outside [0, " + std::to_string(K) + ")");
    }
  }
  Tensor probs({B, K});
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const double* xrow = X.data() + i * K;
    double* prow = probs.data() + i * K;
    double mx = xrow[0];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, xrow[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      prow[k] = std::exp(xrow[k] - mx);
      sum += prow[k];
    }
    const double isum = 1.0 / sum;
    for (std::size_t k = 0; k < K; ++k) prow[k] *= isum;
    loss += std::log(sum) + mx - xrow[labels[i]];
  }
  loss /= static_cast<double>(B);
  auto backward = [logits, labels, B, K,
                   probs = std::move(probs)](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_slot(logits);
    const double gv = g[0] / static_cast<double>(B);
    for (std::size_t i = 0; i < B; ++i) {
      const double* prow = probs.data() + i * K;
      double* grow = gx.data() + i * K;
      for (std::size_t k = 0; k < K; ++k) grow[k] += gv * prow[k];
      grow[labels[i]] -= gv;
    }
  };
  return t.push("cross_entropy", {logits}, Tensor::scalar(loss),
                std::move(backward));
}

}  // namespace gks
