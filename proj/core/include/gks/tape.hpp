// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gks/tensor.hpp"

namespace gks {

class Tape;

// Handle to a node recorded on a Tape. Only meaningful for the tape that
// produced it.
struct Var {
  static constexpr std::uint32_t kInvalid = 0xffffffffu;
  std::uint32_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

// Whether batch statistics are computed (training) or running statistics are
// consumed (inference).
enum class Mode { kTrain, kInfer };

// Per-channel affine parameters and running statistics for batch
// normalization. gamma/beta are trainable; the running moments are state
// updated during training-mode forwards and consumed at inference.
struct BatchNormState {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  static BatchNormState init(std::size_t channels, double epsilon = 1e-5,
                             double momentum = 0.1);
  std::size_t channels() const { return gamma.numel(); }
};

// Reverse-mode automatic differentiation over a dynamically recorded graph.
// Forward evaluation is eager: each operation computes its output
// immediately and records a closure that, given the output adjoint,
// accumulates adjoints into its inputs. backward() releases gradients for
// every node that the loss depends on.
//
// The tape also folds every data-dependent branch decision taken during the
// forward pass (ReLU sign masks, zero-norm fallbacks, kernel-width median
// picks) into a fingerprint. Two forward passes of the same program whose
// fingerprints differ took different branches, which is what makes
// finite-difference validation across non-differentiable points detectable.
class Tape {
 public:
  // Receives the adjoint of the node's output and accumulates adjoints into
  // the node's inputs via grad_slot().
  using BackwardFn = std::function<void(Tape&, const Tensor& gout)>;

  Var leaf(Tensor value, std::string name = "leaf");

  const Tensor& value(Var v) const;
  // Gradient of the last backward()'s loss w.r.t. node v. Zeros if the loss
  // does not depend on v.
  const Tensor& grad(Var v);

  // Runs the reverse sweep from a scalar loss node.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(Var v) const;
  // Index of the first node whose value contains a non-finite entry, or
  // size() if all values are finite. For failure diagnostics.
  std::size_t first_non_finite() const;
  std::string describe(std::size_t node_index) const;

  std::uint64_t branch_fingerprint() const { return fingerprint_; }

  // --- used by operation implementations ---
  Var push(std::string op, std::vector<Var> inputs, Tensor value,
           BackwardFn backward);
  Tensor& grad_slot(Var v);  // allocates zeros on first touch
  bool grad_live(Var v) const;
  void fold_branch(std::uint64_t word);

 private:
  struct Node {
    std::string op;
    std::vector<Var> inputs;
    Tensor value;
    BackwardFn backward;
  };
  void check(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::uint64_t fingerprint_ = 1469598103934665603ull;  // FNV-1a offset
  bool ran_backward_ = false;
};

// Packs boolean branch decisions into 64-bit words and folds them into the
// owning tape's fingerprint.
class BranchRecorder {
 public:
  explicit BranchRecorder(Tape& tape) : tape_(tape) {}
  ~BranchRecorder() { flush(); }
  void bit(bool b) {
    word_ = (word_ << 1) | static_cast<std::uint64_t>(b);
    if (++count_ == 64) flush();
  }
  void word(std::uint64_t w) {
    flush();
    tape_.fold_branch(w);
  }

 private:
  void flush() {
    if (count_ > 0) {
      tape_.fold_branch(word_ ^ (0x5851f42d4c957f2dull + count_));
      word_ = 0;
      count_ = 0;
    }
  }
  Tape& tape_;
  std::uint64_t word_ = 0;
  unsigned count_ = 0;
};

// ---- differentiable operations -------------------------------------------
//
// Shapes use B = batch, H/W = spatial extents, C = channels, N/M = node
// counts, d/p/q/f/g = feature widths. All operations validate operand shapes
// and throw ShapeError on mismatch.

// 2-D convolution, stride 1, zero "same" padding (odd k): input [B,H,W,Cin],
// kernel [k,k,Cin,Cout], bias [Cout] -> [B,H,W,Cout].
Var conv2d(Tape& t, Var input, Var kernel, Var bias);

// Batch normalization over all but the channel (last) axis of [B,H,W,C] or
// [B,C]. Training mode uses batch moments and updates state->running_*;
// inference mode uses the running moments.
Var batch_norm(Tape& t, Var input, Var gamma, Var beta, BatchNormState* state,
               Mode mode);

// Elementwise max(x, 0); the subgradient at exactly 0 is taken as 0 and each
// element's sign is folded into the branch fingerprint.
Var relu(Tape& t, Var input);

// [m,k] x [k,n] -> [m,n].
Var matmul(Tape& t, Var a, Var b);

// Affine map of the rows of x: x [..., p] (rank 2 or 3), weight [p,q],
// optional bias [q] -> [..., q]. Every leading index is treated as a row.
Var linear(Tape& t, Var x, Var weight, Var bias = Var{});

// Shared square matrix applied per batch entry: adjacency [N,N],
// nodes [B,N,d] -> [B,N,d].
Var adj_matmul(Tape& t, Var adjacency, Var nodes);

// Per-batch matrix product: a [B,N,M], b [B,M,d] -> [B,N,d].
Var pair_matmul(Tape& t, Var a, Var b);

// Softmax over the last axis.
Var softmax_rows(Tape& t, Var x);

// Pairwise cosine similarity: a [B,N,d], b [B,M,d] -> [B,N,M]. A zero-norm
// vector yields similarity 0 against everything (recorded as a branch
// decision; no gradient flows through those entries).
Var cosine_logits(Tape& t, Var a, Var b);

// Pairwise Gaussian-kernel similarity: exp(-|ai - bj|^2 / (2 sigma^2)) with
// sigma the median of the N*M cross distances of each batch entry
// (averaged-middle convention). Gradients flow through the median element.
// sigma == 0 degrades to all-one similarities for that batch entry (a
// recorded branch decision). Like cosine_logits, the result is a bounded
// similarity score meant to be fed to softmax_rows.
Var gaussian_kernel(Tape& t, Var a, Var b);

// Concatenation of three [B,N,*] tensors along the last axis.
Var concat_nodes(Tape& t, Var a, Var b, Var c);

// Same data, new shape (element count must match).
Var reshape(Tape& t, Var x, std::vector<std::size_t> shape);

Var add(Tape& t, Var a, Var b);              // elementwise, equal shapes
Var add_scaled(Tape& t, Var a, Var b, double s);  // a + s*b
Var scale(Tape& t, Var x, double s);
Var hadamard(Tape& t, Var a, Var b);         // elementwise product
Var sum_all(Tape& t, Var x);                 // -> rank-0 scalar

// Mean softmax cross-entropy: logits [B,K], labels in [0,K) -> scalar.
Var cross_entropy(Tape& t, Var logits, const std::vector<int>& labels);

}  // namespace gks
