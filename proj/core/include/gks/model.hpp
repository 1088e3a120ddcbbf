// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gks/tape.hpp"
#include "gks/tensor.hpp"

namespace gks {

// How the transfer matrix measures similarity between node features.
enum class Similarity { kCosine, kGaussian };
// Whether the target graph absorbs source knowledge each layer.
enum class Fusion { kFull, kNone };

const char* to_string(Similarity s);
const char* to_string(Fusion f);
Similarity similarity_from_string(const std::string& s);
Fusion fusion_from_string(const std::string& s);

// Architecture hyperparameters. The backbone interior width is always half
// the output width (64 for the default 128), mirroring the fixed reference
// layout at any scale.
struct ModelConfig {
  std::size_t patch_side = 7;    // r: odd patch extent
  std::size_t channels = 128;    // c: backbone output channels
  std::size_t graph_dim = 64;    // d: node feature width
  std::size_t graph_layers = 3;  // n: graph convolution steps
  Similarity similarity = Similarity::kCosine;
  Fusion fusion = Fusion::kFull;
  std::size_t hidden = 128;  // classifier hidden width
  // false: plain backbone + classifier on the target branch only; no graph
  // parameters exist at all.
  bool use_graph = true;

  std::size_t mid_channels() const { return channels / 2; }
  std::size_t nodes() const { return patch_side * patch_side; }
  std::size_t flat_width() const {
    return patch_side * patch_side * channels;
  }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// One conv + batch-norm unit of the backbone.
struct ConvBlock {
  Tensor kernel;  // [k, k, Cin, Cout]
  Tensor bias;    // [Cout]
  BatchNormState bn;
};

// Per-layer graph parameters. Source-branch tensors (adj_source, w_source,
// w_inter, w_fuse, b_fuse) exist in every graph-enabled config so that
// checkpoints stay layout-compatible across fusion modes.
struct GraphLayerParams {
  Tensor adj_source, adj_target;  // [N, N]
  Tensor w_source, w_target;      // [d, d]
  Tensor w_inter;                 // [d, d]
  Tensor w_fuse;                  // [3d, d]
  Tensor b_fuse;                  // [d]
};

// Every tensor the model owns, with stable names for checkpoints and
// optimizer traversal.
struct ModelParams {
  ModelConfig config;
  std::vector<ConvBlock> backbone;       // 5 blocks
  Tensor project_weight;                 // [c, d]
  std::vector<GraphLayerParams> graph;   // n layers; empty when !use_graph
  Tensor reproject_weight;               // [d, c]
  Tensor cls_w1, cls_b1, cls_w2, cls_b2;

  using TensorVisitor = std::function<void(const std::string&, Tensor&)>;
  using ConstTensorVisitor =
      std::function<void(const std::string&, const Tensor&)>;

  // Tensors updated by the optimizer, in a fixed deterministic order.
  void visit_trainable(const TensorVisitor& fn);
  void visit_trainable(const ConstTensorVisitor& fn) const;
  // Everything persisted to checkpoints: trainables plus batch-norm running
  // statistics.
  void visit_state(const TensorVisitor& fn);
  void visit_state(const ConstTensorVisitor& fn) const;

  bool all_finite() const;
};

// Deterministic initialization: conv/FC weights uniform in +-1/sqrt(fan_in),
// biases zero, batch-norm affine identity, adjacencies identity plus 0.01
// stddev noise, reprojection exactly zero (the enhancement starts as the
// identity map).
ModelParams model_init(const ModelConfig& config, std::uint64_t seed);

// Tape handles for one registered copy of the parameters.
struct ModelVars {
  struct Block {
    Var kernel, bias, gamma, beta;
    BatchNormState* bn = nullptr;  // running statistics live in ModelParams
  };
  struct GraphLayer {
    Var adj_source, adj_target, w_source, w_target, w_inter, w_fuse, b_fuse;
  };
  std::vector<Block> backbone;
  Var project_weight;
  std::vector<GraphLayer> graph;
  Var reproject_weight;
  Var cls_w1, cls_b1, cls_w2, cls_b2;
};

// Optimizer hook: parameter tensor and the tape node of its registered copy.
struct TrainableRef {
  std::string name;
  Tensor* tensor = nullptr;
  Var var;
};

// Copies every trainable tensor onto the tape as a named leaf. When refs is
// given it receives one entry per leaf in visit_trainable order.
ModelVars register_model(Tape& tape, ModelParams& params,
                         std::vector<TrainableRef>* refs = nullptr);

// Backbone: three 3x3 conv+BN+ReLU stages at the interior width, a 1x1
// expansion to the output width, a second 1x1 stage, an elementwise sum of
// the two 1x1 stages, and a final ReLU. [B,r,r,3] -> [B,r,r,c].
Var backbone_forward(Tape& tape, Var batch, const ModelVars& vars, Mode mode);

// Row-major flatten of spatial positions into nodes followed by a per-node
// linear map: [B,h,w,c] -> [B, h*w, d].
Var project_to_graph(Tape& tape, Var features, Var weight);

// One graph convolution: ReLU(A * Y * W) per batch entry; A is shared across
// the batch and unnormalized.
Var graph_conv_step(Tape& tape, Var nodes, Var adjacency, Var weight);

// Row-stochastic pairing of target nodes to source nodes: softmax over
// cosine similarities or over Gaussian-kernel values (median-heuristic
// bandwidth). [B,N,d] x [B,M,d] -> [B,N,M].
Var transfer_matrix(Tape& tape, Var target_nodes, Var source_nodes,
                    Similarity similarity);

// Source features carried into the target's node space: A_tr * Y_l * W_i.
Var intermediate_graph(Tape& tape, Var a_tr, Var source_nodes, Var w_inter);

// Residual fusion: Y_t + ReLU([Y_t ; Y_i ; Y_l] * W_f + b_f). All three
// inputs must share the node count (one common patch side for both
// datasets).
Var inter_graph_fusion(Tape& tape, Var y_t, Var y_i, Var y_l, Var w_fuse,
                       Var b_fuse);

// Full enhancement of both branches. The target output fuses source
// knowledge when fusion=full; the source output always evolves by intra-graph
// reasoning only. Both add their reprojected graph back onto the input
// features.
struct EnhancedPair {
  Var target;  // X_e for the target branch
  Var source;  // un-fused enhanced source features
};
EnhancedPair enhance_both(Tape& tape, Var x_t, Var x_l, const ModelVars& vars,
                          const ModelConfig& config);

// Target-branch enhanced features (the primary public entry point).
Var enhance_features(Tape& tape, Var x_t, Var x_l, const ModelVars& vars,
                     const ModelConfig& config);

// Two-layer classifier over flattened enhanced features -> [B,2] logits.
Var classify(Tape& tape, Var features, const ModelVars& vars);

// Joint forward of both branches. With use_graph=false only the target
// branch runs (source_logits is invalid). Batch-norm consumes the source
// batch first, then the target batch, so running statistics are
// reproducible.
struct ForwardOutput {
  Var target_logits;
  Var source_logits;
};
ForwardOutput model_forward(Tape& tape, Var target_batch, Var source_batch,
                            const ModelVars& vars, const ModelConfig& config,
                            Mode mode);

}  // namespace gks
