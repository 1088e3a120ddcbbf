// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#include "gks/model.hpp"

#include <cmath>

#include "gks/error.hpp"
#include "gks/rng.hpp"

namespace gks {

const char* to_string(Similarity s) {
  return s == Similarity::kCosine ? "cosine" : "gaussian";
}

const char* to_string(Fusion f) { return f == Fusion::kFull ? "full" : "none"; }

Similarity similarity_from_string(const std::string& s) {
  if (s == "cosine") return Similarity::kCosine;
  if (s == "gaussian") return Similarity::kGaussian;
  throw ConfigError("unknown similarity '" + s +
                    "' (expected cosine or gaussian)");
}

Fusion fusion_from_string(const std::string& s) {
  if (s == "full") return Fusion::kFull;
  if (s == "none") return Fusion::kNone;
  throw ConfigError("unknown fusion mode '" + s + "' (expected full or none)");
}

void ModelConfig::validate() const {
  if (patch_side < 3 || patch_side % 2 == 0) {
    throw ConfigError("patch side must be odd and at least 3, got " +
                      std::to_string(patch_side));
  }
  if (channels < 2 || channels % 2 != 0) {
    throw ConfigError("backbone channels must be even and at least 2, got " +
                      std::to_string(channels));
  }
  if (graph_dim < 1) throw ConfigError("graph dimension must be positive");
  if (graph_layers < 1) throw ConfigError("graph layer count must be positive");
  if (hidden < 1) throw ConfigError("classifier hidden width must be positive");
}

namespace {

// Single traversal definition shared by the const and mutable visitors and by
// register_model, so checkpoint layout, optimizer order, and tape
// registration can never drift apart.
template <typename Params, typename Fn>
void walk(Params& p, bool include_running_stats, Fn&& fn) {
  for (std::size_t i = 0; i < p.backbone.size(); ++i) {
    const std::string base = "backbone" + std::to_string(i + 1);
    fn(base + ".kernel", p.backbone[i].kernel);
    fn(base + ".bias", p.backbone[i].bias);
    fn(base + ".bn_gamma", p.backbone[i].bn.gamma);
    fn(base + ".bn_beta", p.backbone[i].bn.beta);
    if (include_running_stats) {
      fn(base + ".bn_running_mean", p.backbone[i].bn.running_mean);
      fn(base + ".bn_running_var", p.backbone[i].bn.running_var);
    }
  }
  if (p.config.use_graph) {
    fn("project.weight", p.project_weight);
    for (std::size_t i = 0; i < p.graph.size(); ++i) {
      const std::string base = "graph" + std::to_string(i + 1);
      fn(base + ".adj_source", p.graph[i].adj_source);
      fn(base + ".adj_target", p.graph[i].adj_target);
      fn(base + ".w_source", p.graph[i].w_source);
      fn(base + ".w_target", p.graph[i].w_target);
      fn(base + ".w_inter", p.graph[i].w_inter);
      fn(base + ".w_fuse", p.graph[i].w_fuse);
      fn(base + ".b_fuse", p.graph[i].b_fuse);
    }
    fn("reproject.weight", p.reproject_weight);
  }
  fn("classifier.w1", p.cls_w1);
  fn("classifier.b1", p.cls_b1);
  fn("classifier.w2", p.cls_w2);
  fn("classifier.b2", p.cls_b2);
}

}  // namespace

void ModelParams::visit_trainable(const TensorVisitor& fn) {
  walk(*this, false, fn);
}
void ModelParams::visit_trainable(const ConstTensorVisitor& fn) const {
  walk(*this, false, fn);
}
void ModelParams::visit_state(const TensorVisitor& fn) { walk(*this, true, fn); }
void ModelParams::visit_state(const ConstTensorVisitor& fn) const {
  walk(*this, true, fn);
}

bool ModelParams::all_finite() const {
  bool ok = true;
  visit_state([&ok](const std::string&, const Tensor& t) {
    if (!t.all_finite()) ok = false;
  });
  return ok;
}

ModelParams model_init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  Rng rng(seed);

  const auto fill_uniform = [&rng](Tensor& t, std::size_t fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-s, s);
  };
  const auto make_block = [&](std::size_t k, std::size_t cin,
                              std::size_t cout) {
    ConvBlock b;
    b.kernel = Tensor({k, k, cin, cout});
    fill_uniform(b.kernel, k * k * cin);
    b.bias = Tensor({cout});
    b.bn = BatchNormState::init(cout);
    return b;
  };

  const std::size_t mid = config.mid_channels();
  p.backbone.push_back(make_block(3, 3, mid));
  p.backbone.push_back(make_block(3, mid, mid));
  p.backbone.push_back(make_block(3, mid, mid));
  p.backbone.push_back(make_block(1, mid, config.channels));
  p.backbone.push_back(make_block(1, config.channels, config.channels));

  if (config.use_graph) {
    const std::size_t n = config.nodes();
    const std::size_t d = config.graph_dim;
    p.project_weight = Tensor({config.channels, d});
    fill_uniform(p.project_weight, config.channels);
    const auto near_identity = [&](Tensor& a) {
      a = Tensor({n, n});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          a.data()[i * n + j] = (i == j ? 1.0 : 0.0) + 0.01 * rng.normal();
        }
      }
    };
    for (std::size_t l = 0; l < config.graph_layers; ++l) {
      GraphLayerParams g;
      near_identity(g.adj_source);
      near_identity(g.adj_target);
      g.w_source = Tensor({d, d});
      fill_uniform(g.w_source, d);
      g.w_target = Tensor({d, d});
      fill_uniform(g.w_target, d);
      g.w_inter = Tensor({d, d});
      fill_uniform(g.w_inter, d);
      g.w_fuse = Tensor({3 * d, d});
      fill_uniform(g.w_fuse, 3 * d);
      g.b_fuse = Tensor({d});
      p.graph.push_back(std::move(g));
    }
    p.reproject_weight = Tensor({d, config.channels});  // zeros by design
  }

  p.cls_w1 = Tensor({config.flat_width(), config.hidden});
  fill_uniform(p.cls_w1, config.flat_width());
  p.cls_b1 = Tensor({config.hidden});
  p.cls_w2 = Tensor({config.hidden, 2});
  fill_uniform(p.cls_w2, config.hidden);
  p.cls_b2 = Tensor({2});
  return p;
}

ModelVars register_model(Tape& tape, ModelParams& params,
                         std::vector<TrainableRef>* refs) {
  params.config.validate();
  if (params.backbone.size() != 5) {
    throw ConfigError("model parameters hold " +
                      std::to_string(params.backbone.size()) +
                      " backbone blocks; expected 5");
  }
  if (params.config.use_graph &&
      params.graph.size() != params.config.graph_layers) {
    throw ConfigError("model parameters hold " +
                      std::to_string(params.graph.size()) +
                      " graph layers; config expects " +
                      std::to_string(params.config.graph_layers));
  }
  ModelVars vars;
  const auto reg = [&](const std::string& name, Tensor& t) {
    const Var v = tape.leaf(t, name);
    if (refs) refs->push_back({name, &t, v});
    return v;
  };
  for (std::size_t i = 0; i < params.backbone.size(); ++i) {
    const std::string base = "backbone" + std::to_string(i + 1);
    ModelVars::Block b;
    b.kernel = reg(base + ".kernel", params.backbone[i].kernel);
    b.bias = reg(base + ".bias", params.backbone[i].bias);
    b.gamma = reg(base + ".bn_gamma", params.backbone[i].bn.gamma);
    b.beta = reg(base + ".bn_beta", params.backbone[i].bn.beta);
    b.bn = &params.backbone[i].bn;
    vars.backbone.push_back(b);
  }
  if (params.config.use_graph) {
    vars.project_weight = reg("project.weight", params.project_weight);
    for (std::size_t i = 0; i < params.graph.size(); ++i) {
      const std::string base = "graph" + std::to_string(i + 1);
      ModelVars::GraphLayer g;
      g.adj_source = reg(base + ".adj_source", params.graph[i].adj_source);
      g.adj_target = reg(base + ".adj_target", params.graph[i].adj_target);
      g.w_source = reg(base + ".w_source", params.graph[i].w_source);
      g.w_target = reg(base + ".w_target", params.graph[i].w_target);
      g.w_inter = reg(base + ".w_inter", params.graph[i].w_inter);
      g.w_fuse = reg(base + ".w_fuse", params.graph[i].w_fuse);
      g.b_fuse = reg(base + ".b_fuse", params.graph[i].b_fuse);
      vars.graph.push_back(g);
    }
    vars.reproject_weight = reg("reproject.weight", params.reproject_weight);
  }
  vars.cls_w1 = reg("classifier.w1", params.cls_w1);
  vars.cls_b1 = reg("classifier.b1", params.cls_b1);
  vars.cls_w2 = reg("classifier.w2", params.cls_w2);
  vars.cls_b2 = reg("classifier.b2", params.cls_b2);
  return vars;
}

Var backbone_forward(Tape& tape, Var batch, const ModelVars& vars, Mode mode) {
  const Tensor& x = tape.value(batch);
  if (x.rank() != 4 || x.dim(3) != 3) {
    throw ShapeError("backbone expects [B,r,r,3] input, got " +
                     shape_string(x.shape()));
  }
  if (vars.backbone.size() != 5) {
    throw ConfigError("backbone requires 5 registered blocks");
  }
  const auto stage = [&](Var in, const ModelVars::Block& b) {
    Var h = conv2d(tape, in, b.kernel, b.bias);
    h = batch_norm(tape, h, b.gamma, b.beta, b.bn, mode);
    return relu(tape, h);
  };
  Var h = stage(batch, vars.backbone[0]);
  h = stage(h, vars.backbone[1]);
  h = stage(h, vars.backbone[2]);
  const Var h4 = stage(h, vars.backbone[3]);
  const Var h5 = stage(h4, vars.backbone[4]);
  return relu(tape, add(tape, h4, h5));
}

Var project_to_graph(Tape& tape, Var features, Var weight) {
  const Tensor& x = tape.value(features);
  if (x.rank() != 4) {
    throw ShapeError("graph projection expects [B,h,w,c] features, got " +
                     shape_string(x.shape()));
  }
  const Var flat =
      reshape(tape, features, {x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
  return linear(tape, flat, weight);
}

Var graph_conv_step(Tape& tape, Var nodes, Var adjacency, Var weight) {
  return relu(tape, linear(tape, adj_matmul(tape, adjacency, nodes), weight));
}

Var transfer_matrix(Tape& tape, Var target_nodes, Var source_nodes,
                    Similarity similarity) {
  const Var logits = similarity == Similarity::kCosine
                         ? cosine_logits(tape, target_nodes, source_nodes)
                         : gaussian_kernel(tape, target_nodes, source_nodes);
  return softmax_rows(tape, logits);
}

Var intermediate_graph(Tape& tape, Var a_tr, Var source_nodes, Var w_inter) {
  return linear(tape, pair_matmul(tape, a_tr, source_nodes), w_inter);
}

Var inter_graph_fusion(Tape& tape, Var y_t, Var y_i, Var y_l, Var w_fuse,
                       Var b_fuse) {
  const Tensor& t = tape.value(y_t);
  const Tensor& l = tape.value(y_l);
  if (t.rank() != 3 || l.rank() != 3 || t.dim(1) != l.dim(1)) {
    throw ConfigError(
        "inter-graph fusion requires equal node counts on both branches; use "
        "one common patch side for both datasets (target nodes " +
        shape_string(t.shape()) + ", source nodes " + shape_string(l.shape()) +
        ")");
  }
  const Var cat = concat_nodes(tape, y_t, y_i, y_l);
  const Var gate = relu(tape, linear(tape, cat, w_fuse, b_fuse));
  return add(tape, y_t, gate);
}

EnhancedPair enhance_both(Tape& tape, Var x_t, Var x_l, const ModelVars& vars,
                          const ModelConfig& config) {
  if (!config.use_graph) {
    throw ConfigError("feature enhancement requires a graph-enabled config");
  }
  if (vars.graph.size() != config.graph_layers) {
    throw ConfigError("registered graph layers do not match the config");
  }
  // Copy the shapes: tape.value() references are invalidated when later ops
  // grow the tape, and both shapes are needed again after the graph layers.
  const std::vector<std::size_t> target_shape = tape.value(x_t).shape();
  const std::vector<std::size_t> source_shape = tape.value(x_l).shape();
  if (target_shape.size() != 4 || source_shape.size() != 4 ||
      target_shape[0] != source_shape[0]) {
    throw ShapeError("enhancement expects paired [B,h,w,c] batches, got " +
                     shape_string(target_shape) + " and " +
                     shape_string(source_shape));
  }
  Var y_l = project_to_graph(tape, x_l, vars.project_weight);
  Var y_t = project_to_graph(tape, x_t, vars.project_weight);
  for (std::size_t i = 0; i < config.graph_layers; ++i) {
    const ModelVars::GraphLayer& g = vars.graph[i];
    y_l = graph_conv_step(tape, y_l, g.adj_source, g.w_source);
    y_t = graph_conv_step(tape, y_t, g.adj_target, g.w_target);
    if (config.fusion == Fusion::kFull) {
      const Var a_tr = transfer_matrix(tape, y_t, y_l, config.similarity);
      const Var y_i = intermediate_graph(tape, a_tr, y_l, g.w_inter);
      y_t = inter_graph_fusion(tape, y_t, y_i, y_l, g.w_fuse, g.b_fuse);
    }
  }
  EnhancedPair out;
  out.target = add(
      tape, x_t,
      reshape(tape, linear(tape, y_t, vars.reproject_weight), target_shape));
  out.source = add(
      tape, x_l,
      reshape(tape, linear(tape, y_l, vars.reproject_weight), source_shape));
  return out;
}

Var enhance_features(Tape& tape, Var x_t, Var x_l, const ModelVars& vars,
                     const ModelConfig& config) {
  return enhance_both(tape, x_t, x_l, vars, config).target;
}

Var classify(Tape& tape, Var features, const ModelVars& vars) {
  const Tensor& x = tape.value(features);
  if (x.rank() != 4) {
    throw ShapeError("classifier expects [B,r,r,c] features, got " +
                     shape_string(x.shape()));
  }
  const Var flat =
      reshape(tape, features, {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
  const Var h = relu(tape, linear(tape, flat, vars.cls_w1, vars.cls_b1));
  return linear(tape, h, vars.cls_w2, vars.cls_b2);
}

ForwardOutput model_forward(Tape& tape, Var target_batch, Var source_batch,
                            const ModelVars& vars, const ModelConfig& config,
                            Mode mode) {
  ForwardOutput out;
  if (!config.use_graph) {
    const Var x_t = backbone_forward(tape, target_batch, vars, mode);
    out.target_logits = classify(tape, x_t, vars);
    return out;
  }
  if (!source_batch.valid()) {
    throw ConfigError("graph-enabled forward requires a source batch");
  }
  // Source first, then target: fixes the batch-norm running-statistics
  // update order.
  const Var x_l = backbone_forward(tape, source_batch, vars, mode);
  const Var x_t = backbone_forward(tape, target_batch, vars, mode);
  const EnhancedPair enhanced = enhance_both(tape, x_t, x_l, vars, config);
  out.target_logits = classify(tape, enhanced.target, vars);
  out.source_logits = classify(tape, enhanced.source, vars);
  return out;
}

}  // namespace gks
