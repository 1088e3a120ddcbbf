#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "gks/error.hpp"
#include "gks/model.hpp"
#include "gks/rng.hpp"
#include "gks/tape.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using gks::Fusion;
using gks::Mode;
using gks::ModelConfig;
using gks::ModelParams;
using gks::ModelVars;
using gks::Rng;
using gks::Similarity;
using gks::Tape;
using gks::Tensor;
using gks::TrainableRef;
using gks::Var;
using testutil::bitwise_equal;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.patch_side = 3;
  c.channels = 4;
  c.graph_dim = 4;
  c.graph_layers = 2;
  c.hidden = 6;
  return c;
}

}  // namespace

TEST_CASE("model config validation and derived extents") {
  ModelConfig c;
  CHECK(c.mid_channels() == 64);
  CHECK(c.nodes() == 49);
  CHECK(c.flat_width() == 6272);  // 7 * 7 * 128
  CHECK_NOTHROW(c.validate());

  ModelConfig bad = c;
  bad.patch_side = 8;
  CHECK_THROWS_AS(bad.validate(), gks::ConfigError);
  bad = c;
  bad.patch_side = 1;
  CHECK_THROWS_AS(bad.validate(), gks::ConfigError);
  bad = c;
  bad.channels = 7;
  CHECK_THROWS_AS(bad.validate(), gks::ConfigError);
  bad = c;
  bad.graph_layers = 0;
  CHECK_THROWS_AS(bad.validate(), gks::ConfigError);
}

TEST_CASE("model_init determinism and initial structure") {
  const ModelConfig config = small_config();
  const ModelParams a = gks::model_init(config, 9);
  const ModelParams b = gks::model_init(config, 9);
  bool identical = true;
  std::vector<const Tensor*> at, bt;
  a.visit_state([&](const std::string&, const Tensor& t) { at.push_back(&t); });
  b.visit_state([&](const std::string&, const Tensor& t) { bt.push_back(&t); });
  REQUIRE(at.size() == bt.size());
  for (std::size_t i = 0; i < at.size(); ++i)
    identical &= bitwise_equal(*at[i], *bt[i]);
  CHECK(identical);

  const ModelParams other = gks::model_init(config, 10);
  CHECK(!bitwise_equal(other.backbone[0].kernel, a.backbone[0].kernel));

  // Biases zero, batch-norm affine identity, running stats (0, 1).
  for (const gks::ConvBlock& blk : a.backbone) {
    for (std::size_t i = 0; i < blk.bias.numel(); ++i)
      CHECK(blk.bias[i] == 0.0);
    for (std::size_t i = 0; i < blk.bn.gamma.numel(); ++i) {
      CHECK(blk.bn.gamma[i] == 1.0);
      CHECK(blk.bn.beta[i] == 0.0);
      CHECK(blk.bn.running_mean[i] == 0.0);
      CHECK(blk.bn.running_var[i] == 1.0);
    }
  }

  // Conv/linear weights bounded by 1/sqrt(fan_in).
  const double bound0 =
      1.0 / std::sqrt(3.0 * 3.0 * 3.0);  // 3x3 kernel over 3 input channels
  for (std::size_t i = 0; i < a.backbone[0].kernel.numel(); ++i)
    CHECK(std::abs(a.backbone[0].kernel[i]) <= bound0);

  // Adjacencies start within 0.05 of the identity in max norm.
  const std::size_t n = config.nodes();
  for (const gks::GraphLayerParams& layer : a.graph) {
    for (const Tensor* adj : {&layer.adj_source, &layer.adj_target}) {
      REQUIRE(adj->shape() == std::vector<std::size_t>{n, n});
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          worst = std::max(worst,
                           std::abs(adj->at(i, j) - (i == j ? 1.0 : 0.0)));
      CHECK(worst <= 0.05);
      CHECK(worst > 0.0);  // noise present, not exactly identity
    }
  }

  // Reprojection starts at exactly zero: enhancement begins as the identity.
  for (std::size_t i = 0; i < a.reproject_weight.numel(); ++i)
    CHECK(a.reproject_weight[i] == 0.0);
}

TEST_CASE("backbone output shape matches the reference layout") {
  ModelConfig config;  // defaults: r=7, c=128
  ModelParams params = gks::model_init(config, 1);
  Tape tape;
  const ModelVars vars = gks::register_model(tape, params);
  Rng rng(600);
  const Var batch = tape.leaf(rand_tensor({4, 7, 7, 3}, rng, 0.0, 1.0), "x");
  const Var out = gks::backbone_forward(tape, batch, vars, Mode::kTrain);
  CHECK(tape.value(out).shape() == std::vector<std::size_t>{4, 7, 7, 128});
}

TEST_CASE("register_model names follow the traversal order") {
  const ModelConfig config = small_config();
  ModelParams params = gks::model_init(config, 2);
  Tape tape;
  std::vector<TrainableRef> refs;
  gks::register_model(tape, params, &refs);

  std::vector<std::string> names;
  params.visit_trainable(
      [&](const std::string& n, const Tensor&) { names.push_back(n); });
  REQUIRE(refs.size() == names.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    CHECK(refs[i].name == names[i]);
    REQUIRE(refs[i].tensor != nullptr);
    CHECK(bitwise_equal(tape.value(refs[i].var), *refs[i].tensor));
  }
  CHECK(names.front() == "backbone1.kernel");
  CHECK(names.back() == "classifier.b2");
  // 5 backbone blocks x 4 tensors, projection, 2 layers x 7, reprojection,
  // 4 classifier tensors.
  CHECK(names.size() == 20 + 1 + 2 * 7 + 1 + 4);

  ModelConfig plain = config;
  plain.use_graph = false;
  ModelParams pp = gks::model_init(plain, 2);
  std::vector<TrainableRef> prefs;
  Tape tape2;
  gks::register_model(tape2, pp, &prefs);
  CHECK(prefs.size() == 24);  // graph tensors absent entirely
  for (const TrainableRef& r : prefs) {
    CHECK(r.name.find("graph") == std::string::npos);
    CHECK(r.name.find("project") == std::string::npos);
  }
}

TEST_CASE("project_to_graph flattens spatial positions row-major") {
  Tape tape;
  // 1x2x2x2 features with distinct values; identity projection keeps them.
  Tensor f({1, 2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) f[i] = double(i);
  Tensor eye({2, 2});
  eye.at(0, 0) = 1.0;
  eye.at(1, 1) = 1.0;
  const Var nodes = gks::project_to_graph(tape, tape.leaf(f, "f"),
                                          tape.leaf(eye, "w"));
  const Tensor& y = tape.value(nodes);
  REQUIRE(y.shape() == std::vector<std::size_t>{1, 4, 2});
  // Node k corresponds to spatial position (k / w, k % w).
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(y.at(0, k, c) == f[k * 2 + c]);
}

TEST_CASE("graph blocks match the reference loops") {
  Rng rng(601);
  const Tensor nodes = rand_tensor({2, 5, 3}, rng);
  const Tensor adj = rand_tensor({5, 5}, rng);
  const Tensor w = rand_tensor({3, 3}, rng);
  {
    Tape t;
    const Var y = gks::graph_conv_step(t, t.leaf(nodes, "n"),
                                       t.leaf(adj, "a"), t.leaf(w, "w"));
    CHECK(max_abs_diff(t.value(y), oracle::graph_conv_step(nodes, adj, w)) <
          1e-12);
  }
  const Tensor tgt = rand_tensor({2, 5, 3}, rng, 0.2, 1.0);
  const Tensor src = rand_tensor({2, 4, 3}, rng, 0.2, 1.0);
  for (Similarity sim : {Similarity::kCosine, Similarity::kGaussian}) {
    Tape t;
    const Var a_tr = gks::transfer_matrix(t, t.leaf(tgt, "t"),
                                          t.leaf(src, "s"), sim);
    const Tensor want =
        oracle::transfer_matrix(tgt, src, sim == Similarity::kCosine);
    CHECK(max_abs_diff(t.value(a_tr), want) < 1e-12);
    // Rows are probability distributions over source nodes.
    const Tensor& v = t.value(a_tr);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 4; ++j) sum += v.at(b, i, j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      }
  }
  {
    const Tensor a_tr = rand_tensor({2, 5, 4}, rng, 0.0, 1.0);
    const Tensor wi = rand_tensor({3, 3}, rng);
    Tape t;
    const Var y = gks::intermediate_graph(t, t.leaf(a_tr, "a"),
                                          t.leaf(src, "s"), t.leaf(wi, "w"));
    CHECK(max_abs_diff(t.value(y),
                       oracle::intermediate_graph(a_tr, src, wi)) < 1e-12);
  }
  {
    const Tensor yi = rand_tensor({2, 5, 3}, rng);
    const Tensor yl = rand_tensor({2, 5, 3}, rng);
    const Tensor wf = rand_tensor({9, 3}, rng);
    const Tensor bf = rand_tensor({3}, rng);
    Tape t;
    const Var y = gks::inter_graph_fusion(t, t.leaf(tgt, "t"),
                                          t.leaf(yi, "i"), t.leaf(yl, "l"),
                                          t.leaf(wf, "w"), t.leaf(bf, "b"));
    CHECK(max_abs_diff(t.value(y),
                       oracle::inter_graph_fusion(tgt, yi, yl, wf, bf)) <
          1e-12);
  }
  {
    // Node-count mismatch between the branches is a configuration problem.
    Tape t;
    const Var yt = t.leaf(rand_tensor({1, 4, 3}, rng), "t");
    const Var yi = t.leaf(rand_tensor({1, 4, 3}, rng), "i");
    const Var yl = t.leaf(rand_tensor({1, 5, 3}, rng), "l");
    const Var wf = t.leaf(rand_tensor({9, 3}, rng), "w");
    const Var bf = t.leaf(rand_tensor({3}, rng), "b");
    CHECK_THROWS_AS(gks::inter_graph_fusion(t, yt, yi, yl, wf, bf),
                    gks::ConfigError);
  }
}

TEST_CASE("zero reprojection makes enhancement the identity") {
  const ModelConfig config = small_config();
  ModelParams params = gks::model_init(config, 3);
  // model_init already zeroes reproject_weight; keep it that way and check
  // the documented consequence X_e == X_t bit for bit.
  Tape tape;
  const ModelVars vars = gks::register_model(tape, params);
  Rng rng(602);
  const Var x_t = tape.leaf(rand_tensor({2, 3, 3, 4}, rng), "xt");
  const Var x_l = tape.leaf(rand_tensor({2, 3, 3, 4}, rng), "xl");
  const gks::EnhancedPair out = gks::enhance_both(tape, x_t, x_l, vars,
                                                  config);
  CHECK(bitwise_equal(tape.value(out.target), tape.value(x_t)));
  CHECK(bitwise_equal(tape.value(out.source), tape.value(x_l)));
}

TEST_CASE("fusion none makes the target branch source-independent") {
  ModelConfig config = small_config();
  config.fusion = Fusion::kNone;
  ModelParams params = gks::model_init(config, 4);
  // Give the reprojection real weight so enhancement actually does work.
  Rng rng(603);
  testutil::fill_uniform(params.reproject_weight, rng, -0.5, 0.5);

  Rng data_rng(604);
  const Tensor xt = rand_tensor({2, 3, 3, 4}, data_rng);
  const Tensor xl_a = rand_tensor({2, 3, 3, 4}, data_rng);
  const Tensor xl_b = rand_tensor({2, 3, 3, 4}, data_rng);

  auto run = [&](const Tensor& xl) {
    Tape tape;
    ModelParams copy = params;
    const ModelVars vars = gks::register_model(tape, copy);
    const gks::EnhancedPair out = gks::enhance_both(
        tape, tape.leaf(xt, "xt"), tape.leaf(xl, "xl"), vars, config);
    return Tensor(tape.value(out.target));
  };
  const Tensor t_a = run(xl_a);
  const Tensor t_b = run(xl_b);
  CHECK(bitwise_equal(t_a, t_b));

  // Sanity: with fusion enabled the same change does propagate.
  ModelConfig fused = config;
  fused.fusion = Fusion::kFull;
  auto run_fused = [&](const Tensor& xl) {
    Tape tape;
    ModelParams copy = params;
    copy.config = fused;
    const ModelVars vars = gks::register_model(tape, copy);
    const gks::EnhancedPair out = gks::enhance_both(
        tape, tape.leaf(xt, "xt"), tape.leaf(xl, "xl"), vars, fused);
    return Tensor(tape.value(out.target));
  };
  CHECK(!bitwise_equal(run_fused(xl_a), run_fused(xl_b)));
}

TEST_CASE("source-only parameters get zero gradient without fusion or "
          "source loss") {
  ModelConfig config = small_config();
  config.fusion = Fusion::kNone;
  ModelParams params = gks::model_init(config, 5);
  Rng rng(605);
  testutil::fill_uniform(params.reproject_weight, rng, -0.5, 0.5);

  Tape tape;
  std::vector<TrainableRef> refs;
  const ModelVars vars = gks::register_model(tape, params, &refs);
  const Var target = tape.leaf(rand_tensor({2, 3, 3, 3}, rng, 0.0, 1.0), "t");
  const Var source = tape.leaf(rand_tensor({2, 3, 3, 3}, rng, 0.0, 1.0), "s");
  const gks::ForwardOutput out =
      gks::model_forward(tape, target, source, vars, config, Mode::kTrain);
  // Loss uses the target head only: weight 0 on the source loss.
  const Var loss = gks::cross_entropy(tape, out.target_logits, {0, 1});
  tape.backward(loss);

  for (const TrainableRef& r : refs) {
    const bool source_only = r.name.find("adj_source") != std::string::npos ||
                             r.name.find("w_source") != std::string::npos ||
                             r.name.find("w_inter") != std::string::npos ||
                             r.name.find("w_fuse") != std::string::npos ||
                             r.name.find("b_fuse") != std::string::npos;
    if (!source_only) continue;
    const Tensor& g = tape.grad(r.var);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.numel(); ++i)
      worst = std::max(worst, std::abs(g[i]));
    INFO(r.name);
    CHECK(worst == 0.0);
  }
  // Shared parameters do receive gradient.
  const Tensor& gk = tape.grad(refs.front().var);
  double total = 0.0;
  for (std::size_t i = 0; i < gk.numel(); ++i) total += std::abs(gk[i]);
  CHECK(total > 0.0);
}

TEST_CASE("model_forward shapes, modes, and the no-graph path") {
  const ModelConfig config = small_config();
  ModelParams params = gks::model_init(config, 6);
  Rng rng(606);
  const Tensor tgt = rand_tensor({3, 3, 3, 3}, rng, 0.0, 1.0);
  const Tensor src = rand_tensor({2, 3, 3, 3}, rng, 0.0, 1.0);
  {
    Tape tape;
    ModelParams copy = params;
    const ModelVars vars = gks::register_model(tape, copy);
    const gks::ForwardOutput out = gks::model_forward(
        tape, tape.leaf(tgt, "t"), tape.leaf(src, "s"), vars, config,
        Mode::kTrain);
    CHECK(tape.value(out.target_logits).shape() ==
          std::vector<std::size_t>{3, 2});
    CHECK(tape.value(out.source_logits).shape() ==
          std::vector<std::size_t>{2, 2});
  }
  {
    // Graph-enabled forward without a source batch is a config error.
    Tape tape;
    ModelParams copy = params;
    const ModelVars vars = gks::register_model(tape, copy);
    CHECK_THROWS_AS(gks::model_forward(tape, tape.leaf(tgt, "t"), Var{}, vars,
                                       config, Mode::kTrain),
                    gks::ConfigError);
  }
  {
    ModelConfig plain = config;
    plain.use_graph = false;
    ModelParams pp = gks::model_init(plain, 6);
    Tape tape;
    const ModelVars vars = gks::register_model(tape, pp);
    const gks::ForwardOutput out = gks::model_forward(
        tape, tape.leaf(tgt, "t"), Var{}, vars, plain, Mode::kTrain);
    CHECK(tape.value(out.target_logits).shape() ==
          std::vector<std::size_t>{3, 2});
    CHECK(!out.source_logits.valid());
  }
}

TEST_CASE("training forwards update running statistics source first") {
  const ModelConfig config = small_config();
  Rng rng(607);
  const Tensor tgt = rand_tensor({2, 3, 3, 3}, rng, 0.0, 1.0);
  const Tensor src = rand_tensor({2, 3, 3, 3}, rng, 0.0, 1.0);

  // Joint forward.
  ModelParams joint = gks::model_init(config, 7);
  {
    Tape tape;
    const ModelVars vars = gks::register_model(tape, joint);
    gks::model_forward(tape, tape.leaf(tgt, "t"), tape.leaf(src, "s"), vars,
                       config, Mode::kTrain);
  }
  // Manual sequence: source batch through the backbone, then target.
  ModelParams manual = gks::model_init(config, 7);
  {
    Tape tape;
    const ModelVars vars = gks::register_model(tape, manual);
    gks::backbone_forward(tape, tape.leaf(src, "s"), vars, Mode::kTrain);
    gks::backbone_forward(tape, tape.leaf(tgt, "t"), vars, Mode::kTrain);
  }
  for (std::size_t b = 0; b < joint.backbone.size(); ++b) {
    CHECK(bitwise_equal(joint.backbone[b].bn.running_mean,
                        manual.backbone[b].bn.running_mean));
    CHECK(bitwise_equal(joint.backbone[b].bn.running_var,
                        manual.backbone[b].bn.running_var));
  }
}

TEST_CASE("inference mode leaves running statistics untouched") {
  const ModelConfig config = small_config();
  ModelParams params = gks::model_init(config, 8);
  Rng rng(608);
  const Tensor tgt = rand_tensor({2, 3, 3, 3}, rng, 0.0, 1.0);
  const Tensor src = rand_tensor({2, 3, 3, 3}, rng, 0.0, 1.0);
  const Tensor mean_before = params.backbone[0].bn.running_mean;
  Tape tape;
  const ModelVars vars = gks::register_model(tape, params);
  gks::model_forward(tape, tape.leaf(tgt, "t"), tape.leaf(src, "s"), vars,
                     config, Mode::kInfer);
  CHECK(bitwise_equal(params.backbone[0].bn.running_mean, mean_before));
}
