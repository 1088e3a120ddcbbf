// Microbenchmarks for the hot paths: tape kernels, the graph enhancement
// stack, and the preclassification stage. Run with --benchmark_filter=...
#include <benchmark/benchmark.h>

#include <vector>

#include "gks/model.hpp"
#include "gks/preclassify.hpp"
#include "gks/rng.hpp"
#include "gks/synth.hpp"
#include "gks/tape.hpp"
#include "gks/tensor.hpp"

namespace {

gks::Tensor random_tensor(const std::vector<std::size_t>& shape,
                          gks::Rng& rng, double lo = -1.0, double hi = 1.0) {
  gks::Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i)
    t.data()[i] = rng.uniform(lo, hi);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  gks::Rng rng(1);
  const auto side = static_cast<std::size_t>(state.range(0));
  const gks::Tensor x = random_tensor({32, side, side, 3}, rng, 0.0, 1.0);
  const gks::Tensor k = random_tensor({3, 3, 3, 16}, rng);
  const gks::Tensor b = random_tensor({16}, rng);
  for (auto _ : state) {
    gks::Tape tape;
    const gks::Var y = gks::conv2d(tape, tape.leaf(x, "x"), tape.leaf(k, "k"),
                                   tape.leaf(b, "b"));
    benchmark::DoNotOptimize(tape.value(y).data());
  }
}
BENCHMARK(BM_Conv2dForward)->Arg(7)->Arg(13);

void BM_Conv2dTrainStep(benchmark::State& state) {
  gks::Rng rng(2);
  const gks::Tensor x = random_tensor({32, 7, 7, 3}, rng, 0.0, 1.0);
  const gks::Tensor k = random_tensor({3, 3, 3, 16}, rng);
  const gks::Tensor b = random_tensor({16}, rng);
  for (auto _ : state) {
    gks::Tape tape;
    const gks::Var kv = tape.leaf(k, "k");
    const gks::Var y = gks::conv2d(tape, tape.leaf(x, "x"), kv,
                                   tape.leaf(b, "b"));
    tape.backward(gks::sum_all(tape, y));
    benchmark::DoNotOptimize(tape.grad(kv).data());
  }
}
BENCHMARK(BM_Conv2dTrainStep);

void BM_Matmul(benchmark::State& state) {
  gks::Rng rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  const gks::Tensor a = random_tensor({n, n}, rng);
  const gks::Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    gks::Tape tape;
    const gks::Var y = gks::matmul(tape, tape.leaf(a, "a"), tape.leaf(b, "b"));
    benchmark::DoNotOptimize(tape.value(y).data());
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128);

void BM_EnhanceForward(benchmark::State& state) {
  gks::ModelConfig config;
  config.patch_side = 5;
  config.channels = 16;
  config.graph_dim = 8;
  config.graph_layers = 2;
  config.hidden = 16;
  gks::ModelParams params = gks::model_init(config, 4);
  gks::Rng rng(5);
  const gks::Tensor xt = random_tensor({8, 5, 5, 16}, rng, 0.0, 1.0);
  const gks::Tensor xl = random_tensor({8, 5, 5, 16}, rng, 0.0, 1.0);
  for (auto _ : state) {
    gks::Tape tape;
    const gks::ModelVars vars = gks::register_model(tape, params);
    const gks::EnhancedPair out = gks::enhance_both(
        tape, tape.leaf(xt, "xt"), tape.leaf(xl, "xl"), vars, config);
    benchmark::DoNotOptimize(tape.value(out.target).data());
  }
}
BENCHMARK(BM_EnhanceForward);

void BM_LogRatio(benchmark::State& state) {
  gks::SynthConfig cfg;
  cfg.height = 256;
  cfg.width = 256;
  cfg.seed = 6;
  const gks::ImagePair pair = gks::generate_synthetic_pair(cfg);
  for (auto _ : state) {
    const gks::DifferenceImage di = gks::log_ratio_di(pair);
    benchmark::DoNotOptimize(di.values.data());
  }
}
BENCHMARK(BM_LogRatio);

void BM_Preclassify(benchmark::State& state) {
  gks::SynthConfig cfg;
  cfg.height = 128;
  cfg.width = 128;
  cfg.seed = 7;
  const gks::ImagePair pair = gks::generate_synthetic_pair(cfg);
  const gks::DifferenceImage di = gks::log_ratio_di(pair);
  for (auto _ : state) {
    const gks::PreclassMap map = gks::hierarchical_preclassify(di, 0);
    benchmark::DoNotOptimize(map.labels.data());
  }
}
BENCHMARK(BM_Preclassify);

}  // namespace

BENCHMARK_MAIN();
