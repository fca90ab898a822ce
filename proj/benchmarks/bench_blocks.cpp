#include <benchmark/benchmark.h>

#include "revgnn/dataset.hpp"
#include "revgnn/train.hpp"

using namespace revgnn;

namespace {

Dataset block_data(index_t n) {
  SbmSpec spec;
  spec.num_nodes = n;
  spec.num_classes = 4;
  spec.p_in = 8.0 / static_cast<double>(n);
  spec.p_out = 2.0 / static_cast<double>(n);
  spec.feature_dim = 8;
  spec.feature_noise = 0.5;
  spec.seed = 21;
  Dataset d = gen_sbm(spec);
  d.graph = add_self_loops(d.graph);
  return d;
}

ModelConfig block_cfg(Arch arch, index_t layers) {
  ModelConfig cfg;
  cfg.arch = arch;
  cfg.op = Operator::gen;
  cfg.agg = AggKind::max;
  cfg.layers = layers;
  cfg.channels = 64;
  cfg.groups = 2;
  cfg.dropout = 0.1;
  return cfg;
}

// One full training step (forward, loss, backward) per iteration.
void BM_train_step(benchmark::State& state, Arch arch) {
  const auto layers = static_cast<index_t>(state.range(0));
  Dataset data = block_data(1024);
  ModelConfig cfg = block_cfg(arch, layers);
  ModelParams<float> params = build_model<float>(cfg, data.features.cols(), 0, data.num_classes, 3);
  Mat<float> x = cast_mat<float>(data.features);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto result = model_backward(params, data.graph, x, data.labels, LossKind::softmax_ce, seed++);
    benchmark::DoNotOptimize(result.loss);
  }
  state.SetItemsProcessed(state.iterations() * data.graph.num_nodes * layers);
}

void BM_rev_step(benchmark::State& state) { BM_train_step(state, Arch::rev); }
void BM_res_step(benchmark::State& state) { BM_train_step(state, Arch::res); }

BENCHMARK(BM_rev_step)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_res_step)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_deq_step(benchmark::State& state) {
  Dataset data = block_data(1024);
  ModelConfig cfg = block_cfg(Arch::deq, 1);
  cfg.deq_max_iter = static_cast<index_t>(state.range(0));
  ModelParams<float> params = build_model<float>(cfg, data.features.cols(), 0, data.num_classes, 3);
  Mat<float> x = cast_mat<float>(data.features);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto result = model_backward(params, data.graph, x, data.labels, LossKind::softmax_ce, seed++);
    benchmark::DoNotOptimize(result.loss);
  }
}
BENCHMARK(BM_deq_step)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
