#include <benchmark/benchmark.h>

#include "revgnn/kernels.hpp"

using namespace revgnn;

namespace {

CsrGraph bench_graph(index_t n, index_t degree) {
  Rng rng(7);
  EdgeList edges;
  for (index_t u = 0; u < n; ++u) {
    edges.emplace_back(u, u);
    for (index_t k = 0; k < degree; ++k)
      edges.emplace_back(static_cast<index_t>(rng.uniform_int(static_cast<std::uint64_t>(n))), u);
  }
  return build_csr(edges, n);
}

Mat<float> bench_mat(index_t rows, index_t cols) {
  Rng rng(11);
  Mat<float> m(rows, cols);
  for (index_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  return m;
}

void BM_linear(benchmark::State& state) {
  const auto n = static_cast<index_t>(state.range(0));
  const index_t d = 64;
  Mat<float> x = bench_mat(n, d);
  LinearParams<float> p;
  p.weight = bench_mat(d, d);
  p.bias = bench_mat(1, d);
  for (auto _ : state) {
    Mat<float> y = linear(x, p);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * n * d * d);
}
BENCHMARK(BM_linear)->Arg(1024)->Arg(4096);

void BM_aggregate_max(benchmark::State& state) {
  const auto n = static_cast<index_t>(state.range(0));
  CsrGraph g = bench_graph(n, 8);
  Mat<float> x = bench_mat(n, 64);
  Mat<float> none;
  AggSpec<float> spec;
  spec.kind = AggKind::max;
  AggCache cache;
  for (auto _ : state) {
    Mat<float> y = aggregate(g, x, none, spec, &cache);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * g.num_edges() * 64);
}
BENCHMARK(BM_aggregate_max)->Arg(1024)->Arg(4096);

void BM_aggregate_sum_weighted(benchmark::State& state) {
  const auto n = static_cast<index_t>(state.range(0));
  CsrGraph g = bench_graph(n, 8);
  std::vector<double> wd = gcn_norm_weights(g);
  std::vector<float> w(wd.begin(), wd.end());
  Mat<float> x = bench_mat(n, 64);
  Mat<float> none;
  AggSpec<float> spec;
  spec.edge_weights = &w;
  for (auto _ : state) {
    Mat<float> y = aggregate(g, x, none, spec);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * g.num_edges() * 64);
}
BENCHMARK(BM_aggregate_sum_weighted)->Arg(1024)->Arg(4096);

void BM_layer_norm(benchmark::State& state) {
  const auto n = static_cast<index_t>(state.range(0));
  Mat<float> x = bench_mat(n, 64);
  NormParams<float> p;
  p.scale = bench_mat(1, 64);
  p.shift = bench_mat(1, 64);
  for (auto _ : state) {
    Mat<float> y = layer_norm(x, p);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * n * 64);
}
BENCHMARK(BM_layer_norm)->Arg(1024)->Arg(4096);

}  // namespace
