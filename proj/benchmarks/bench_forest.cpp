#include <benchmark/benchmark.h>

#include <random>

#include <corisk/forest.hpp>

namespace {

corisk::DenseMatrix noisy_features(std::size_t rows, std::size_t cols, std::vector<double>& y) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  corisk::DenseMatrix x(rows, cols);
  y.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) x.at(r, c) = z(rng);
    y[r] = x.at(r, 0) - 0.5 * x.at(r, 1) * x.at(r, 2) + 0.1 * z(rng);
  }
  return x;
}

void BM_ForestFit(benchmark::State& state) {
  std::vector<double> y;
  const auto x = noisy_features(static_cast<std::size_t>(state.range(0)), 40, y);
  corisk::ForestConfig cfg;
  cfg.n_trees = 20;
  cfg.n_threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(corisk::Forest::fit_regression(x, y, cfg, 7));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForestFit)->Arg(500)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

void BM_ForestPredict(benchmark::State& state) {
  std::vector<double> y;
  const auto x = noisy_features(4000, 40, y);
  corisk::ForestConfig cfg;
  cfg.n_trees = 200;
  cfg.n_threads = 1;
  const auto forest = corisk::Forest::fit_regression(x, y, cfg, 7);
  std::size_t r = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(forest.predict(x.row(r)));
    r = (r + 1) % x.rows;
  }
}
BENCHMARK(BM_ForestPredict);

}  // namespace
