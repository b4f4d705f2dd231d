#include <benchmark/benchmark.h>

#include <random>

#include <corisk/imputation.hpp>

namespace {

void BM_Impute(benchmark::State& state) {
  using namespace corisk;
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<FeatureColumn> cols;
  for (int j = 0; j < 12; ++j) cols.push_back({"c" + std::to_string(j), ColumnKind::Continuous, 0});
  FeatureMatrix m(cols, n);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z;
  std::bernoulli_distribution drop(0.2);
  for (std::size_t r = 0; r < n; ++r) {
    const double a = z(rng);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (drop(rng)) m.set_missing(r, c);
      else m.set(r, c, a * static_cast<double>(c % 3) + z(rng));
    }
  }
  ImputeConfig cfg;
  cfg.max_iters = 3;
  cfg.forest.n_trees = 10;
  cfg.forest.n_threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(impute(m, cfg, 1));
}
BENCHMARK(BM_Impute)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

}  // namespace
