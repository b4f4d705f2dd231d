#include <benchmark/benchmark.h>

#include <random>

#include <corisk/evaluation.hpp>

namespace {

void make_scores(std::size_t n, std::vector<double>& s, std::vector<bool>& y) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  s.resize(n);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = u(rng);
    y[i] = u(rng) < s[i];
  }
}

void BM_RocAuc(benchmark::State& state) {
  std::vector<double> s;
  std::vector<bool> y;
  make_scores(static_cast<std::size_t>(state.range(0)), s, y);
  for (auto _ : state) benchmark::DoNotOptimize(corisk::roc_auc(s, y));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_RocAuc)->RangeMultiplier(4)->Range(256, 65536)->Complexity(benchmark::oNLogN);

void BM_BootstrapAuc(benchmark::State& state) {
  std::vector<double> s;
  std::vector<bool> y;
  make_scores(1500, s, y);
  for (auto _ : state) benchmark::DoNotOptimize(corisk::bootstrap_ci(s, y, corisk::roc_auc, 1000, 11));
}
BENCHMARK(BM_BootstrapAuc)->Unit(benchmark::kMillisecond);

}  // namespace
