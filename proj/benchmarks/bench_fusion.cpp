#include <benchmark/benchmark.h>

#include <random>

#include <corisk/features.hpp>
#include <corisk/fusion_model.hpp>

namespace {

// Single-record latency for the default architecture with one chest image.
void BM_FusionForward(benchmark::State& state) {
  using namespace corisk;
  const FeatureSchema schema = fusion_feature_schema(16);
  FusionArchitecture arch;
  arch.image_size = static_cast<std::size_t>(state.range(0));
  const FusionModel model(schema, arch, Standardization::fit(DenseMatrix(2, schema.continuous_features.size())),
                          FusionModelParams::initialize(schema, arch, 5));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  EhrInput rec;
  for (std::size_t j = 0; j < schema.continuous_features.size(); ++j) rec.continuous.push_back(u(rng));
  for (const auto& c : schema.categorical_features) rec.categorical.push_back(static_cast<int>(rng() % c.cardinality));
  ChestImage img;
  img.image.width = img.image.height = arch.image_size;
  for (std::size_t p = 0; p < arch.image_size * arch.image_size; ++p) img.image.pixels.push_back(u(rng));
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(rec, &img));
}
BENCHMARK(BM_FusionForward)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

}  // namespace
