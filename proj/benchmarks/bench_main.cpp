#include <benchmark/benchmark.h>

// The distro's benchmark_main archive carries LTO bytecode from another
// compiler release, so the entry point lives here.
int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
