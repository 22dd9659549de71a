// OpenMP kernels against their serial references. Set OMP_NUM_THREADS to
// compare thread counts.

#include <benchmark/benchmark.h>

#include <vector>

#include "repro/kernels/gemm.hpp"
#include "repro/kernels/im2col.hpp"
#include "repro/util/rng.hpp"

namespace {

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
  repro::Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

template <bool Reference>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Reference) {
      repro::kernels::gemm_reference(false, false, n, n, n, a.data(), b.data(), c.data(), false);
    } else {
      repro::kernels::gemm(false, false, n, n, n, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}

// ID adapter geometry: one log-mel map, 3x3 kernel, same padding.
template <bool Reference>
void BM_Im2col(benchmark::State& state) {
  repro::kernels::ConvGeometry g;
  g.channels = static_cast<std::size_t>(state.range(0));
  g.height = 64;
  g.width = 998;
  g.kernel_h = g.kernel_w = 3;
  g.padding = 1;
  const auto image = random_vector(g.channels * g.height * g.width, 3);
  std::vector<float> col(g.col_rows() * g.col_cols());
  for (auto _ : state) {
    if constexpr (Reference) {
      repro::kernels::im2col_reference(g, image.data(), col.data());
    } else {
      repro::kernels::im2col(g, image.data(), col.data());
    }
    benchmark::DoNotOptimize(col.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<int64_t>(col.size() * sizeof(float)));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/omp")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/reference")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Im2col<false>)->Name("im2col/omp")->Arg(1)->Arg(8);
BENCHMARK(BM_Im2col<true>)->Name("im2col/reference")->Arg(1)->Arg(8);

BENCHMARK_MAIN();
