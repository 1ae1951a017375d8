#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "powq/diagnostics.hpp"
#include "powq/fixture.hpp"

using namespace powq;

namespace {

Tensor random_weights(std::size_t out, std::size_t in, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(out * in);
  for (auto &x : v) x = rng.normal();
  return Tensor({out, in}, std::move(v));
}

Model bench_model() {
  static Model model = [] {
    const Dataset ds = generate_dataset(DatasetKind::kBlobs, 200, 3);
    TrainConfig tc;
    tc.epochs = 100;
    tc.seed = 3;
    return train_fixture({2, 16, 3}, ds, tc);
  }();
  return model;
}

}  // namespace

static void BM_QuantizeTensor(benchmark::State &state) {
  const Tensor w = random_weights(64, 64, 1);
  const BitWidth bits(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(quantize_tensor(w, QuantScheme::power(0.6), bits,
                                             Granularity::per_channel(0)));
  }
}
BENCHMARK(BM_QuantizeTensor);

static void BM_ReconstructionError(benchmark::State &state) {
  const Model model = fold_batchnorm(bench_model());
  const BitWidth bits(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reconstruction_error(
        model, QuantScheme::power(0.6), bits, Granularity::per_channel(0)));
  }
}
BENCHMARK(BM_ReconstructionError);

static void BM_FitExponentNelderMead(benchmark::State &state) {
  const Model model = fold_batchnorm(bench_model());
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        fit_exponent(model, BitWidth(4), Granularity::per_channel(0)));
  }
}
BENCHMARK(BM_FitExponentNelderMead);

static void BM_ForwardQuantized(benchmark::State &state) {
  const Model model = bench_model();
  const Dataset ds = generate_dataset(DatasetKind::kBlobs, 200, 3);
  QuantizeOptions opts;
  opts.bits_w = 4;
  opts.bits_a = 4;
  const QuantizeResult qr = quantize_model(model, opts, &ds);
  const Tensor x = ds.row(0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_quantized(qr.qmodel, x));
  }
}
BENCHMARK(BM_ForwardQuantized);

static void BM_IntPowerNewton(benchmark::State &state) {
  IntPowConfig cfg;
  for (auto _ : state) {
    for (std::uint32_t code = 1; code <= 255; ++code) {
      benchmark::DoNotOptimize(int_power_newton(code, 1.0 / 0.55, cfg));
    }
  }
}
BENCHMARK(BM_IntPowerNewton);

BENCHMARK_MAIN();
