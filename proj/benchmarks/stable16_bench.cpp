#include <benchmark/benchmark.h>

#include <vector>

#include "stable16/binary16.hpp"
#include "stable16/optim.hpp"
#include "stable16/rng.hpp"
#include "stable16/tensor.hpp"

using namespace stable16;

namespace {

std::vector<F16> random_halves(std::size_t n, std::uint64_t seed) {
    Xoshiro256 rng(seed);
    std::vector<F16> out(n);
    for (auto& h : out) h = from_real(rng.uniform() * 4.0 - 2.0);
    return out;
}

template <TensorScalar T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed) {
    Xoshiro256 rng(seed);
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform() * 0.2 - 0.1;
    return Tensor<T>::from_reals(std::move(shape), v);
}

}  // namespace

static void BM_SoftfloatAdd(benchmark::State& state) {
    const auto a = random_halves(4096, 1), b = random_halves(4096, 2);
    for (auto _ : state) {
        for (std::size_t i = 0; i < a.size(); ++i) benchmark::DoNotOptimize(add(a[i], b[i]));
    }
    state.SetItemsProcessed(state.iterations() * a.size());
}
BENCHMARK(BM_SoftfloatAdd);

static void BM_SoftfloatMul(benchmark::State& state) {
    const auto a = random_halves(4096, 3), b = random_halves(4096, 4);
    for (auto _ : state) {
        for (std::size_t i = 0; i < a.size(); ++i) benchmark::DoNotOptimize(mul(a[i], b[i]));
    }
    state.SetItemsProcessed(state.iterations() * a.size());
}
BENCHMARK(BM_SoftfloatMul);

static void BM_SoftfloatDiv(benchmark::State& state) {
    const auto a = random_halves(4096, 5), b = random_halves(4096, 6);
    for (auto _ : state) {
        for (std::size_t i = 0; i < a.size(); ++i) benchmark::DoNotOptimize(div(a[i], b[i]));
    }
    state.SetItemsProcessed(state.iterations() * a.size());
}
BENCHMARK(BM_SoftfloatDiv);

// Fused multiply-then-add on the float grid path, as the matmul kernel runs it.
static void BM_GridMulAdd(benchmark::State& state) {
    const auto ha = random_halves(4096, 7), hb = random_halves(4096, 8);
    std::vector<float> a(ha.size()), b(hb.size()), acc(ha.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = grid::decode(ha[i]);
        b[i] = grid::decode(hb[i]);
    }
    for (auto _ : state) {
        for (std::size_t i = 0; i < a.size(); ++i) acc[i] = grid::add(acc[i], grid::mul(a[i], b[i]));
        benchmark::DoNotOptimize(acc.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(state.iterations() * a.size());
}
BENCHMARK(BM_GridMulAdd);

template <TensorScalar T>
static void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_tensor<T>({n, n}, 11);
    const auto b = random_tensor<T>({n, n}, 12);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul<F16>)->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<float>)->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<double>)->Arg(64)->Arg(256);

template <TensorScalar T>
static void BM_AdamStep(benchmark::State& state) {
    const ParamSet<T> params{random_tensor<T>({256, 784}, 21), random_tensor<T>({256, 1}, 22)};
    const ParamSet<T> grads{random_tensor<T>({256, 784}, 23), random_tensor<T>({256, 1}, 24)};
    const auto st = OptimState<T>::zeros_like(params, OptimizerKind::adam);
    HyperParams hp;
    hp.guard = state.range(0) != 0;
    for (auto _ : state) benchmark::DoNotOptimize(adam_step(params, grads, st, hp));
    state.SetItemsProcessed(state.iterations() * (256 * 784 + 256));
}
BENCHMARK(BM_AdamStep<F16>)->Arg(0)->Arg(1);
BENCHMARK(BM_AdamStep<float>)->Arg(0)->Arg(1);
BENCHMARK_MAIN();
