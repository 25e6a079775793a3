// Serial reference vs OpenMP kernels. Argument is the particle count.

#include <random>

#include <benchmark/benchmark.h>

#include "steinflow/serial.hpp"

using namespace steinflow;

namespace {

ParticleMatrix states(Eigen::Index n, Eigen::Index d)
{
    std::mt19937_64 rng(42);
    std::normal_distribution<double> normal(0.0, 2.0);
    ParticleMatrix out(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) {
            out(i, k) = normal(rng);
        }
    }
    return out;
}

const KernelConfig kKernel{1.0, BandwidthPolicy::fixed(1.0)};

void BM_gram_serial(benchmark::State& st)
{
    const ParticleMatrix s = states(st.range(0), 3);
    for (auto _ : st) {
        benchmark::DoNotOptimize(serial::gram(s, kKernel));
    }
}

void BM_gram_omp(benchmark::State& st)
{
    const ParticleMatrix s = states(st.range(0), 3);
    for (auto _ : st) {
        benchmark::DoNotOptimize(gram(s, kKernel));
    }
}

void BM_kl_gradient_serial(benchmark::State& st)
{
    const ParticleMatrix s = states(st.range(0), 3);
    const ParticleMatrix g = -s;
    for (auto _ : st) {
        benchmark::DoNotOptimize(serial::kl_gradient(s, g, kKernel));
    }
}

void BM_kl_gradient_omp(benchmark::State& st)
{
    const ParticleMatrix s = states(st.range(0), 3);
    const ParticleMatrix g = -s;
    for (auto _ : st) {
        benchmark::DoNotOptimize(kl_gradient(s, g, kKernel));
    }
}

// Normalized RKHS backend on Lorenz-63 sized states.
const ObservationModel kModel(AbsoluteOperator{}, Matrix::Identity(3, 3) * 0.5, Backend::RKHSNormalized);

void BM_likelihood_serial(benchmark::State& st)
{
    const ParticleMatrix s = states(st.range(0), 3);
    const EnsembleEvaluations ev = serial::evaluate_ensemble(kModel, s);
    const Vector y = Vector::Constant(3, 2.0);
    for (auto _ : st) {
        benchmark::DoNotOptimize(serial::likelihood_gradients(kModel, ev, y, kKernel));
    }
}

void BM_likelihood_omp(benchmark::State& st)
{
    const ParticleMatrix s = states(st.range(0), 3);
    const EnsembleEvaluations ev = evaluate_ensemble(kModel, s);
    const Vector y = Vector::Constant(3, 2.0);
    for (auto _ : st) {
        const Gram g = gram(s, kKernel);
        benchmark::DoNotOptimize(likelihood_gradients(kModel, ev, y, g));
    }
}

}  // namespace

BENCHMARK(BM_gram_serial)->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK(BM_gram_omp)->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK(BM_kl_gradient_serial)->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK(BM_kl_gradient_omp)->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK(BM_likelihood_serial)->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK(BM_likelihood_omp)->RangeMultiplier(4)->Range(64, 1024);

BENCHMARK_MAIN();
