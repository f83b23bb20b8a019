#include <benchmark/benchmark.h>

#include "fox/model.hpp"
#include "fox/ops.hpp"
#include "fox/rng.hpp"

namespace {

void BM_Matmul(benchmark::State& state) {
    const std::int64_t rows = 256, in = 256, out = state.range(0);
    std::vector<float> x(static_cast<std::size_t>(rows * in));
    std::vector<float> w(static_cast<std::size_t>(in * out));
    std::vector<float> y(static_cast<std::size_t>(rows * out));
    fox::RandomSource rng(1);
    for (auto& v : x) v = static_cast<float>(rng.next_normal());
    for (auto& v : w) v = static_cast<float>(rng.next_normal());
    for (auto _ : state) {
        fox::matmul(x.data(), w.data(), y.data(), rows, in, out);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * rows * in * out);
}
BENCHMARK(BM_Matmul)->Arg(704)->Arg(8192);

void BM_RmsNorm(benchmark::State& state) {
    fox::TensorT<float> x({512, 256});
    fox::TensorT<float> w({256});
    w.fill(1.0f);
    fox::RandomSource rng(2);
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.next_normal());
    for (auto _ : state) {
        auto y = fox::rms_norm(x, w, 1e-6);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_RmsNorm);

void BM_ToyForward(benchmark::State& state) {
    const fox::ModelConfig c = fox::preset_config("fox1-toy");
    const auto params = fox::init_parameters<float>(c, 1);
    const auto out_t = fox::build_output_transpose(params, c);
    std::vector<std::int32_t> tokens(static_cast<std::size_t>(state.range(0)));
    fox::RandomSource rng(3);
    for (auto& t : tokens)
        t = static_cast<std::int32_t>(rng.next_below(static_cast<std::uint64_t>(c.vocab_size)));
    for (auto _ : state) {
        auto logits = fox::forward<float>(tokens, params, c, nullptr, &out_t);
        benchmark::DoNotOptimize(logits.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ToyForward)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
