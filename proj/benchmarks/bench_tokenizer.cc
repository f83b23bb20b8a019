#include <benchmark/benchmark.h>

#include "fox/tokenizer.hpp"

namespace {

std::string sample_text() {
    std::string s;
    for (int i = 0; i < 2000; ++i)
        s += "the quick onyx goblin jumps over the lazy dwarf near the old mill ";
    return s;
}

void BM_BpeTrain(benchmark::State& state) {
    const std::string corpus = sample_text();
    for (auto _ : state) {
        auto vocab = fox::bpe_train(corpus, state.range(0));
        benchmark::DoNotOptimize(vocab.size());
    }
}
BENCHMARK(BM_BpeTrain)->Arg(300)->Arg(512);

void BM_Encode(benchmark::State& state) {
    const std::string corpus = sample_text();
    const auto vocab = fox::bpe_train(corpus, 512);
    fox::Encoder enc(vocab);
    for (auto _ : state) {
        auto ids = enc.encode(corpus);
        benchmark::DoNotOptimize(ids.size());
    }
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(corpus.size()));
}
BENCHMARK(BM_Encode);

}  // namespace
