#pragma once

#include <cstdint>
#include <string>

namespace fox {

// Deterministic synthetic corpus for desk-scale runs: per-source JSONL
// document files for all three curriculum stages, a held-out evaluation
// file, and the matching curriculum manifest. Same seed, same bytes.
struct CorpusSpec {
    std::string out_dir;
    double scale = 1.0;  // multiplies per-source document counts
    std::uint64_t seed = 74;
};

struct CorpusPaths {
    std::string manifest;
    std::string heldout;
    std::string tokenizer_corpus;  // concatenated text for bpe training
};

CorpusPaths make_toy_corpus(const CorpusSpec& spec);

}  // namespace fox
