#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fox {

// One model-sized window of a packed sample with shifted next-token targets.
// Positions whose input or target is the pad id carry weight 0; the last
// position of the sample has no target and also carries weight 0.
struct TrainingWindow {
    std::span<const std::int32_t> tokens;
    std::vector<std::int32_t> targets;
    std::vector<float> weights;
    std::int64_t valid = 0;
};

// Splits a packed sample into consecutive windows of at most max_seq_len
// tokens. Targets cross window boundaries but never sample boundaries.
template <class Fn>
void for_each_training_window(std::span<const std::int32_t> sample, std::int64_t max_seq_len,
                              std::int32_t pad_id, Fn&& fn) {
    const std::int64_t len = static_cast<std::int64_t>(sample.size());
    for (std::int64_t a = 0; a < len; a += max_seq_len) {
        const std::int64_t b = std::min(a + max_seq_len, len);
        TrainingWindow w;
        w.tokens = sample.subspan(static_cast<std::size_t>(a), static_cast<std::size_t>(b - a));
        w.targets.resize(static_cast<std::size_t>(b - a), 0);
        w.weights.resize(static_cast<std::size_t>(b - a), 0.0f);
        for (std::int64_t i = a; i < b; ++i) {
            if (i + 1 >= len) break;
            const std::int32_t tgt = sample[static_cast<std::size_t>(i + 1)];
            w.targets[static_cast<std::size_t>(i - a)] = tgt;
            if (tgt != pad_id && sample[static_cast<std::size_t>(i)] != pad_id) {
                w.weights[static_cast<std::size_t>(i - a)] = 1.0f;
                ++w.valid;
            }
        }
        fn(w);
    }
}

}  // namespace fox
