#pragma once

#include <cstdint>
#include <vector>

#include "fox/config.hpp"
#include "fox/errors.hpp"
#include "fox/tensor.hpp"

namespace fox {

// Per-layer key/value history. Keys are stored post-rotation; layout is
// [n_kv_heads, capacity, head_dim] so one head's history is contiguous.
template <class T>
struct LayerKVT {
    TensorT<T> keys;
    TensorT<T> values;
    std::int64_t filled = 0;

    std::int64_t capacity() const { return keys.dim(1); }

    const T* key_row(std::int64_t kv_head, std::int64_t pos) const {
        return keys.data() + (kv_head * capacity() + pos) * keys.dim(2);
    }
    const T* value_row(std::int64_t kv_head, std::int64_t pos) const {
        return values.data() + (kv_head * capacity() + pos) * values.dim(2);
    }

    // Writes one position for one head; start position must line up with
    // the already-filled prefix (the caller advances `filled` once per
    // appended block via commit()).
    T* key_slot(std::int64_t kv_head, std::int64_t pos) {
        return keys.data() + (kv_head * capacity() + pos) * keys.dim(2);
    }
    T* value_slot(std::int64_t kv_head, std::int64_t pos) {
        return values.data() + (kv_head * capacity() + pos) * values.dim(2);
    }

    void commit(std::int64_t n) { filled += n; }
};

template <class T>
struct KVCacheT {
    std::vector<LayerKVT<T>> layers;

    KVCacheT() = default;

    KVCacheT(const ModelConfig& config, std::int64_t capacity) {
        if (capacity < 1 || capacity > config.max_seq_len)
            throw CapacityError("kv cache: capacity must be in [1, max_seq_len]");
        layers.resize(static_cast<std::size_t>(config.n_layers));
        for (auto& l : layers) {
            l.keys = TensorT<T>({config.n_kv_heads, capacity, config.head_dim});
            l.values = TensorT<T>({config.n_kv_heads, capacity, config.head_dim});
            l.filled = 0;
        }
    }

    std::int64_t filled() const { return layers.empty() ? 0 : layers.front().filled; }
    std::int64_t capacity() const { return layers.empty() ? 0 : layers.front().capacity(); }

    std::int64_t element_count() const {
        std::int64_t n = 0;
        for (const auto& l : layers) n += l.keys.size() + l.values.size();
        return n;
    }
};

using KVCache = KVCacheT<float>;

}  // namespace fox
