#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "fox/hash.hpp"

namespace fox {

// Probabilistic set-membership filter: zero false negatives, tunable
// false-positive rate. Uses double hashing g_i = h1 + i*h2 over the bit
// array.
class BloomFilter {
public:
    // Standard sizing: bit_count = ceil(-n ln(p) / ln(2)^2),
    // hash_count = round(bit_count / n * ln 2), both floored at 1.
    static BloomFilter with_capacity(std::int64_t capacity, double target_fp) {
        if (capacity < 1) throw std::invalid_argument("bloom: capacity must be >= 1");
        if (!(target_fp > 0.0 && target_fp < 1.0))
            throw std::invalid_argument("bloom: target_fp must be in (0, 1)");
        const double ln2 = std::log(2.0);
        auto bits = static_cast<std::int64_t>(
            std::ceil(-static_cast<double>(capacity) * std::log(target_fp) / (ln2 * ln2)));
        if (bits < 1) bits = 1;
        auto hashes = static_cast<std::int64_t>(
            std::llround(static_cast<double>(bits) / static_cast<double>(capacity) * ln2));
        if (hashes < 1) hashes = 1;
        return BloomFilter(bits, hashes);
    }

    BloomFilter(std::int64_t bit_count, std::int64_t hash_count)
        : bit_count_(bit_count),
          hash_count_(hash_count),
          words_(static_cast<std::size_t>((bit_count + 63) / 64), 0) {
        if (bit_count < 1 || hash_count < 1)
            throw std::invalid_argument("bloom: bit_count and hash_count must be >= 1");
    }

    std::int64_t bit_count() const { return bit_count_; }
    std::int64_t hash_count() const { return hash_count_; }
    std::int64_t inserted() const { return inserted_; }

    bool contains(std::string_view key) const {
        std::uint64_t h1, h2;
        seed(key, h1, h2);
        for (std::int64_t i = 0; i < hash_count_; ++i)
            if (!get(index(h1, h2, i))) return false;
        return true;
    }

    void insert(std::string_view key) {
        std::uint64_t h1, h2;
        seed(key, h1, h2);
        for (std::int64_t i = 0; i < hash_count_; ++i) set(index(h1, h2, i));
        ++inserted_;
    }

    // Returns whether the key tested as already present, inserting it
    // otherwise. The single-pass form the dedup path uses.
    bool test_and_insert(std::string_view key) {
        std::uint64_t h1, h2;
        seed(key, h1, h2);
        bool present = true;
        for (std::int64_t i = 0; i < hash_count_; ++i) {
            const std::uint64_t idx = index(h1, h2, i);
            if (!get(idx)) {
                present = false;
                set(idx);
            }
        }
        if (!present) ++inserted_;
        return present;
    }

    // Analytic false-positive probability at the current fill level.
    double predicted_fp_rate() const {
        const double k = static_cast<double>(hash_count_);
        const double load = k * static_cast<double>(inserted_) / static_cast<double>(bit_count_);
        return std::pow(1.0 - std::exp(-load), k);
    }

private:
    void seed(std::string_view key, std::uint64_t& h1, std::uint64_t& h2) const {
        h1 = fnv1a64(key);
        h2 = splitmix64(h1) | 1ull;
    }
    std::uint64_t index(std::uint64_t h1, std::uint64_t h2, std::int64_t i) const {
        return (h1 + static_cast<std::uint64_t>(i) * h2) % static_cast<std::uint64_t>(bit_count_);
    }
    bool get(std::uint64_t idx) const { return (words_[idx >> 6] >> (idx & 63)) & 1ull; }
    void set(std::uint64_t idx) { words_[idx >> 6] |= 1ull << (idx & 63); }

    std::int64_t bit_count_;
    std::int64_t hash_count_;
    std::int64_t inserted_ = 0;
    std::vector<std::uint64_t> words_;
};

}  // namespace fox
