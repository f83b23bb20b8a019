#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fox {

// Byte-level BPE vocabulary. Ids 0..255 are the raw bytes, 256..258 the
// specials, merged tokens follow in learned order, so ids are dense in
// [0, size()). Immutable once built; encode/decode are pure.
class Vocab {
public:
    static constexpr std::int32_t kBosId = 256;
    static constexpr std::int32_t kEosId = 257;
    static constexpr std::int32_t kPadId = 258;
    static constexpr std::int32_t kBaseSize = 259;

    Vocab();
    // merges: ordered (left bytes, right bytes) pairs.
    explicit Vocab(std::vector<std::pair<std::string, std::string>> merges);

    std::int32_t size() const { return kBaseSize + static_cast<std::int32_t>(merges_.size()); }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

    bool is_special(std::int32_t id) const { return id >= 256 && id < kBaseSize; }

    // Byte sequence of a non-special token (single byte or merged string).
    const std::string& token_bytes(std::int32_t id) const;

    // Rank of a candidate (left_id, right_id) merge, or -1.
    std::int32_t merge_rank(std::int32_t left, std::int32_t right) const;
    std::int32_t merged_id(std::int32_t left, std::int32_t right) const;

private:
    std::vector<std::pair<std::string, std::string>> merges_;
    std::vector<std::string> bytes_;  // id -> bytes (specials map to "")
    std::unordered_map<std::uint64_t, std::int32_t> pair_rank_;  // packed id pair -> rank
};

// Greedy highest-frequency pair merging over a whitespace-pretokenized
// corpus until vocab_size ids exist or no pair occurs twice. Ties break on
// the lexicographically smallest (left bytes, right bytes) pair.
Vocab bpe_train(std::string_view corpus, std::int64_t vocab_size);

std::vector<std::int32_t> encode(std::string_view text, const Vocab& vocab, bool add_specials);
std::string decode(std::span<const std::int32_t> ids, const Vocab& vocab);

// Word-caching encoder for bulk corpus tokenization.
class Encoder {
public:
    explicit Encoder(const Vocab& vocab) : vocab_(vocab) {}
    std::vector<std::int32_t> encode(std::string_view text);

private:
    const Vocab& vocab_;
    std::unordered_map<std::string, std::vector<std::int32_t>> cache_;
};

struct CompressionStats {
    std::int64_t tokens = 0;
    std::int64_t bytes = 0;
    double tokens_per_kib = 0.0;
};

CompressionStats compression_stats(std::string_view corpus, const Vocab& vocab);

void save_vocab(const std::string& path, const Vocab& vocab);
Vocab load_vocab(const std::string& path);

}  // namespace fox
