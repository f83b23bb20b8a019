#include "fox/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <queue>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace fox {

namespace {

inline std::uint64_t pack_pair(std::int32_t a, std::int32_t b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

inline bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Splits into maximal runs of whitespace / non-whitespace bytes. Merges
// never cross run boundaries.
template <class Fn>
void for_each_pretoken(std::string_view text, Fn&& fn) {
    std::size_t i = 0;
    while (i < text.size()) {
        const bool ws = is_space_byte(static_cast<unsigned char>(text[i]));
        std::size_t j = i + 1;
        while (j < text.size() && is_space_byte(static_cast<unsigned char>(text[j])) == ws) ++j;
        fn(text.substr(i, j - i));
        i = j;
    }
}

std::string to_hex(std::string_view bytes) {
    static const char* hexd = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char c : bytes) {
        out.push_back(hexd[c >> 4]);
        out.push_back(hexd[c & 0xf]);
    }
    return out;
}

std::string from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) throw std::invalid_argument("vocab: odd hex string");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::invalid_argument("vocab: bad hex digit");
    };
    std::string out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2)
        out.push_back(static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
    return out;
}

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::pair<std::string, std::string>>{}) {}

Vocab::Vocab(std::vector<std::pair<std::string, std::string>> merges)
    : merges_(std::move(merges)) {
    bytes_.resize(static_cast<std::size_t>(kBaseSize) + merges_.size());
    std::unordered_map<std::string, std::int32_t> id_of;
    id_of.reserve(bytes_.size());
    for (std::int32_t b = 0; b < 256; ++b) {
        bytes_[static_cast<std::size_t>(b)] = std::string(1, static_cast<char>(b));
        id_of[bytes_[static_cast<std::size_t>(b)]] = b;
    }
    for (std::size_t r = 0; r < merges_.size(); ++r) {
        const auto& [left, right] = merges_[r];
        auto li = id_of.find(left);
        auto ri = id_of.find(right);
        if (li == id_of.end() || ri == id_of.end())
            throw std::invalid_argument("vocab: merge refers to unknown token bytes");
        const std::int32_t id = kBaseSize + static_cast<std::int32_t>(r);
        bytes_[static_cast<std::size_t>(id)] = left + right;
        if (!id_of.emplace(bytes_[static_cast<std::size_t>(id)], id).second)
            throw std::invalid_argument("vocab: duplicate merged token");
        pair_rank_[pack_pair(li->second, ri->second)] = static_cast<std::int32_t>(r);
    }
}

const std::string& Vocab::token_bytes(std::int32_t id) const {
    if (id < 0 || id >= size()) throw std::invalid_argument("vocab: token id out of range");
    return bytes_[static_cast<std::size_t>(id)];
}

std::int32_t Vocab::merge_rank(std::int32_t left, std::int32_t right) const {
    auto it = pair_rank_.find(pack_pair(left, right));
    return it == pair_rank_.end() ? -1 : it->second;
}

std::int32_t Vocab::merged_id(std::int32_t left, std::int32_t right) const {
    const std::int32_t r = merge_rank(left, right);
    return r < 0 ? -1 : kBaseSize + r;
}

namespace {

// Applies learned merges to one pretoken, lowest rank first, occurrences
// replaced left to right.
void encode_word(std::string_view word, const Vocab& vocab, std::vector<std::int32_t>& out) {
    std::vector<std::int32_t> sym;
    sym.reserve(word.size());
    for (unsigned char c : word) sym.push_back(static_cast<std::int32_t>(c));
    while (sym.size() >= 2) {
        std::int32_t best_rank = -1;
        for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
            const std::int32_t r = vocab.merge_rank(sym[i], sym[i + 1]);
            if (r >= 0 && (best_rank < 0 || r < best_rank)) best_rank = r;
        }
        if (best_rank < 0) break;
        const std::int32_t new_id = Vocab::kBaseSize + best_rank;
        const auto& [lb, rb] = vocab.merges()[static_cast<std::size_t>(best_rank)];
        (void)lb;
        (void)rb;
        std::vector<std::int32_t> next;
        next.reserve(sym.size());
        for (std::size_t i = 0; i < sym.size();) {
            if (i + 1 < sym.size() && vocab.merge_rank(sym[i], sym[i + 1]) == best_rank) {
                next.push_back(new_id);
                i += 2;
            } else {
                next.push_back(sym[i]);
                ++i;
            }
        }
        sym.swap(next);
    }
    out.insert(out.end(), sym.begin(), sym.end());
}

}  // namespace

std::vector<std::int32_t> encode(std::string_view text, const Vocab& vocab, bool add_specials) {
    std::vector<std::int32_t> out;
    if (add_specials) out.push_back(Vocab::kBosId);
    for_each_pretoken(text, [&](std::string_view w) { encode_word(w, vocab, out); });
    if (add_specials) out.push_back(Vocab::kEosId);
    return out;
}

std::vector<std::int32_t> Encoder::encode(std::string_view text) {
    std::vector<std::int32_t> out;
    for_each_pretoken(text, [&](std::string_view w) {
        auto it = cache_.find(std::string(w));
        if (it == cache_.end()) {
            std::vector<std::int32_t> ids;
            encode_word(w, vocab_, ids);
            it = cache_.emplace(std::string(w), std::move(ids)).first;
        }
        out.insert(out.end(), it->second.begin(), it->second.end());
    });
    return out;
}

std::string decode(std::span<const std::int32_t> ids, const Vocab& vocab) {
    std::string out;
    for (std::int32_t id : ids) {
        if (id < 0 || id >= vocab.size())
            throw std::invalid_argument("decode: token id out of range");
        if (vocab.is_special(id)) continue;
        out += vocab.token_bytes(id);
    }
    return out;
}

Vocab bpe_train(std::string_view corpus, std::int64_t vocab_size) {
    if (corpus.empty()) throw std::invalid_argument("bpe_train: empty corpus");
    if (vocab_size < Vocab::kBaseSize)
        throw std::invalid_argument("bpe_train: vocab_size must be >= 259");

    // Distinct pretokens with counts, as byte-symbol sequences.
    std::unordered_map<std::string, std::int64_t> word_counts;
    for_each_pretoken(corpus, [&](std::string_view w) { ++word_counts[std::string(w)]; });

    struct Word {
        std::vector<std::int32_t> sym;
        std::int64_t count;
    };
    std::vector<Word> words;
    words.reserve(word_counts.size());
    // Sorted for reproducibility of word indices (cosmetic; counts are
    // order-independent anyway).
    std::vector<const std::string*> keys;
    keys.reserve(word_counts.size());
    for (const auto& [w, c] : word_counts) keys.push_back(&w);
    std::sort(keys.begin(), keys.end(), [](const auto* a, const auto* b) { return *a < *b; });
    for (const auto* k : keys) {
        Word w;
        w.count = word_counts[*k];
        w.sym.reserve(k->size());
        for (unsigned char c : *k) w.sym.push_back(static_cast<std::int32_t>(c));
        words.push_back(std::move(w));
    }

    std::vector<std::string> bytes_of(256);
    for (std::int32_t b = 0; b < 256; ++b) bytes_of[static_cast<std::size_t>(b)] = std::string(1, static_cast<char>(b));

    std::unordered_map<std::uint64_t, std::int64_t> pair_count;
    std::unordered_map<std::uint64_t, std::unordered_set<std::int32_t>> pair_words;

    auto add_pair = [&](std::int32_t a, std::int32_t b, std::int32_t widx, std::int64_t n) {
        const std::uint64_t key = pack_pair(a, b);
        pair_count[key] += n;
        pair_words[key].insert(widx);
    };
    for (std::size_t wi = 0; wi < words.size(); ++wi)
        for (std::size_t i = 0; i + 1 < words[wi].sym.size(); ++i)
            add_pair(words[wi].sym[i], words[wi].sym[i + 1], static_cast<std::int32_t>(wi),
                     words[wi].count);

    struct HeapEntry {
        std::int64_t count;
        std::string left, right;
        std::uint64_t key;
    };
    // Max count first; lexicographically smallest (left, right) among ties.
    auto cmp = [](const HeapEntry& a, const HeapEntry& b) {
        if (a.count != b.count) return a.count < b.count;
        return std::tie(a.left, a.right) > std::tie(b.left, b.right);
    };
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, decltype(cmp)> heap(cmp);
    auto push_pair = [&](std::uint64_t key) {
        auto it = pair_count.find(key);
        if (it == pair_count.end() || it->second < 2) return;
        const auto a = static_cast<std::int32_t>(key >> 32);
        const auto b = static_cast<std::int32_t>(key & 0xffffffffu);
        heap.push({it->second, bytes_of[static_cast<std::size_t>(a)],
                   bytes_of[static_cast<std::size_t>(b)], key});
    };
    for (const auto& [key, n] : pair_count)
        if (n >= 2) push_pair(key);

    std::vector<std::pair<std::string, std::string>> merges;
    std::int32_t next_id = Vocab::kBaseSize;

    while (next_id < vocab_size) {
        std::uint64_t best_key = 0;
        bool found = false;
        while (!heap.empty()) {
            const HeapEntry top = heap.top();
            heap.pop();
            auto it = pair_count.find(top.key);
            if (it == pair_count.end() || it->second != top.count || it->second < 2)
                continue;  // stale
            best_key = top.key;
            found = true;
            break;
        }
        if (!found) break;

        const auto left_id = static_cast<std::int32_t>(best_key >> 32);
        const auto right_id = static_cast<std::int32_t>(best_key & 0xffffffffu);
        merges.emplace_back(bytes_of[static_cast<std::size_t>(left_id)],
                            bytes_of[static_cast<std::size_t>(right_id)]);
        bytes_of.push_back(bytes_of[static_cast<std::size_t>(left_id)] +
                           bytes_of[static_cast<std::size_t>(right_id)]);
        const std::int32_t new_id = next_id++;

        std::unordered_set<std::uint64_t> touched;
        const auto affected = pair_words[best_key];  // copy: mutated below
        for (std::int32_t wi : affected) {
            Word& w = words[static_cast<std::size_t>(wi)];
            // Retract this word's pair contributions.
            for (std::size_t i = 0; i + 1 < w.sym.size(); ++i) {
                const std::uint64_t key = pack_pair(w.sym[i], w.sym[i + 1]);
                pair_count[key] -= w.count;
                pair_words[key].erase(wi);
                touched.insert(key);
            }
            // Replace occurrences left to right.
            std::vector<std::int32_t> next_sym;
            next_sym.reserve(w.sym.size());
            for (std::size_t i = 0; i < w.sym.size();) {
                if (i + 1 < w.sym.size() && w.sym[i] == left_id && w.sym[i + 1] == right_id) {
                    next_sym.push_back(new_id);
                    i += 2;
                } else {
                    next_sym.push_back(w.sym[i]);
                    ++i;
                }
            }
            w.sym.swap(next_sym);
            for (std::size_t i = 0; i + 1 < w.sym.size(); ++i) {
                const std::uint64_t key = pack_pair(w.sym[i], w.sym[i + 1]);
                pair_count[key] += w.count;
                pair_words[key].insert(wi);
                touched.insert(key);
            }
        }
        pair_count.erase(best_key);
        pair_words.erase(best_key);
        touched.erase(best_key);
        for (std::uint64_t key : touched) push_pair(key);
    }
    return Vocab(std::move(merges));
}

CompressionStats compression_stats(std::string_view corpus, const Vocab& vocab) {
    if (corpus.empty()) throw std::invalid_argument("compression_stats: empty corpus");
    Encoder enc(vocab);
    CompressionStats s;
    s.bytes = static_cast<std::int64_t>(corpus.size());
    s.tokens = static_cast<std::int64_t>(enc.encode(corpus).size());
    s.tokens_per_kib = static_cast<double>(s.tokens) / (static_cast<double>(s.bytes) / 1024.0);
    return s;
}

void save_vocab(const std::string& path, const Vocab& vocab) {
    nlohmann::json j;
    j["format"] = "fox-vocab";
    j["version"] = 1;
    j["specials"] = {{"bos", Vocab::kBosId}, {"eos", Vocab::kEosId}, {"pad", Vocab::kPadId}};
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [l, r] : vocab.merges()) merges.push_back({to_hex(l), to_hex(r)});
    j["merges"] = std::move(merges);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("vocab: cannot open for write: " + path);
    os << j.dump(1) << "\n";
    if (!os) throw std::runtime_error("vocab: write failed: " + path);
}

Vocab load_vocab(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("vocab: cannot open: " + path);
    nlohmann::json j = nlohmann::json::parse(is);
    if (j.at("format").get<std::string>() != "fox-vocab")
        throw std::runtime_error("vocab: unrecognized format tag");
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : j.at("merges"))
        merges.emplace_back(from_hex(m.at(0).get<std::string>()),
                            from_hex(m.at(1).get<std::string>()));
    return Vocab(std::move(merges));
}

}  // namespace fox
