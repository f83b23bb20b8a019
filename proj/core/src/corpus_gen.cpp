#include "fox/corpus_gen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "fox/hash.hpp"
#include "fox/rng.hpp"

namespace fox {

namespace {

enum class Style { Prose, LongProse, Code, Math, Qa };

struct SourceProfile {
    std::string name;
    std::string file;       // path relative to out_dir
    Style style;
    std::int64_t target_chars;
    double dup_rate;        // fraction of exact-duplicate documents
    double weight_percent;  // stage mixture weight (0 = not in a stage)
};

// Fixed word bank drawn from syllables; rank order doubles as frequency
// order for the Zipf draw.
std::vector<std::string> build_word_bank() {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                   "p", "r", "s", "t", "v", "z", "st", "tr"};
    static const char* nuclei[] = {"a", "e", "i", "o", "u", "ar", "en", "or"};
    std::vector<std::string> syll;
    for (const char* o : onsets)
        for (const char* n : nuclei) syll.push_back(std::string(o) + n);
    std::vector<std::string> words;
    RandomSource rng(12021);
    while (words.size() < 900) {
        const int parts = 1 + static_cast<int>(rng.next_below(3));
        std::string w;
        for (int i = 0; i < parts; ++i)
            w += syll[static_cast<std::size_t>(rng.next_below(syll.size()))];
        words.push_back(std::move(w));
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    RandomSource order(977);
    order.shuffle(words);
    return words;
}

class TextSampler {
public:
    explicit TextSampler(std::uint64_t seed) : rng_(seed) {
        static const std::vector<std::string> bank = build_word_bank();
        bank_ = &bank;
        cumulative_.resize(bank.size());
        double acc = 0.0;
        for (std::size_t r = 0; r < bank.size(); ++r) {
            acc += 1.0 / std::pow(static_cast<double>(r + 1), 1.08);
            cumulative_[r] = acc;
        }
    }

    const std::string& word() {
        const double u = rng_.next_uniform() * cumulative_.back();
        const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
        return (*bank_)[static_cast<std::size_t>(it - cumulative_.begin())];
    }

    std::string number() { return std::to_string(rng_.next_below(1000)); }

    std::string sentence(Style style) {
        const std::size_t n = 4 + rng_.next_below(9);
        std::string s;
        for (std::size_t i = 0; i < n; ++i) {
            std::string w = (style == Style::Math && rng_.next_below(5) == 0) ? number() : word();
            if (i == 0 && !w.empty()) w[0] = static_cast<char>(std::toupper(w[0]));
            if (i) s += ' ';
            s += w;
        }
        if (style == Style::Math && rng_.next_below(3) == 0)
            s += " = " + number() + " + " + number();
        s += rng_.next_below(12) == 0 ? "?" : ".";
        return s;
    }

    std::string code_line() {
        switch (rng_.next_below(4)) {
            case 0: return "fn " + word() + "(" + word() + ") {";
            case 1: return "    let " + word() + " = " + number() + ";";
            case 2: return "    " + word() + "(" + word() + ", " + number() + ");";
            default: return "}";
        }
    }

    std::string document(Style style) {
        std::string text;
        switch (style) {
            case Style::Prose: {
                const std::size_t n = 3 + rng_.next_below(9);
                for (std::size_t i = 0; i < n; ++i) {
                    if (i) text += ' ';
                    text += sentence(style);
                }
                break;
            }
            case Style::LongProse: {
                const std::size_t paragraphs = 4 + rng_.next_below(6);
                for (std::size_t p = 0; p < paragraphs; ++p) {
                    if (p) text += "\n\n";
                    const std::size_t n = 6 + rng_.next_below(8);
                    for (std::size_t i = 0; i < n; ++i) {
                        if (i) text += ' ';
                        text += sentence(Style::Prose);
                    }
                }
                break;
            }
            case Style::Code: {
                const std::size_t n = 8 + rng_.next_below(25);
                for (std::size_t i = 0; i < n; ++i) {
                    if (i) text += '\n';
                    text += code_line();
                }
                break;
            }
            case Style::Math: {
                const std::size_t n = 4 + rng_.next_below(9);
                for (std::size_t i = 0; i < n; ++i) {
                    if (i) text += ' ';
                    text += sentence(style);
                }
                break;
            }
            case Style::Qa: {
                const std::size_t turns = 1 + rng_.next_below(3);
                for (std::size_t t = 0; t < turns; ++t) {
                    if (t) text += '\n';
                    std::string q = sentence(Style::Prose);
                    q.back() = '?';
                    text += "Q: " + q + "\nA: " + sentence(Style::Prose) + " " +
                            sentence(Style::Prose);
                }
                break;
            }
        }
        return text;
    }

    RandomSource& rng() { return rng_; }

private:
    const std::vector<std::string>* bank_;
    std::vector<double> cumulative_;
    RandomSource rng_;
};

std::int64_t write_source_file(const std::filesystem::path& path, const std::string& source_name,
                               Style style, std::int64_t target_chars, double dup_rate,
                               std::uint64_t seed, std::string* tokenizer_sink) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("corpus-gen: cannot open " + path.string());
    TextSampler sampler(seed);
    std::vector<std::string> history;
    std::int64_t written = 0;
    while (written < target_chars) {
        std::string text;
        if (!history.empty() && sampler.rng().next_uniform() < dup_rate) {
            text = history[static_cast<std::size_t>(
                sampler.rng().next_below(history.size()))];
        } else {
            text = sampler.document(style);
            history.push_back(text);
            if (tokenizer_sink) {
                *tokenizer_sink += text;
                *tokenizer_sink += '\n';
            }
        }
        nlohmann::json j = {{"text", text}, {"source", source_name}};
        os << j.dump() << "\n";
        written += static_cast<std::int64_t>(text.size());
    }
    return written;
}

nlohmann::json source_entry(const SourceProfile& p) {
    return {{"name", p.name}, {"path", p.file}, {"weight_percent", p.weight_percent}};
}

}  // namespace

CorpusPaths make_toy_corpus(const CorpusSpec& spec) {
    namespace fs = std::filesystem;
    const fs::path out(spec.out_dir);
    fs::create_directories(out);
    auto chars = [&](double base) {
        return static_cast<std::int64_t>(base * spec.scale);
    };

    const SourceProfile stage1_cc{"Common Crawl", "stage1/common_crawl.jsonl", Style::Prose,
                                  chars(3.1e6), 0.14, 100.0};

    const std::vector<SourceProfile> stage2 = {
        {"Common Crawl", "stage2/common_crawl.jsonl", Style::Prose, chars(2.3e6), 0.0, 61.27},
        {"The Stack", "stage2/the_stack.jsonl", Style::Code, chars(6.0e5), 0.0, 15.67},
        {"C4", "stage2/c4.jsonl", Style::Prose, chars(3.1e5), 0.0, 7.08},
        {"Papers", "stage2/papers.jsonl", Style::LongProse, chars(2.4e5), 0.0, 5.05},
        {"Dolma_Reddit", "stage2/dolma_reddit.jsonl", Style::Qa, chars(1.6e5), 0.0, 3.31},
        {"PubMed_Central", "stage2/pubmed_central.jsonl", Style::LongProse, chars(1.1e5), 0.0, 1.89},
        {"OpenWebText2", "stage2/openwebtext2.jsonl", Style::Prose, chars(7.0e4), 0.0, 1.17},
        {"Books", "stage2/books.jsonl", Style::LongProse, chars(7.0e4), 0.0, 1.04},
        {"RedPajama_StackExchange", "stage2/redpajama_stackexchange.jsonl", Style::Qa,
         chars(5.5e4), 0.0, 0.84},
        {"Wikipedia", "stage2/wikipedia.jsonl", Style::Prose, chars(5.5e4), 0.0, 0.83},
        {"Freelaw", "stage2/freelaw.jsonl", Style::LongProse, chars(5.5e4), 0.0, 0.82},
        {"Open-Web-Math", "stage2/open_web_math.jsonl", Style::Math, chars(4.5e4), 0.0, 0.55},
        {"USPTO_Backgrounds", "stage2/uspto_backgrounds.jsonl", Style::LongProse, chars(3.5e4),
         0.0, 0.40},
        {"PhilPapers", "stage2/philpapers.jsonl", Style::LongProse, chars(2.0e4), 0.0, 0.05},
        {"NIH_ExPorter", "stage2/nih_exporter.jsonl", Style::Prose, chars(1.6e4), 0.0, 0.03},
    };

    const std::vector<SourceProfile> stage3 = {
        {"Instruction", "stage3/instruction.jsonl", Style::Qa, chars(9.0e4), 0.0, 34.07},
        {"The Stack", "stage3/the_stack.jsonl", Style::Code, chars(5.5e4), 0.0, 17.78},
        {"flan", "stage3/flan.jsonl", Style::Qa, chars(4.5e4), 0.0, 14.63},
        {"algebraic-stack", "stage3/algebraic_stack.jsonl", Style::Math, chars(4.0e4), 0.0, 11.83},
        {"Papers", "stage3/papers.jsonl", Style::LongProse, chars(2.8e4), 0.0, 5.73},
        {"Books", "stage3/books.jsonl", Style::LongProse, chars(2.4e4), 0.0, 4.77},
        {"Dolma_Reddit", "stage3/dolma_reddit.jsonl", Style::Qa, chars(2.0e4), 0.0, 3.74},
        {"PubMed Central", "stage3/pubmed_central.jsonl", Style::LongProse, chars(1.5e4), 0.0, 2.14},
        {"OpenWebText2", "stage3/openwebtext2.jsonl", Style::Prose, chars(1.3e4), 0.0, 1.33},
        {"RedPajama_StackExchange", "stage3/redpajama_stackexchange.jsonl", Style::Qa,
         chars(1.2e4), 0.0, 0.95},
        {"Wikipedia", "stage3/wikipedia.jsonl", Style::Prose, chars(1.2e4), 0.0, 0.94},
        {"Freelaw", "stage3/freelaw.jsonl", Style::LongProse, chars(1.2e4), 0.0, 0.93},
        {"Open-Web-Math", "stage3/open_web_math.jsonl", Style::Math, chars(1.0e4), 0.0, 0.62},
        {"USPTO_Backgrounds", "stage3/uspto_backgrounds.jsonl", Style::LongProse, chars(1.0e4),
         0.0, 0.45},
        {"PhilPapers", "stage3/philpapers.jsonl", Style::LongProse, chars(8.0e3), 0.0, 0.05},
        {"NIH ExPorter", "stage3/nih_exporter.jsonl", Style::Prose, chars(8.0e3), 0.0, 0.03},
    };

    std::string tokenizer_corpus;
    tokenizer_corpus.reserve(1 << 23);
    std::uint64_t salt = 0;
    auto emit = [&](const SourceProfile& p, std::string* sink) {
        write_source_file(out / p.file, p.name, p.style, p.target_chars, p.dup_rate,
                          splitmix64(spec.seed + ++salt), sink);
    };
    emit(stage1_cc, &tokenizer_corpus);
    for (const auto& p : stage2) emit(p, &tokenizer_corpus);
    for (const auto& p : stage3) emit(p, &tokenizer_corpus);

    const SourceProfile heldout{"Heldout", "heldout.jsonl", Style::Prose, chars(1.1e5), 0.0, 0.0};
    emit(heldout, nullptr);

    const std::string tok_path = (out / "tokenizer_corpus.txt").string();
    {
        std::ofstream os(tok_path, std::ios::trunc | std::ios::binary);
        os << tokenizer_corpus;
    }

    nlohmann::json manifest;
    manifest["stages"] = nlohmann::json::array();
    {
        nlohmann::json s1 = {{"name", "stage1"},
                             {"token_budget", 156000},
                             {"batch_tokens", 2048},
                             {"chunk_policy", {{"type", "fixed"}, {"length", 2048}}},
                             {"shuffle_seed", 101},
                             {"sources", nlohmann::json::array({source_entry(stage1_cc)})}};
        manifest["stages"].push_back(std::move(s1));
        nlohmann::json s2 = {{"name", "stage2"},
                             {"token_budget", 236000},
                             {"batch_tokens", 4096},
                             {"chunk_policy", {{"type", "auto"}, {"threshold", 3072}}},
                             {"shuffle_seed", 202},
                             {"sources", nlohmann::json::array()}};
        for (const auto& p : stage2) s2["sources"].push_back(source_entry(p));
        manifest["stages"].push_back(std::move(s2));
        nlohmann::json s3 = {{"name", "stage3"},
                             {"token_budget", 8000},
                             {"batch_tokens", 4096},
                             {"chunk_policy", {{"type", "auto"}, {"threshold", 3072}}},
                             {"shuffle_seed", 303},
                             {"sources", nlohmann::json::array()}};
        for (const auto& p : stage3) s3["sources"].push_back(source_entry(p));
        manifest["stages"].push_back(std::move(s3));
    }
    const std::string manifest_path = (out / "fox1_toy_manifest.json").string();
    {
        std::ofstream os(manifest_path, std::ios::trunc);
        os << manifest.dump(2) << "\n";
    }

    CorpusPaths paths;
    paths.manifest = manifest_path;
    paths.heldout = (out / heldout.file).string();
    paths.tokenizer_corpus = tok_path;
    return paths;
}

}  // namespace fox
