#include "fox/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "fox/hash.hpp"
#include "fox/rng.hpp"

namespace fox {

std::int64_t assign_chunk_length(double avg_len, const ChunkPolicy& policy) {
    if (avg_len <= 0.0) throw std::invalid_argument("assign_chunk_length: avg_len must be positive");
    if (policy.kind == ChunkPolicy::Kind::Fixed) return policy.fixed_len;
    return avg_len >= static_cast<double>(policy.auto_threshold) ? 8192 : 4096;
}

void CurriculumPlan::validate() const {
    if (stages.empty()) throw std::invalid_argument("plan: no stages");
    for (const auto& st : stages) {
        if (st.token_budget < 1) throw std::invalid_argument("plan: token_budget must be >= 1");
        if (st.batch_tokens < 1) throw std::invalid_argument("plan: batch_tokens must be >= 1");
        if (st.sources.empty()) throw std::invalid_argument("plan: stage has no sources");
        double sum = 0.0;
        for (const auto& s : st.sources) {
            if (s.weight_percent < 0.0)
                throw std::invalid_argument("plan: negative source weight");
            sum += s.weight_percent;
        }
        if (std::abs(sum - 100.0) > 0.01)
            throw std::invalid_argument("plan: stage '" + st.name +
                                        "' source weights sum to " + std::to_string(sum) +
                                        ", expected 100");
        const std::int64_t max_chunk = st.chunk_policy.kind == ChunkPolicy::Kind::Fixed
                                           ? st.chunk_policy.fixed_len
                                           : 8192;
        if (st.batch_tokens < max_chunk)
            throw std::invalid_argument("plan: stage '" + st.name +
                                        "' batch_tokens smaller than its chunk length");
    }
}

namespace {

ChunkPolicy chunk_policy_from_json(const nlohmann::json& j) {
    ChunkPolicy p;
    const std::string type = j.at("type").get<std::string>();
    if (type == "fixed") {
        p.kind = ChunkPolicy::Kind::Fixed;
        p.fixed_len = j.at("length").get<std::int64_t>();
        if (p.fixed_len < 2) throw std::invalid_argument("manifest: fixed chunk length < 2");
    } else if (type == "auto") {
        p.kind = ChunkPolicy::Kind::Auto;
        if (j.contains("threshold")) p.auto_threshold = j.at("threshold").get<std::int64_t>();
    } else {
        throw std::invalid_argument("manifest: unknown chunk policy '" + type + "'");
    }
    return p;
}

}  // namespace

CurriculumPlan load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("manifest: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("manifest: parse error: ") + e.what());
    }
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    CurriculumPlan plan;
    for (const auto& js : j.at("stages")) {
        CurriculumStage st;
        st.name = js.value("name", "stage" + std::to_string(plan.stages.size() + 1));
        st.token_budget = js.at("token_budget").get<std::int64_t>();
        st.batch_tokens = js.at("batch_tokens").get<std::int64_t>();
        st.chunk_policy = chunk_policy_from_json(js.at("chunk_policy"));
        st.shuffle_seed = js.at("shuffle_seed").get<std::uint64_t>();
        for (const auto& jsrc : js.at("sources")) {
            DocumentSource src;
            src.name = jsrc.at("name").get<std::string>();
            src.path = (base / jsrc.at("path").get<std::string>()).string();
            src.weight_percent = jsrc.at("weight_percent").get<double>();
            st.sources.push_back(std::move(src));
        }
        plan.stages.push_back(std::move(st));
    }
    plan.validate();
    return plan;
}

std::vector<StageAccounting> token_accounting(const CurriculumPlan& plan) {
    plan.validate();
    std::int64_t total = 0;
    for (const auto& st : plan.stages) total += st.token_budget;
    std::vector<StageAccounting> out;
    for (const auto& st : plan.stages)
        out.push_back({st.token_budget,
                       static_cast<double>(st.token_budget) / static_cast<double>(total)});
    return out;
}

std::vector<RawDoc> read_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("corpus: cannot open " + path);
    std::vector<RawDoc> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::invalid_argument("corpus: " + path + ":" + std::to_string(lineno) +
                                        ": " + e.what());
        }
        RawDoc d;
        d.text = j.at("text").get<std::string>();
        d.source = j.value("source", "");
        docs.push_back(std::move(d));
    }
    return docs;
}

std::string dedup_key(std::string_view text) {
    std::string norm;
    norm.reserve(text.size());
    bool in_ws = true;  // leading whitespace trimmed
    for (char c : text) {
        const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (ws) {
            in_ws = true;
        } else {
            if (in_ws && !norm.empty()) norm.push_back(' ');
            norm.push_back(c);
            in_ws = false;
        }
    }
    return sha256_hex(norm);
}

std::vector<RawDoc> dedup(const std::vector<RawDoc>& docs, BloomFilter& filter,
                          DedupCounts& counts,
                          const std::function<std::string(const RawDoc&)>& key_fn) {
    std::vector<RawDoc> kept;
    kept.reserve(docs.size());
    for (const auto& d : docs) {
        const std::string key = key_fn ? key_fn(d) : dedup_key(d.text);
        if (filter.test_and_insert(key)) {
            ++counts.dropped;
        } else {
            ++counts.kept;
            kept.push_back(d);
        }
    }
    return kept;
}

std::vector<TrainingSample> chunk_pack(const std::vector<std::vector<std::int32_t>>& docs,
                                       std::int64_t chunk_len, std::int32_t separator_id,
                                       std::int32_t pad_id, std::int32_t source_id) {
    if (chunk_len < 2) throw std::invalid_argument("chunk_pack: chunk_len must be >= 2");
    std::vector<TrainingSample> samples;
    TrainingSample cur;
    cur.source_id = source_id;
    cur.tokens.reserve(static_cast<std::size_t>(chunk_len));
    auto flush_if_full = [&]() {
        if (static_cast<std::int64_t>(cur.tokens.size()) == chunk_len) {
            samples.push_back(std::move(cur));
            cur = TrainingSample{};
            cur.source_id = source_id;
            cur.tokens.reserve(static_cast<std::size_t>(chunk_len));
        }
    };
    auto push = [&](std::int32_t id) {
        cur.tokens.push_back(id);
        flush_if_full();
    };
    for (const auto& doc : docs) {
        cur.doc_boundaries.push_back(static_cast<std::int32_t>(cur.tokens.size()));
        for (std::int32_t id : doc) push(id);
        push(separator_id);
    }
    if (!cur.tokens.empty()) {
        while (static_cast<std::int64_t>(cur.tokens.size()) < chunk_len) cur.tokens.push_back(pad_id);
        samples.push_back(std::move(cur));
    }
    return samples;
}

StrideScheduler::StrideScheduler(std::vector<double> weights, std::uint64_t seed) {
    if (weights.empty()) throw std::invalid_argument("mixture: no sources");
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("mixture: negative weight");
        sum += w;
    }
    if (std::abs(sum - 100.0) > 0.01)
        throw std::invalid_argument("mixture: weights must sum to 100 (got " +
                                    std::to_string(sum) + ")");
    share_.resize(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) share_[i] = weights[i] / sum;
    counts_.assign(weights.size(), 0.0);
    priority_.resize(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i)
        priority_[i] = static_cast<std::int32_t>(i);
    RandomSource rng(seed);
    rng.shuffle(priority_);
}

std::int32_t StrideScheduler::next() {
    ++drawn_;
    const double n = static_cast<double>(drawn_);
    std::int32_t best = -1;
    double best_deficit = -1.0;
    for (std::int32_t p : priority_) {
        const auto i = static_cast<std::size_t>(p);
        if (share_[i] <= 0.0) continue;
        const double deficit = share_[i] * n - counts_[i];
        if (deficit > best_deficit + 1e-12) {
            best_deficit = deficit;
            best = p;
        }
    }
    counts_[static_cast<std::size_t>(best)] += 1.0;
    return best;
}

std::vector<std::int32_t> mixture_schedule(const std::vector<double>& weights, std::uint64_t seed,
                                           std::int64_t n) {
    StrideScheduler sched(weights, seed);
    std::vector<std::int32_t> out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) out.push_back(sched.next());
    return out;
}

// ---------------------------------------------------------------------------
// StageSampleStream
// ---------------------------------------------------------------------------

namespace {

std::vector<double> stage_weights(const CurriculumStage& stage) {
    std::vector<double> w;
    w.reserve(stage.sources.size());
    for (const auto& s : stage.sources) w.push_back(s.weight_percent);
    return w;
}

}  // namespace

StageSampleStream::StageSampleStream(const CurriculumStage& stage, const Vocab& vocab,
                                     BloomFilter& filter,
                                     std::function<void(const std::string&)> warn)
    : stage_(stage),
      scheduler_(stage_weights(stage), stage.shuffle_seed),
      warn_(std::move(warn)) {
    stats_.name = stage_.name;
    stats_.token_budget = stage_.token_budget;
    Encoder encoder(vocab);
    sources_.resize(stage_.sources.size());
    for (std::size_t si = 0; si < stage_.sources.size(); ++si) {
        const auto& src = stage_.sources[si];
        SourceStats ss;
        ss.name = src.name;
        auto docs = read_jsonl(src.path);
        ss.docs_in = static_cast<std::int64_t>(docs.size());
        DedupCounts dc;
        auto kept = dedup(docs, filter, dc);
        ss.kept = dc.kept;
        ss.dropped = dc.dropped;
        auto& state = sources_[si];
        state.base_seed = stage_.shuffle_seed ^ splitmix64(static_cast<std::uint64_t>(si) + 1);
        state.doc_tokens.reserve(kept.size());
        for (const auto& d : kept) {
            state.doc_tokens.push_back(encoder.encode(d.text));
            ss.tokens += static_cast<std::int64_t>(state.doc_tokens.back().size());
        }
        ss.avg_doc_tokens = ss.kept > 0
                                ? static_cast<double>(ss.tokens) / static_cast<double>(ss.kept)
                                : 0.0;
        state.chunk_len = stage_.chunk_policy.kind == ChunkPolicy::Kind::Fixed
                              ? stage_.chunk_policy.fixed_len
                              : assign_chunk_length(std::max(ss.avg_doc_tokens, 1.0),
                                                    stage_.chunk_policy);
        ss.chunk_len = state.chunk_len;
        stats_.sources.push_back(std::move(ss));
        repack(si);
    }
}

void StageSampleStream::repack(std::size_t source_idx) {
    auto& state = sources_[source_idx];
    auto& ss = stats_.sources[source_idx];
    // Shuffle document order; the wrap count advances the seed so each pass
    // sees a fresh permutation.
    std::vector<std::size_t> order(state.doc_tokens.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RandomSource rng(state.base_seed + static_cast<std::uint64_t>(ss.wraps));
    rng.shuffle(order);
    std::vector<std::vector<std::int32_t>> shuffled;
    shuffled.reserve(order.size());
    for (std::size_t i : order) shuffled.push_back(state.doc_tokens[i]);
    state.samples = chunk_pack(shuffled, state.chunk_len, Vocab::kEosId, Vocab::kPadId,
                               static_cast<std::int32_t>(source_idx));
    state.cursor = 0;
}

std::optional<TrainingSample> StageSampleStream::next() {
    if (stats_.tokens_consumed >= stage_.token_budget) return std::nullopt;
    const std::int32_t pick = scheduler_.next();
    auto& state = sources_[static_cast<std::size_t>(pick)];
    auto& ss = stats_.sources[static_cast<std::size_t>(pick)];
    if (state.samples.empty())
        throw std::invalid_argument("stage '" + stage_.name + "': source '" + ss.name +
                                    "' produced no samples");
    if (state.cursor >= state.samples.size()) {
        ++ss.wraps;
        if (warn_)
            warn_("stage '" + stage_.name + "': source '" + ss.name +
                  "' exhausted before budget; reshuffling with incremented seed (wrap " +
                  std::to_string(ss.wraps) + ")");
        repack(static_cast<std::size_t>(pick));
    }
    TrainingSample sample = state.samples[state.cursor++];
    ++ss.samples_emitted;
    ++stats_.samples;
    stats_.tokens_consumed += static_cast<std::int64_t>(sample.tokens.size());
    return sample;
}

void StageSampleStream::skip(std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i)
        if (!next()) throw std::invalid_argument("stage stream: skip past end of stage");
}

// ---------------------------------------------------------------------------
// Materialization
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ofstream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

nlohmann::json source_stats_json(const SourceStats& s) {
    return {{"name", s.name},       {"docs_in", s.docs_in},
            {"kept", s.kept},       {"dropped", s.dropped},
            {"tokens", s.tokens},   {"avg_doc_tokens", s.avg_doc_tokens},
            {"chunk_len", s.chunk_len}, {"samples", s.samples_emitted},
            {"wraps", s.wraps}};
}

}  // namespace

PrepResult materialize_plan(const CurriculumPlan& plan, const Vocab& vocab,
                            const std::string& out_dir,
                            std::function<void(const std::string&)> warn) {
    plan.validate();
    std::filesystem::create_directories(out_dir);
    BloomFilter filter = BloomFilter::with_capacity(1 << 20, 0.001);
    PrepResult result;
    result.accounting = token_accounting(plan);
    for (std::size_t si = 0; si < plan.stages.size(); ++si) {
        const auto& stage = plan.stages[si];
        StageSampleStream stream(stage, vocab, filter, warn);
        const std::string path = out_dir + "/stage" + std::to_string(si + 1) + ".bin";
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("data-prep: cannot open " + path);
        while (auto sample = stream.next()) {
            put_u32(os, static_cast<std::uint32_t>(sample->tokens.size()));
            put_u32(os, static_cast<std::uint32_t>(sample->source_id));
            for (std::int32_t id : sample->tokens) put_u32(os, static_cast<std::uint32_t>(id));
        }
        if (!os) throw std::runtime_error("data-prep: write failed: " + path);
        result.stages.push_back(stream.stats());
    }

    nlohmann::json report;
    report["stages"] = nlohmann::json::array();
    for (std::size_t si = 0; si < result.stages.size(); ++si) {
        const auto& st = result.stages[si];
        nlohmann::json js = {{"name", st.name},
                             {"token_budget", st.token_budget},
                             {"tokens_consumed", st.tokens_consumed},
                             {"samples", st.samples},
                             {"fraction_of_total", result.accounting[si].fraction},
                             {"sources", nlohmann::json::array()}};
        for (const auto& s : st.sources) js["sources"].push_back(source_stats_json(s));
        report["stages"].push_back(std::move(js));
    }
    std::ofstream rs(out_dir + "/prep_stats.json", std::ios::trunc);
    rs << report.dump(2) << "\n";
    return result;
}

}  // namespace fox
