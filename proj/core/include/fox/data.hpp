#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fox/bloom.hpp"
#include "fox/tokenizer.hpp"

namespace fox {

// ---------------------------------------------------------------------------
// Plan types
// ---------------------------------------------------------------------------

struct ChunkPolicy {
    enum class Kind { Fixed, Auto };
    Kind kind = Kind::Fixed;
    std::int64_t fixed_len = 2048;
    std::int64_t auto_threshold = 3072;  // avg doc tokens >= threshold -> 8K chunks
};

// fixed(L) -> L; auto(threshold) -> 8192 when avg_len >= threshold else 4096.
std::int64_t assign_chunk_length(double avg_len, const ChunkPolicy& policy);

struct DocumentSource {
    std::string name;
    std::string path;              // line-delimited JSON {"text", "source"}
    double weight_percent = 0.0;   // share of the stage's samples
};

struct CurriculumStage {
    std::string name;
    std::int64_t token_budget = 0;
    std::int64_t batch_tokens = 0;
    ChunkPolicy chunk_policy;
    std::uint64_t shuffle_seed = 0;
    std::vector<DocumentSource> sources;
};

struct CurriculumPlan {
    std::vector<CurriculumStage> stages;

    // Throws std::invalid_argument on: empty stages, non-positive budgets,
    // per-stage weight sums outside 100 +- 0.01, batch_tokens smaller than
    // the largest chunk the stage can produce.
    void validate() const;
};

// Parses a manifest file; source paths are resolved relative to the
// manifest's directory.
CurriculumPlan load_manifest(const std::string& path);

struct StageAccounting {
    std::int64_t budget = 0;
    double fraction = 0.0;
};

std::vector<StageAccounting> token_accounting(const CurriculumPlan& plan);

// ---------------------------------------------------------------------------
// Documents and dedup
// ---------------------------------------------------------------------------

struct RawDoc {
    std::string text;
    std::string source;
};

std::vector<RawDoc> read_jsonl(const std::string& path);

// Canonical dedup key: SHA-256 hex over whitespace-normalized text
// (runs of whitespace collapsed to single spaces, ends trimmed).
std::string dedup_key(std::string_view text);

struct DedupCounts {
    std::int64_t kept = 0;
    std::int64_t dropped = 0;
};

// Keeps a document iff its key has not been seen by `filter`; order
// preserved. One filter may be shared across sources and stages.
std::vector<RawDoc> dedup(const std::vector<RawDoc>& docs, BloomFilter& filter,
                          DedupCounts& counts,
                          const std::function<std::string(const RawDoc&)>& key_fn = nullptr);

// ---------------------------------------------------------------------------
// Packing
// ---------------------------------------------------------------------------

struct TrainingSample {
    std::vector<std::int32_t> tokens;           // exactly chunk_len ids
    std::int32_t source_id = 0;
    std::vector<std::int32_t> doc_boundaries;   // in-chunk positions where docs start
};

// Concatenates documents with a separator after each one, slices the stream
// into chunk_len windows and pads the final partial window.
std::vector<TrainingSample> chunk_pack(const std::vector<std::vector<std::int32_t>>& docs,
                                       std::int64_t chunk_len, std::int32_t separator_id,
                                       std::int32_t pad_id, std::int32_t source_id = 0);

// ---------------------------------------------------------------------------
// Mixture scheduling
// ---------------------------------------------------------------------------

// Deterministic stride (largest-deficit-first) interleaving: for any prefix
// of N draws, each source's count stays within one sample of N * weight.
// The seed only permutes tie-breaking order.
class StrideScheduler {
public:
    StrideScheduler(std::vector<double> weights, std::uint64_t seed);
    std::int32_t next();

private:
    std::vector<double> share_;   // normalized weights
    std::vector<double> counts_;
    std::vector<std::int32_t> priority_;  // tie-break permutation
    std::int64_t drawn_ = 0;
};

// First n draws of the schedule, for inspection and tests.
std::vector<std::int32_t> mixture_schedule(const std::vector<double>& weights, std::uint64_t seed,
                                           std::int64_t n);

// ---------------------------------------------------------------------------
// Stage sample stream
// ---------------------------------------------------------------------------

struct SourceStats {
    std::string name;
    std::int64_t docs_in = 0;
    std::int64_t kept = 0;
    std::int64_t dropped = 0;
    std::int64_t tokens = 0;       // tokens of kept docs
    double avg_doc_tokens = 0.0;
    std::int64_t chunk_len = 0;
    std::int64_t samples_emitted = 0;
    std::int64_t wraps = 0;
};

struct StageStats {
    std::string name;
    std::int64_t token_budget = 0;
    std::int64_t tokens_consumed = 0;
    std::int64_t samples = 0;
    std::vector<SourceStats> sources;
};

// Deterministic per-stage sample stream: per source, documents are read,
// deduplicated through the shared filter, tokenized, shuffled by the stage
// seed, assigned a chunk length and packed; sources are then interleaved by
// the stride schedule until the stage token budget is consumed. A source
// that runs dry is re-packed with an incremented shuffle seed (wrap-around)
// and a warning is reported once per wrap.
class StageSampleStream {
public:
    StageSampleStream(const CurriculumStage& stage, const Vocab& vocab, BloomFilter& filter,
                      std::function<void(const std::string&)> warn = nullptr);

    // nullopt once tokens_consumed >= token_budget.
    std::optional<TrainingSample> next();

    // Skips n samples (used by checkpoint resume).
    void skip(std::int64_t n);

    const StageStats& stats() const { return stats_; }

private:
    void repack(std::size_t source_idx);

    struct SourceState {
        std::vector<std::vector<std::int32_t>> doc_tokens;  // post-dedup, manifest order
        std::int64_t chunk_len = 0;
        std::vector<TrainingSample> samples;  // current pack
        std::size_t cursor = 0;
        std::uint64_t base_seed = 0;
    };

    CurriculumStage stage_;
    StrideScheduler scheduler_;
    std::vector<SourceState> sources_;
    StageStats stats_;
    std::function<void(const std::string&)> warn_;
};

// ---------------------------------------------------------------------------
// Materialization (data-prep)
// ---------------------------------------------------------------------------

struct PrepResult {
    std::vector<StageStats> stages;
    std::vector<StageAccounting> accounting;
};

// Runs every stage stream to completion, writing per-stage sample files
// ("<out_dir>/stageN.bin": per-record header {chunk_len, source_id} as
// little-endian uint32, then chunk_len int32 token ids) plus a stats report
// ("<out_dir>/prep_stats.json").
PrepResult materialize_plan(const CurriculumPlan& plan, const Vocab& vocab,
                            const std::string& out_dir,
                            std::function<void(const std::string&)> warn = nullptr);

}  // namespace fox
