#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fox/config.hpp"
#include "fox/data.hpp"
#include "fox/optimizer.hpp"
#include "fox/params.hpp"
#include "fox/schedule.hpp"
#include "fox/tokenizer.hpp"

namespace fox {

struct LossLogRecord {
    std::int64_t step = 0;   // 1-based update count
    std::int64_t stage = 0;  // 0-based stage index
    double lr = 0.0;
    double loss = 0.0;
    std::int64_t tokens_consumed = 0;  // cumulative over the run
};

struct TrainerOptions {
    OptimizerHyper hyper;
    WsdSchedule schedule;
    double clip_norm = 1.0;  // global-norm gradient clip; <= 0 disables
    std::int64_t checkpoint_interval = 50;
    std::string checkpoint_dir;
    std::uint64_t init_seed = 1;
    InitOptions init;
    std::string loss_log_path;  // optional JSONL sink
    std::function<void(const std::string&)> warn;
    std::function<void(const LossLogRecord&)> on_step;
};

struct TrainResult {
    std::vector<LossLogRecord> log;
    std::string final_stem;
    std::vector<std::string> stage_checkpoints;
    ParameterSet params;
};

// Runs the staged training loop over the plan: per stage, samples come from
// that stage's StageSampleStream; batches greedily fill up to batch_tokens
// whole samples; samples longer than the model context are split into
// consecutive context-length windows. Writes a checkpoint at every stage
// boundary and every checkpoint_interval steps.
//
// `resume_stem`, when set, restores parameters, optimizer moments and the
// exact data-stream position from a previous run's checkpoint; the continued
// loss log matches the uninterrupted run's bit for bit.
TrainResult train(const CurriculumPlan& plan, const ModelConfig& config, const Vocab& vocab,
                  const TrainerOptions& opts, const std::string& resume_stem = "");

}  // namespace fox
