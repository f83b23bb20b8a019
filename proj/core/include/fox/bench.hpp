#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fox/config.hpp"
#include "fox/params.hpp"

namespace fox {

struct BenchOptions {
    int n_users = 1;
    std::int64_t request_tokens = 234;
    std::int64_t response_tokens = 512;
    double duration_seconds = 10.0;  // users finish their in-flight request
    int min_requests_per_user = 1;
    std::uint64_t seed = 1;
    std::string trace_path;  // optional per-request JSONL trace
};

struct RequestTrace {
    int user = 0;
    std::int64_t request_index = 0;
    std::int64_t prompt_tokens = 0;
    std::int64_t output_tokens = 0;
    double seconds = 0.0;
};

struct BenchReport {
    int n_users = 0;
    std::int64_t request_tokens = 0;
    std::int64_t response_tokens = 0;
    double per_user_mean = 0.0;  // output tokens/sec over the bench window
    double per_user_p50 = 0.0;
    double per_user_p95 = 0.0;
    double aggregate_tokens_per_sec = 0.0;
    std::int64_t completed_requests = 0;
    std::int64_t total_output_tokens = 0;
    double wall_seconds = 0.0;
    bool valid = false;
    std::string error;
};

// n_users synthetic clients issue back-to-back generation requests of the
// configured lengths against one shared parameter set, each with its own
// KV cache, until the duration elapses (every user completes at least
// min_requests_per_user). Rates are output tokens per second.
BenchReport throughput_bench(const ParameterSet& params, const ModelConfig& config,
                             const BenchOptions& options);

std::string bench_report_to_json(const BenchReport& report);

}  // namespace fox
