#include "fox/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "fox/errors.hpp"
#include "fox/inference.hpp"
#include "fox/model.hpp"
#include "fox/parallel.hpp"
#include "fox/rng.hpp"

namespace fox {

namespace {

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const auto idx = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(v.size()))) - 1;
    return v[std::min(idx, v.size() - 1)];
}

}  // namespace

BenchReport throughput_bench(const ParameterSet& params, const ModelConfig& config,
                             const BenchOptions& options) {
    BenchReport report;
    report.n_users = options.n_users;
    report.request_tokens = options.request_tokens;
    report.response_tokens = options.response_tokens;
    if (options.n_users < 1) {
        report.error = "n_users must be >= 1";
        return report;
    }
    if (options.request_tokens < 1 || options.response_tokens < 1) {
        report.error = "request/response token counts must be >= 1";
        return report;
    }
    if (options.request_tokens + options.response_tokens > config.max_seq_len) {
        report.error = "request plus response exceeds max_seq_len";
        return report;
    }

    const Tensor out_t = build_output_transpose(params, config);
    struct UserResult {
        std::int64_t tokens = 0;
        std::int64_t requests = 0;
        std::vector<RequestTrace> traces;
        std::string error;
    };
    std::vector<UserResult> users(static_cast<std::size_t>(options.n_users));
    std::atomic<bool> stop{false};

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::thread> threads;
    threads.reserve(users.size());
    for (int u = 0; u < options.n_users; ++u) {
        threads.emplace_back([&, u] {
            // Sessions are independent workers; model ops stay single
            // threaded inside each one.
            SingleThreadScope single;
            UserResult& res = users[static_cast<std::size_t>(u)];
            try {
                RandomSource rng(options.seed + static_cast<std::uint64_t>(u) * 7919);
                std::vector<std::int32_t> prompt(static_cast<std::size_t>(options.request_tokens));
                SamplingParams sp;
                sp.mode = SamplingParams::Mode::Greedy;
                sp.max_new_tokens = options.response_tokens;
                while (!stop.load(std::memory_order_relaxed) ||
                       res.requests < options.min_requests_per_user) {
                    for (auto& id : prompt)
                        id = static_cast<std::int32_t>(rng.next_below(
                            static_cast<std::uint64_t>(config.vocab_size)));
                    const auto r0 = std::chrono::steady_clock::now();
                    const auto out = generate(prompt, params, config, sp, &out_t);
                    const auto r1 = std::chrono::steady_clock::now();
                    res.tokens += static_cast<std::int64_t>(out.size());
                    res.traces.push_back({u, res.requests, options.request_tokens,
                                          static_cast<std::int64_t>(out.size()),
                                          std::chrono::duration<double>(r1 - r0).count()});
                    ++res.requests;
                }
            } catch (const std::exception& e) {
                res.error = e.what();
                stop.store(true);
            }
        });
    }
    std::this_thread::sleep_for(std::chrono::duration<double>(options.duration_seconds));
    stop.store(true);
    for (auto& t : threads) t.join();
    const auto t1 = std::chrono::steady_clock::now();
    report.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

    for (const auto& u : users) {
        if (!u.error.empty()) {
            report.error = u.error;
            return report;  // aborted run, partial report flagged invalid
        }
        report.completed_requests += u.requests;
        report.total_output_tokens += u.tokens;
    }
    std::vector<double> rates;
    rates.reserve(users.size());
    for (const auto& u : users)
        rates.push_back(static_cast<double>(u.tokens) / report.wall_seconds);
    report.per_user_mean = 0.0;
    for (double r : rates) report.per_user_mean += r;
    report.per_user_mean /= static_cast<double>(rates.size());
    report.per_user_p50 = percentile(rates, 0.50);
    report.per_user_p95 = percentile(rates, 0.95);
    report.aggregate_tokens_per_sec =
        static_cast<double>(report.total_output_tokens) / report.wall_seconds;
    report.valid = true;

    if (!options.trace_path.empty()) {
        std::ofstream os(options.trace_path, std::ios::trunc);
        for (const auto& u : users)
            for (const auto& tr : u.traces) {
                nlohmann::json j = {{"user", tr.user},
                                    {"request", tr.request_index},
                                    {"prompt_tokens", tr.prompt_tokens},
                                    {"output_tokens", tr.output_tokens},
                                    {"seconds", tr.seconds}};
                os << j.dump() << "\n";
            }
    }
    return report;
}

std::string bench_report_to_json(const BenchReport& report) {
    nlohmann::json j = {{"n_users", report.n_users},
                        {"request_tokens", report.request_tokens},
                        {"response_tokens", report.response_tokens},
                        {"per_user_tokens_per_sec",
                         {{"mean", report.per_user_mean},
                          {"p50", report.per_user_p50},
                          {"p95", report.per_user_p95}}},
                        {"aggregate_tokens_per_sec", report.aggregate_tokens_per_sec},
                        {"completed_requests", report.completed_requests},
                        {"total_output_tokens", report.total_output_tokens},
                        {"wall_seconds", report.wall_seconds},
                        {"valid", report.valid}};
    if (!report.error.empty()) j["error"] = report.error;
    return j.dump(2);
}

}  // namespace fox
