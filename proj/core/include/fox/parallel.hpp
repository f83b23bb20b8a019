#pragma once

#include <cstdint>
#include <functional>

namespace fox {

// Number of worker threads used by parallel_for. Resolution order:
// explicit set_num_threads() > FOX_THREADS env var > hardware_concurrency.
void set_num_threads(int n);
int num_threads();

// RAII guard that pins parallel_for to a single thread on the current
// thread (used by code that already runs inside its own worker threads,
// e.g. throughput-bench sessions).
class SingleThreadScope {
public:
    SingleThreadScope();
    ~SingleThreadScope();
    SingleThreadScope(const SingleThreadScope&) = delete;
    SingleThreadScope& operator=(const SingleThreadScope&) = delete;

private:
    int saved_;
};

// Runs fn(begin, end) over a static block partition of [0, n).
//
// Every output element must be written by exactly one block; reductions
// across the parallel dimension are not allowed inside fn. Under that
// contract results are bit-identical for any thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace fox
