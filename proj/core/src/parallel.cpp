#include "fox/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace fox {

namespace {

thread_local int tl_thread_limit = 0;  // 0 = no limit

int resolve_default_threads() {
    if (const char* env = std::getenv("FOX_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::atomic<int> g_num_threads{0};  // 0 = not yet resolved

// Minimal fork-join pool. Workers are lazily spawned and reused; each
// parallel_for call hands every worker one contiguous block.
class Pool {
public:
    static Pool& instance() {
        static Pool pool;
        return pool;
    }

    void run(int nthreads, std::int64_t n,
             const std::function<void(std::int64_t, std::int64_t)>& fn) {
        ensure_workers(nthreads - 1);
        std::int64_t chunk = (n + nthreads - 1) / nthreads;
        {
            std::unique_lock<std::mutex> lock(mu_);
            job_fn_ = &fn;
            job_n_ = n;
            job_chunk_ = chunk;
            job_workers_ = nthreads - 1;
            pending_ = nthreads - 1;
            ++epoch_;
        }
        cv_start_.notify_all();
        // Block 0 runs on the calling thread.
        std::int64_t end0 = std::min<std::int64_t>(chunk, n);
        if (end0 > 0) fn(0, end0);
        std::unique_lock<std::mutex> lock(mu_);
        cv_done_.wait(lock, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

private:
    Pool() = default;
    ~Pool() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            stop_ = true;
            ++epoch_;
        }
        cv_start_.notify_all();
        for (auto& t : workers_) t.join();
    }

    void ensure_workers(int needed) {
        std::unique_lock<std::mutex> lock(mu_);
        while (static_cast<int>(workers_.size()) < needed) {
            int index = static_cast<int>(workers_.size()) + 1;  // block index
            workers_.emplace_back([this, index] { worker_loop(index); });
        }
    }

    void worker_loop(int index) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::int64_t, std::int64_t)>* fn = nullptr;
            std::int64_t begin = 0, end = 0;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_start_.wait(lock, [&] { return epoch_ != seen; });
                seen = epoch_;
                if (stop_) return;
                if (index <= job_workers_) {
                    fn = job_fn_;
                    begin = std::min<std::int64_t>(job_chunk_ * index, job_n_);
                    end = std::min<std::int64_t>(begin + job_chunk_, job_n_);
                } else {
                    continue;  // spawned after this job was sized
                }
            }
            if (fn && begin < end) (*fn)(begin, end);
            std::unique_lock<std::mutex> lock(mu_);
            if (--pending_ == 0) cv_done_.notify_one();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_start_;
    std::condition_variable cv_done_;
    std::vector<std::thread> workers_;
    const std::function<void(std::int64_t, std::int64_t)>* job_fn_ = nullptr;
    std::int64_t job_n_ = 0;
    std::int64_t job_chunk_ = 0;
    int job_workers_ = 0;
    int pending_ = 0;
    std::uint64_t epoch_ = 0;
    bool stop_ = false;
};

}  // namespace

void set_num_threads(int n) { g_num_threads.store(n < 1 ? 1 : n); }

int num_threads() {
    int n = g_num_threads.load();
    if (n == 0) {
        n = resolve_default_threads();
        g_num_threads.store(n);
    }
    if (tl_thread_limit > 0 && tl_thread_limit < n) return tl_thread_limit;
    return n;
}

SingleThreadScope::SingleThreadScope() : saved_(tl_thread_limit) { tl_thread_limit = 1; }
SingleThreadScope::~SingleThreadScope() { tl_thread_limit = saved_; }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    int nthreads = num_threads();
    if (nthreads > n) nthreads = static_cast<int>(n);
    if (nthreads <= 1) {
        fn(0, n);
        return;
    }
    Pool::instance().run(nthreads, n, fn);
}

}  // namespace fox
