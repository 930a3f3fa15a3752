#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace magn {

/// Worker count for per-image CLI work: MAGN_THREADS caps it, hardware
/// concurrency is the default.
inline int worker_count(size_t items) {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("MAGN_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1 && static_cast<unsigned>(cap) < n) n = static_cast<unsigned>(cap);
    }
    if (items < n) n = static_cast<unsigned>(items);
    return static_cast<int>(n == 0 ? 1 : n);
}

/// Runs fn(i) for i in [0, count) on up to worker_count threads. Each index
/// owns its outputs, so results do not depend on scheduling. The first thrown
/// exception is rethrown on the caller thread.
inline void parallel_for(size_t count, const std::function<void(size_t)>& fn) {
    const int workers = worker_count(count);
    if (workers <= 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mu;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace magn
