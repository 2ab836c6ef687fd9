#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dive {

// Static contiguous partition of [0, n) over `threads` workers. Work items must
// write to disjoint slots; with per-item RNG streams the result is then
// independent of the thread count. The first exception thrown by any item is
// rethrown on the calling thread.
inline void parallel_for(long n, int threads, const std::function<void(long)>& fn) {
    if (n <= 0) return;
    if (threads <= 1 || n == 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    const long workers = std::min<long>(threads, n);
    const long chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    std::exception_ptr first_error;
    long first_error_index = -1;
    std::mutex error_mutex;
    for (long w = 0; w < workers; ++w) {
        const long lo = w * chunk;
        const long hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn, &first_error, &first_error_index, &error_mutex] {
            for (long i = lo; i < hi; ++i) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error || i < first_error_index) {
                        first_error = std::current_exception();
                        first_error_index = i;
                    }
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace dive
