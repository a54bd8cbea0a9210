#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace pwrelax {

/// Worker count from PWRELAX_THREADS, falling back to the hardware concurrency.
inline unsigned thread_count() {
    if (const char* env = std::getenv("PWRELAX_THREADS")) {
        try {
            const long n = std::stol(env);
            if (n > 0) return static_cast<unsigned>(n);
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls body(i) for i in [0, n). Workers pull fixed-size chunks from a shared
/// counter; each index writes only its own output slot, so results do not
/// depend on the number of workers or on scheduling. The first exception
/// thrown is rethrown after all workers finish.
template <class Body>
void parallel_for(std::size_t n, Body&& body, unsigned workers = thread_count()) {
    if (n == 0) return;
    constexpr std::size_t kChunk = 64;
    workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), (n + kChunk - 1) / kChunk));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&] {
        try {
            for (;;) {
                if (stop.load(std::memory_order_relaxed)) return;
                const std::size_t begin = next.fetch_add(kChunk);
                if (begin >= n) return;
                const std::size_t end = std::min(n, begin + kChunk);
                for (std::size_t i = begin; i < end; ++i) body(i);
            }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            stop = true;
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace pwrelax
