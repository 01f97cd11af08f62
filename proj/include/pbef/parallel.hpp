#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace pbef {

// Runs fn(i) for i in [0, n). Each index owns its output slot and its RNG
// stream, so results do not depend on the thread schedule.
template <typename F>
void parallel_for(std::size_t n, F&& fn, int jobs = 0) {
    if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
    if (jobs <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

} // namespace pbef
