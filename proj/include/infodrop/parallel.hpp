#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace infodrop {

// Worker cap: INFODROP_THREADS env var, else hardware concurrency.
inline unsigned max_threads() {
    static unsigned cached = [] {
        if (const char* env = std::getenv("INFODROP_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return unsigned(v);
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? hw : 1u;
    }();
    return cached;
}

// Run fn(i) for i in [0,n). Work items must be independent; any shared
// reduction happens in the caller, in index order, after the join.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    unsigned workers = std::min<std::size_t>(max_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace infodrop
