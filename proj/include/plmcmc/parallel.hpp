#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace plmcmc {

/// Worker count: PLMCMC_THREADS env var, else hardware concurrency.
inline int default_thread_count() {
    if (const char* env = std::getenv("PLMCMC_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(chunk_index, begin, end) over [0, n) split into `threads` contiguous
/// chunks. Chunk boundaries depend only on (n, threads), so any per-chunk
/// output combined in chunk order is reproducible for a fixed thread count.
template <class Fn>
void parallel_chunks(long n, int threads, Fn&& fn) {
    threads = static_cast<int>(std::max<long>(1, std::min<long>(threads, n)));
    if (threads == 1) {
        if (n > 0) fn(0, 0L, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const long base = n / threads, extra = n % threads;
    long begin = 0;
    for (int t = 0; t < threads; ++t) {
        const long end = begin + base + (t < extra ? 1 : 0);
        pool.emplace_back([t, begin, end, &fn] { fn(t, begin, end); });
        begin = end;
    }
    for (auto& th : pool) th.join();
}

}  // namespace plmcmc
