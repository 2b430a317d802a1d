#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dmftlab {

// Global worker cap, set by the CLI --threads flag. Defaults to 1.
void set_thread_count(int n);
int thread_count();

// Paths are split into fixed chunks of `chunk` items; f(c, begin, end) runs
// once per chunk. Chunk boundaries do not depend on the worker count, so
// per-chunk partial results reduced in chunk order are bit-stable.
template <class F>
void for_chunks(long n, long chunk, F&& f) {
    const long n_chunks = (n + chunk - 1) / chunk;
    const int workers = int(std::min<long>(thread_count(), n_chunks));
    if (workers <= 1) {
        for (long c = 0; c < n_chunks; ++c) f(c, c * chunk, std::min(n, (c + 1) * chunk));
        return;
    }
    std::atomic<long> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                long c = next.fetch_add(1);
                if (c >= n_chunks) return;
                try {
                    f(c, c * chunk, std::min(n, (c + 1) * chunk));
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

// Pairwise-tree sum of `parts` equally sized partial vectors stored back to back.
std::vector<double> pairwise_reduce(const std::vector<double>& partials, long parts, long width);

}  // namespace dmftlab
