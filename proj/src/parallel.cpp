#include "dmftlab/parallel.hpp"

namespace dmftlab {

namespace {
std::atomic<int> g_threads{1};

void reduce_range(const std::vector<double>& p, long lo, long hi, long width, double* out) {
    if (hi - lo == 1) {
        for (long e = 0; e < width; ++e) out[e] = p[std::size_t(lo * width + e)];
        return;
    }
    const long mid = lo + (hi - lo) / 2;
    std::vector<double> right(static_cast<std::size_t>(width));
    reduce_range(p, lo, mid, width, out);
    reduce_range(p, mid, hi, width, right.data());
    for (long e = 0; e < width; ++e) out[e] += right[std::size_t(e)];
}
}  // namespace

void set_thread_count(int n) { g_threads = std::max(1, n); }
int thread_count() { return g_threads; }

std::vector<double> pairwise_reduce(const std::vector<double>& partials, long parts, long width) {
    std::vector<double> out(std::size_t(width), 0.0);
    if (parts > 0) reduce_range(partials, 0, parts, width, out.data());
    return out;
}

}  // namespace dmftlab
