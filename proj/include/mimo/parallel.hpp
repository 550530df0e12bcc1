#pragma once

#include <cstdint>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mimo {

// Thread count resolution: MIMO_THREADS env var wins, then the OpenMP
// default (which itself honors OMP_NUM_THREADS).
inline int thread_count() {
#ifdef _OPENMP
    static int n = [] {
        if (const char* env = std::getenv("MIMO_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) return v;
        }
        return omp_get_max_threads();
    }();
    return n;
#else
    return 1;
#endif
}

namespace detail_par {
inline bool& region_enabled() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail_par

// Disables parallel_for on the current thread. Used by code that manages
// its own worker pool (the finite-difference sweep); nesting OpenMP regions
// inside such workers oversubscribes the cores and pays the region setup
// on every kernel.
struct SerialRegion {
    SerialRegion() : prev_(detail_par::region_enabled()) { detail_par::region_enabled() = false; }
    ~SerialRegion() { detail_par::region_enabled() = prev_; }
    SerialRegion(const SerialRegion&) = delete;
    SerialRegion& operator=(const SerialRegion&) = delete;

private:
    bool prev_;
};

// Runs fn(i) for i in [0, n). Each index must own a disjoint output slice;
// work inside an index runs serially, so results are bit-identical for any
// thread count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
#ifdef _OPENMP
    if (n > 1 && thread_count() > 1 && detail_par::region_enabled()) {
#pragma omp parallel for schedule(static) num_threads(thread_count())
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
#endif
    for (std::int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace mimo
