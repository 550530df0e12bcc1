#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mimo {

// Deterministic PRNG with an explicit, platform-independent update rule.
// std::mt19937 would do, but the distributions in <random> are
// implementation-defined; training reproducibility depends on every draw,
// so both the generator and the transforms live here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix(seed + 0x9e3779b97f4a7c15ULL)) {}

    std::uint64_t next_u64() {
        // xorshift64* on top of a splitmix-initialized state
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dULL;
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n) {
        // rejection sampling to avoid modulo bias
        std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    bool next_bool(double p) { return next_double() < p; }

    // Standard normal via Box-Muller.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = next_double();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Derives an independent stream, e.g. one per sample index. Pure in its
    // arguments, so worker scheduling cannot change what any stream yields.
    static Rng substream(std::uint64_t seed, std::uint64_t stream) {
        return Rng(splitmix(seed ^ splitmix(stream + 0x6a09e667f3bcc909ULL)));
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace mimo
