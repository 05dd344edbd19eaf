#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "softq/error.hpp"

namespace softq {

/// splitmix64 step; used to derive child seeds so that parallel and serial
/// sweep execution produce identical streams.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t master, uint64_t index) {
    return splitmix64(master ^ splitmix64(index + 0x9e3779b97f4a7c15ULL));
}

/// Deterministic RNG wrapper. All sampling goes through explicit mappings of
/// the raw 64-bit stream so outputs do not depend on library internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(splitmix64(seed)) {}

    uint64_t bits() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform01() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw InvalidArgument("uniform_int: n must be positive");
        // rejection sampling to avoid modulo bias
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do {
            x = bits();
        } while (x >= limit);
        return static_cast<int>(x % un);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Sample an index from an (unnormalized) nonnegative weight vector.
    int pick_discrete(const std::vector<double>& w) {
        double total = 0.0;
        for (double x : w) total += x;
        if (!(total > 0.0)) throw InvalidArgument("pick_discrete: weights sum to zero");
        double u = uniform01() * total;
        double acc = 0.0;
        for (size_t i = 0; i < w.size(); ++i) {
            acc += w[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(w.size()) - 1;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace softq
