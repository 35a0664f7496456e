#pragma once

#include <cstdint>
#include <vector>

namespace dasc {

// xoshiro256** with hand-rolled draws. std::*_distribution is
// implementation-defined, so every sampled value here comes from explicit
// arithmetic; the same seed gives the same stream on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform in [0, bound), bound >= 1. Unbiased (rejection sampling).
    std::uint64_t uniform_below(std::uint64_t bound);

    // Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // Uniform in [0, 1) with 53 random bits.
    double uniform_real();

    bool bernoulli(double p);

    // Box-Muller; consumes two uniforms per pair, caches the spare.
    double normal(double mean = 0.0, double stddev = 1.0);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::uint64_t i = v.size() - 1; i > 0; --i) {
            const std::uint64_t j = uniform_below(i + 1);
            std::swap(v[i], v[j]);
        }
    }

    // Stable stream derivation (splitmix64 mix of seed and stream id), used
    // to give each sample/worker its own independent generator.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

private:
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace dasc
