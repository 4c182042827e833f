#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace xorinv {

/// Seeded random stream with platform-independent distributions.
///
/// std::mt19937_64 is fully specified by the standard but the std
/// distributions are not, so uniform/normal/shuffle are implemented here on
/// top of the raw engine output.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(mix(seed)) {}

    /// Derive the seed of an independent sub-stream (one per image, per run).
    static std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) { return seed ^ index; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n > 0. Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller (pairs are cached).
    double normal();

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t x);  // splitmix64 finalizer

    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace xorinv
