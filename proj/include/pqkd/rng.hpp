// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_RNG_HPP
#define PQKD_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace pqkd {

// Counter-based RNG built on the splitmix64 sequence. Output n of a stream
// with key k is mix64(k + n*GOLDEN), so any position can be computed without
// stepping through the sequence. Named streams (sampling, dropout, spsa,
// data, init, noise, stats) are derived from the run seed so that changing
// the consumption pattern of one stream never perturbs another. Substreams
// (per shot, per layer, per epoch) are derived the same way; sampling work
// split across workers by shot index therefore gives output independent of
// the worker count.

constexpr std::uint64_t kSplitMixGolden = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline double unit_from_bits(std::uint64_t x) {
    // 53-bit mantissa, value in [0,1)
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

class RngStream {
  public:
    RngStream() = default;
    explicit RngStream(std::uint64_t key) : key_(key) {}

    static RngStream named(std::uint64_t run_seed, std::string_view stream) {
        return RngStream(mix64(run_seed ^ (fnv1a64(stream) | 1ULL)));
    }

    RngStream substream(std::uint64_t index) const {
        return RngStream(mix64(key_ ^ mix64(index + 0x632BE59BD9B4E019ULL)));
    }

    std::uint64_t key() const { return key_; }

    std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kSplitMixGolden); }

    // Uniform in [0,1).
    double next_unit() { return unit_from_bits(next_u64()); }

    // Standard normal via Box-Muller; consumes exactly two uniforms.
    double next_gaussian() {
        const double u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    void fill_gaussian(std::vector<double>& out) {
        for (double& v : out) v = next_gaussian();
    }

  private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

// Gaussian k (0-based) of the stream with key `key`, identical to the value
// a fresh RngStream(key) would return on its k-th next_gaussian() call.
// Used for seed-replay regeneration of fixed projection matrices.
inline double gaussian_at(std::uint64_t key, std::uint64_t k) {
    const double u1 = unit_from_bits(mix64(key + (2 * k + 1) * kSplitMixGolden));
    const double u2 = unit_from_bits(mix64(key + (2 * k + 2) * kSplitMixGolden));
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace pqkd

#endif
