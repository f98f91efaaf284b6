// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace aliif {

// Counter-based 64-bit PRNG (SplitMix64 finalizer over an affine counter).
// Every consumer derives its own stream from (seed, purpose tag), so adding
// or reordering draws in one subsystem never shifts the values another
// subsystem sees. Output i of a stream is a pure function of
// (seed, tag, i), which keeps runs reproducible across platforms.
class Rng {
public:
    Rng(uint64_t seed, std::string_view stream_tag)
        : base_(mix(seed ^ mix(fnv1a(stream_tag)))) {}

    uint64_t next_u64() {
        counter_ += 0x9E3779B97F4A7C15ull;
        return mix(base_ + counter_);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n), n >= 1. Lemire multiply-shift; the residual
    // bias (< n / 2^64) is irrelevant here and the mapping stays portable.
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t base_;
    uint64_t counter_ = 0;
};

}  // namespace aliif
