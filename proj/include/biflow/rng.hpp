// SPDX-License-Identifier: Apache-2.0
//
// Counter-based splittable generator.
//
//   word(key, c)  = mix64(key ^ mix64(c * 0x9E3779B97F4A7C15))
//   seed -> key   = mix64(seed ^ 0x6A09E667F3BCC909)
//   split(key, s) = mix64(key ^ mix64(s + 0xBB67AE8584CAA73B))
//
// where mix64 is the SplitMix64 finalizer (shifts 30/27/31, multipliers
// 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB). All draws start from these
// 64-bit words, so streams are identical on every platform; only the
// normal draw goes through libm (log, cos).
#pragma once

#include <cstdint>

namespace biflow {

constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x6A09E667F3BCC909ULL)) {}

    /// Independent child stream; does not advance this generator.
    Rng split(std::uint64_t stream) const { return Rng(mix64(key_ ^ mix64(stream + 0xBB67AE8584CAA73BULL)), 0); }

    std::uint64_t next_u64() { return mix64(key_ ^ mix64(++counter_ * 0x9E3779B97F4A7C15ULL)); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer on [0, n) by rejection; n > 0.
    std::uint64_t below(std::uint64_t n);

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (cosine branch, two words per draw).
    double normal();

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace biflow
