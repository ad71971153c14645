#pragma once

#include <cstdint>
#include <string_view>

namespace pbp {

// Counter-based pseudo-random generator (splitmix64 finalizer over a
// keyed counter). Every consumer owns its own instance seeded explicitly;
// nothing in the library reads ambient randomness. Substreams derived
// with derive() are independent of draws made on the parent.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : key_(seed) {}

    std::uint64_t next_u64();

    // Uniform double in [0, 1), 53-bit resolution.
    double uniform();

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller (consumes two uniforms per call).
    double normal();

    // Normal(0, sigma) rejected outside [-cut, cut].
    double truncated_normal(double sigma, double cut);

    // Independent child stream; deterministic in (seed, label).
    CounterRng derive(std::string_view label) const;
    CounterRng derive(std::uint64_t index) const;

    std::uint64_t seed() const { return key_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

// FNV-1a 64-bit hash, also used for file/checkpoint digests.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace pbp
