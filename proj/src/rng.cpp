#include "pbp/rng.hpp"

#include <cmath>

namespace pbp {

namespace {

inline std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
}

}  // namespace

std::uint64_t CounterRng::next_u64() {
    counter_ += 0x9e3779b97f4a7c15ull;
    return mix64(counter_ ^ key_);
}

double CounterRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t CounterRng::uniform_int(std::uint64_t n) {
    // Debiased modulo: reject draws from the truncated final range.
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

double CounterRng::normal() {
    // u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
}

double CounterRng::truncated_normal(double sigma, double cut) {
    for (;;) {
        const double x = normal() * sigma;
        if (x >= -cut && x <= cut) return x;
    }
}

CounterRng CounterRng::derive(std::string_view label) const {
    return CounterRng(mix64(key_ ^ fnv1a64(label)));
}

CounterRng CounterRng::derive(std::uint64_t index) const {
    return CounterRng(mix64(key_ ^ mix64(index + 0x51ed270b5a3c68ull)));
}

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(s.data(), s.size());
}

}  // namespace pbp
