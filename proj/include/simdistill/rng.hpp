#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace simdistill {

// Seeded source of randomness. Bounded draws use rejection sampling on the raw
// mt19937_64 stream so sequences are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n);

    // Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // Uniform double in [0, 1) with 53 bits of randomness.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (no cached second value).
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// 64-bit FNV-1a of a byte string.
std::uint64_t fnv1a64(std::string_view bytes);

// Seed for an independent stream derived from a global seed and a label
// (scene id, domain name, ...).
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view label);

}  // namespace simdistill
