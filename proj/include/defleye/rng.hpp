#pragma once

#include <cmath>
#include <cstdint>

namespace defleye {

// Counter-based random stream: every draw is a pure hash of
// (seed, stream, counter, lane), so renders are reproducible independent of
// thread scheduling and loop order. Streams separate frames, counters index
// pixels.
class CounterRng {
public:
    explicit CounterRng(uint64_t seed) : seed_(seed) {}

    uint64_t bits(uint64_t stream, uint64_t counter, uint64_t lane = 0) const {
        uint64_t x = seed_;
        x = mix(x ^ (0x9e3779b97f4a7c15ull + stream));
        x = mix(x ^ (0xbf58476d1ce4e5b9ull * (counter + 1)));
        x = mix(x ^ (0x94d049bb133111ebull * (lane + 1)));
        return mix(x);
    }

    /// Uniform double in [0, 1).
    double uniform(uint64_t stream, uint64_t counter, uint64_t lane = 0) const {
        return static_cast<double>(bits(stream, counter, lane) >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; consumes lanes (2*lane, 2*lane+1).
    double gaussian(uint64_t stream, uint64_t counter, uint64_t lane = 0) const {
        // (0, 1] so log() stays finite
        double u1 = static_cast<double>((bits(stream, counter, 2 * lane) >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform(stream, counter, 2 * lane + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    uint64_t seed() const { return seed_; }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
};

/// Derives a child seed for an independent sub-task (per-trial seeds etc.).
inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return CounterRng(seed).bits(a, b, 0xd1f3u);
}

}  // namespace defleye
