// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace lowflow {

// splitmix64 step; used both as a stream mixer and to seed engines.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic combination of a seed with stream coordinates. Substreams
// derived this way are what make results independent of thread count: each
// logical unit of work (a row, a trial, a step) owns its own stream, so the
// order in which units execute cannot change any draw.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a) {
    return splitmix64(seed ^ splitmix64(a + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(seed, a), b);
}

// Compile-time tag for naming substreams ("eps", "batch", ...). FNV-1a.
constexpr std::uint64_t stream_tag(const char* s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (; *s; ++s) h = (h ^ static_cast<std::uint64_t>(*s)) * 0x100000001b3ULL;
    return h;
}

// One random stream. Cheap to construct; make one per logical unit of work
// rather than sharing a long-lived engine across units.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    double uniform() { return unit_(engine_); }                    // [0, 1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() { return normal_(engine_); }
    std::uint64_t next_u64() { return engine_(); }

    // Uniform integer in [0, n). n must be positive.
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(
            0, static_cast<std::uint64_t>(n) - 1)(engine_));
    }

  private:
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

inline Rng substream(std::uint64_t seed, std::uint64_t a) { return Rng(mix_seed(seed, a)); }
inline Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return Rng(mix_seed(seed, a, b));
}

}  // namespace lowflow
