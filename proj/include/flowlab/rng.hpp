#pragma once

#include <cstdint>
#include <random>

#include "flowlab/vec.hpp"

namespace flowlab {

/// Seeded random stream used everywhere randomness is needed. One Rng per
/// run/experiment; never shared across concurrent runs.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    double gaussian() { return normal_(engine_); }

    /// Uniform in [0, 1).
    double uniform() { return uniform_(engine_); }

    uint64_t next_u64() { return engine_(); }

    Vec gaussian_vec(int d) {
        Vec v(static_cast<size_t>(d));
        for (auto& x : v) x = gaussian();
        return v;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Decorrelated per-stream seed (stream = source index, step kind, ...).
/// Keeps independent runs reproducible without sharing one generator.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    return splitmix64(base ^ splitmix64(stream + 1));
}

}  // namespace flowlab
