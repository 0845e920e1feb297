#pragma once

#include <cmath>
#include <cstdint>

namespace pgcn {

// Deterministic PRNG (splitmix64). Identical seeds give identical streams on
// every platform; std:: distributions are avoided for that reason.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 24 bits of mantissa.
    float uniform() {
        return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
    }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    int range(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    // Standard normal via Box-Muller.
    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        float r = std::sqrt(-2.0f * std::log(u1));
        float a = 6.28318530717958647692f * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    float normal(float mean, float sigma) { return mean + sigma * normal(); }

    // Normal truncated to two sigma, the init convention for attention weights.
    float truncated_normal(float sigma) {
        float z = normal();
        while (z > 2.0f || z < -2.0f) z = normal();
        return z * sigma;
    }

    // Independent child stream; tag separates consumers of one master seed.
    Rng fork(uint64_t tag) {
        Rng mix(state_ ^ (0x632be59bd9b4e019ull * (tag + 1)));
        return Rng(mix.next_u64());
    }

private:
    uint64_t state_;
    float spare_ = 0.0f;
    bool have_spare_ = false;
};

}  // namespace pgcn
