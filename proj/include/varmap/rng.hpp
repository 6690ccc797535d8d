#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace varmap {

/// Seeded generator with a fixed Gaussian transform.
///
/// std::normal_distribution is implementation-defined, so Gaussians are drawn
/// through an explicit Box-Muller step; streams are reproducible for a given
/// seed independent of the standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    /// Uniform in [0, 1).
    double uniform() {
        // 53 random bits -> double in [0,1)
        return (gen_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    uint64_t raw() { return gen_(); }

    /// Derive an independent stream, e.g. one per frame or per sample.
    static uint64_t substream(uint64_t seed, uint64_t index) {
        // splitmix64 over (seed, index)
        uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace varmap
