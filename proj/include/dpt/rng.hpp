#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dpt {

/// Seeded pseudo-random source with fully specified output mapping.
///
/// All draws are derived from std::mt19937_64 through explicit arithmetic
/// (no std::*_distribution), so a given seed yields the same stream on every
/// platform and standard library. Seeded runs are therefore byte-reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    /// Standard normal via the Box-Muller transform (pairs are cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer on [0, n) by rejection sampling; n must be > 0.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    /// Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace dpt
