#pragma once

#include "disperse/types.hpp"

#include <cmath>
#include <cstdint>

namespace disperse {

// Self-contained generator (splitmix64 stream): results are reproducible
// bit-for-bit regardless of platform or standard-library version, and
// per-index streams make parallel sampling independent of the partitioning.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Combine a run seed with a sample index into an independent stream seed.
inline std::uint64_t seed_at(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ull + index * 0xbf58476d1ce4e5b9ull);
    splitmix64(s);
    return s;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // warm up so trivially related seeds decorrelate
        splitmix64(state_);
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (explicit, platform independent).
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform on the unit sphere S^{d-1}.
    Vec unit_vector(int d) {
        Vec v(d);
        double n2 = 0.0;
        do {
            for (int i = 0; i < d; ++i) v[i] = gaussian();
            n2 = v.squaredNorm();
        } while (n2 < 1e-24);
        return v / std::sqrt(n2);
    }

    /// Uniform in the solid ball of given radius.
    Vec in_ball(int d, double radius) {
        Vec u = unit_vector(d);
        double r = radius * std::pow(uniform(), 1.0 / d);
        return r * u;
    }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace disperse
