#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fkheat/core.hpp"

namespace fkheat {

// splitmix64; used to key independent per-index generator streams
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// xoshiro256** seeded from (seed, stream); each stream is statistically
// independent of the others, so path i can be regenerated in isolation
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t x = seed ^ (0xd1342543de82ef95ULL * (stream + 1));
        for (auto& si : s_) si = splitmix64(x ^= 0x9e3779b97f4a7c15ULL);
    }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        std::uint64_t r = rotl(s_[1] * 5, 7) * 9;
        std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return r;
    }

    // uniform on (0,1), never exactly 0 or 1
    double uniform() {
        return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u = uniform(), v = uniform();
        double m = std::sqrt(-2.0 * std::log(u));
        spare_ = m * std::sin(2.0 * pi * v);
        have_spare_ = true;
        return m * std::cos(2.0 * pi * v);
    }

  private:
    std::uint64_t s_[4] = {};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline constexpr int kHaltonPrimes[12] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};

// radical-inverse Halton point; index 0 maps to the sequence's element `skip`
inline double halton(std::uint64_t index, int dim) {
    double base = kHaltonPrimes[dim];
    double inv = 1.0 / base, f = inv, x = 0.0;
    std::uint64_t i = index + 31; // skip the striated head of the sequence
    while (i > 0) {
        x += f * double(i % std::uint64_t(base));
        i /= std::uint64_t(base);
        f *= inv;
    }
    return x;
}

// One quasi-random configuration (t, s, x, y, z[, w]) in the inequality box
// t in [1e-3, 1], 0 < s < t, coordinates in [-5, 5].  Every fifth sample is
// restratified toward the s-boundaries and, when w is present, every seventh
// toward the diagonal w ~ z, where the 3P ratios peak.
struct IneqSample {
    double t = 0.0, s = 0.0;
    Point x, y, z, w;
};

inline Point sample_point(std::uint64_t index, int dim0, int d) {
    Point p = d == 2 ? Point(0.0, 0.0) : Point(0.0, 0.0, 0.0);
    for (int c = 0; c < d; ++c) p[c] = -5.0 + 10.0 * halton(index, dim0 + c);
    return p;
}

inline IneqSample ineq_sample(std::uint64_t index, int d, bool with_w) {
    IneqSample smp;
    smp.t = 1e-3 + (1.0 - 1e-3) * halton(index, 0);
    double us = halton(index, 1);
    if (index % 5 == 0) us = 1e-3 * (us + 1e-6);
    if (index % 5 == 1) us = 1.0 - 1e-3 * (us + 1e-6);
    smp.s = smp.t * std::min(std::max(us, 1e-9), 1.0 - 1e-9);
    smp.x = sample_point(index, 2, d);
    smp.y = sample_point(index, 2 + d, d);
    smp.z = sample_point(index, 2 + 2 * d, d);
    if (with_w) {
        smp.w = sample_point(index, 2 + 3 * d, d);
        if (index % 7 == 2) smp.w = smp.z + (smp.w - smp.z) * 1e-2;
    }
    return smp;
}

} // namespace fkheat
