#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

// Core value types shared by every module: model parameters for the
// reference jump diffusion, small point/vector helpers for d in {2,3},
// and a stable hash used to key on-disk caches.

namespace fkheat {

inline constexpr double pi = 3.14159265358979323846;

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Surface area of the unit sphere S^{d-1}.
inline double sphere_area(int d) {
    switch (d) {
        case 1: return 2.0;
        case 2: return 2.0 * pi;
        case 3: return 4.0 * pi;
        default: throw config_error("sphere_area: unsupported dimension " + std::to_string(d));
    }
}

/// Volume of the unit ball in R^d.
inline double ball_volume(int d) { return sphere_area(d) / d; }

/// Parameters of the reference process  X_t = x + sigma*B_t + a^{1/alpha}*S_t
/// (independent Brownian and isotropic alpha-stable parts) together with the
/// comparison-envelope constants certified for it.
struct ModelParams {
    int d = 2;              // spatial dimension, 2 or 3
    double alpha = 1.0;     // stable index in (0,2)
    double sigma2 = 1.0;    // diffusion coefficient (variance rate), > 0
    double a = 1.0;         // jump intensity multiplier, >= 0
    double envC = 1.0;      // certified envelope constant, >= 1
    double lambda_hi = 0.45; // upper-envelope Gaussian rate, in (0,1]
    double lambda_lo = 0.55; // lower-envelope Gaussian rate, in (0,1]

    void validate() const {
        if (d != 2 && d != 3) throw config_error("ModelParams: d must be 2 or 3");
        if (!(alpha > 0.0 && alpha < 2.0)) throw config_error("ModelParams: alpha must lie in (0,2)");
        if (!(sigma2 > 0.0)) throw config_error("ModelParams: sigma2 must be positive");
        if (!(a >= 0.0)) throw config_error("ModelParams: a must be nonnegative");
        if (!(envC >= 1.0)) throw config_error("ModelParams: envC must be >= 1");
        if (!(lambda_hi > 0.0 && lambda_hi <= 1.0)) throw config_error("ModelParams: lambda_hi must lie in (0,1]");
        if (!(lambda_lo > 0.0 && lambda_lo <= 1.0)) throw config_error("ModelParams: lambda_lo must lie in (0,1]");
    }
};

/// Dense point in R^d, d <= 3.  Unused coordinates stay zero so norms and
/// differences can loop over all three slots unconditionally.
struct Point {
    std::array<double, 3> v{0.0, 0.0, 0.0};
    int d = 2;

    Point() = default;
    Point(double x, double y) : v{x, y, 0.0}, d(2) {}
    Point(double x, double y, double z) : v{x, y, z}, d(3) {}

    double& operator[](int i) { return v[size_t(i)]; }
    double operator[](int i) const { return v[size_t(i)]; }

    double norm2() const { return v[0] * v[0] + v[1] * v[1] + v[2] * v[2]; }
    double norm() const { return std::sqrt(norm2()); }

    Point operator+(const Point& o) const {
        Point r = *this;
        for (int i = 0; i < 3; ++i) r.v[size_t(i)] += o.v[size_t(i)];
        return r;
    }
    Point operator-(const Point& o) const {
        Point r = *this;
        for (int i = 0; i < 3; ++i) r.v[size_t(i)] -= o.v[size_t(i)];
        return r;
    }
    Point operator*(double c) const {
        Point r = *this;
        for (auto& x : r.v) x *= c;
        return r;
    }
};

inline double dist(const Point& a, const Point& b) { return (a - b).norm(); }
inline double dist2(const Point& a, const Point& b) { return (a - b).norm2(); }

/// FNV-1a, used to fingerprint model/grid/tolerance tuples for cache keys.
struct Fnv1a {
    std::uint64_t h = 1469598103934665603ull;
    void bytes(const void* p, size_t n) {
        auto* c = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= c[i];
            h *= 1099511628211ull;
        }
    }
    void add(double x) { bytes(&x, sizeof x); }
    void add(int x) { bytes(&x, sizeof x); }
    void add(std::uint64_t x) { bytes(&x, sizeof x); }
    void add(const std::string& s) { bytes(s.data(), s.size()); }
};

inline std::uint64_t hash_model(const ModelParams& m) {
    Fnv1a f;
    f.add(m.d);
    f.add(m.alpha);
    f.add(m.sigma2);
    f.add(m.a);
    return f.h;
}

/// Kahan-compensated accumulator; keeps reductions order-stable and accurate.
struct Kahan {
    double s = 0.0, c = 0.0;
    void add(double x) {
        double y = x - c;
        double t = s + y;
        c = (t - s) - y;
        s = t;
    }
    double value() const { return s; }
};

} // namespace fkheat
