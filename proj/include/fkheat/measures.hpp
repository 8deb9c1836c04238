#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "fkheat/core.hpp"

namespace fkheat {

// Absolutely continuous signed measure mu = v dx. |v| <= sup_norm everywhere;
// v vanishes outside the ball of support_radius (infinity allowed for global
// closed forms).  radial_abs, when set, gives |v| as a function of |y - center|
// and enables the fast radial evaluation paths.
struct MeasureSpec {
    std::string name;
    std::function<double(const Point&)> v;
    double support_radius = std::numeric_limits<double>::infinity();
    double sup_norm = 0.0;
    Point center{};
    std::optional<double> constant_level;
    std::optional<std::function<double(double)>> radial_abs;

    // radius beyond which |v| is numerically negligible (quadrature cutoff)
    double effective_radius = std::numeric_limits<double>::infinity();

    double operator()(const Point& y) const { return v(y); }
    bool is_zero() const { return sup_norm == 0.0; }

    void validate() const {
        if (!v) throw config_error("MeasureSpec: missing density");
        if (sup_norm < 0.0) throw config_error("MeasureSpec: negative sup_norm");
        if (support_radius <= 0.0) throw config_error("MeasureSpec: nonpositive support radius");
    }
};

// Bounded F(z,w) vanishing in a diagonal_gap neighbourhood of the diagonal and
// outside range_radius.  radial_profile, when set, gives |F(z,w)| as a
// function of |z - w| (translation-invariant family).
struct JumpFunctionSpec {
    std::string name;
    std::function<double(const Point&, const Point&)> F;
    double sup_norm = 0.0;
    double diagonal_gap = 0.0;
    double range_radius = std::numeric_limits<double>::infinity();
    std::optional<std::function<double(double)>> radial_profile;

    double operator()(const Point& z, const Point& w) const { return F(z, w); }
    bool is_zero() const { return sup_norm == 0.0; }

    void validate() const {
        if (!F) throw config_error("JumpFunctionSpec: missing function");
        if (sup_norm < 0.0) throw config_error("JumpFunctionSpec: negative sup_norm");
        if (diagonal_gap < 0.0) throw config_error("JumpFunctionSpec: negative diagonal gap");
        if (range_radius <= diagonal_gap)
            throw config_error("JumpFunctionSpec: range_radius must exceed diagonal_gap");
    }
};

inline MeasureSpec measure_zero() {
    MeasureSpec m;
    m.name = "zero";
    m.v = [](const Point&) { return 0.0; };
    m.sup_norm = 0.0;
    m.constant_level = 0.0;
    m.radial_abs = [](double) { return 0.0; };
    m.effective_radius = 1.0;
    return m;
}

inline MeasureSpec measure_constant(double level) {
    MeasureSpec m;
    m.name = "constant";
    m.v = [level](const Point&) { return level; };
    m.sup_norm = std::abs(level);
    m.constant_level = level;
    m.radial_abs = [level](double) { return std::abs(level); };
    return m;
}

inline MeasureSpec measure_uniform_ball(double level, double radius, Point center = {}) {
    if (radius <= 0.0) throw config_error("uniform_ball: radius must be positive");
    MeasureSpec m;
    m.name = "uniform_ball";
    m.v = [level, radius, center](const Point& y) {
        return dist(y, center) <= radius ? level : 0.0;
    };
    m.support_radius = radius + center.norm();
    m.sup_norm = std::abs(level);
    m.center = center;
    m.radial_abs = [level, radius](double rho) { return rho <= radius ? std::abs(level) : 0.0; };
    m.effective_radius = radius;
    return m;
}

inline MeasureSpec measure_gaussian_bump(double amplitude, double width, Point center = {}) {
    if (width <= 0.0) throw config_error("gaussian_bump: width must be positive");
    MeasureSpec m;
    m.name = "gaussian_bump";
    m.v = [amplitude, width, center](const Point& y) {
        double q = dist2(y, center) / (2.0 * width * width);
        return amplitude * std::exp(-q);
    };
    m.sup_norm = std::abs(amplitude);
    m.center = center;
    m.radial_abs = [amplitude, width](double rho) {
        return std::abs(amplitude) * std::exp(-rho * rho / (2.0 * width * width));
    };
    m.effective_radius = 10.0 * width; // |v| < 2e-22 sup beyond
    return m;
}

// |y|^{-p} on r <= outer_radius, capped at `cap` to keep the density bounded.
// With p >= d the cap preserves the non-integrable signature on all scales the
// membership probe can resolve.
inline MeasureSpec measure_radial_power(double p, double outer_radius, double cap = 1e4) {
    if (p <= 0.0 || outer_radius <= 0.0 || cap <= 0.0)
        throw config_error("radial_power: parameters must be positive");
    MeasureSpec m;
    m.name = "radial_power";
    m.v = [p, outer_radius, cap](const Point& y) {
        double r = y.norm();
        if (r > outer_radius) return 0.0;
        return std::min(std::pow(r, -p), cap);
    };
    m.support_radius = outer_radius;
    m.sup_norm = cap;
    m.radial_abs = [p, outer_radius, cap](double rho) {
        if (rho > outer_radius) return 0.0;
        return std::min(std::pow(rho, -p), cap);
    };
    m.effective_radius = outer_radius;
    return m;
}

inline JumpFunctionSpec jump_zero() {
    JumpFunctionSpec j;
    j.name = "zero";
    j.F = [](const Point&, const Point&) { return 0.0; };
    j.sup_norm = 0.0;
    j.diagonal_gap = 1.0;
    j.range_radius = 2.0;
    j.radial_profile = [](double) { return 0.0; };
    return j;
}

// theta on the annulus delta <= |z-w| <= range, zero elsewhere
inline JumpFunctionSpec jump_annulus(double theta, double delta, double range) {
    if (delta <= 0.0 || range <= delta) throw config_error("annulus: need 0 < delta < range");
    JumpFunctionSpec j;
    j.name = "annulus";
    j.F = [theta, delta, range](const Point& z, const Point& w) {
        double r = dist(z, w);
        return (r >= delta && r <= range) ? theta : 0.0;
    };
    j.sup_norm = std::abs(theta);
    j.diagonal_gap = delta;
    j.range_radius = range;
    j.radial_profile = [theta, delta, range](double r) {
        return (r >= delta && r <= range) ? std::abs(theta) : 0.0;
    };
    return j;
}

// C^1 ramp up over [delta, delta+ramp], down over [range-ramp, range]
inline JumpFunctionSpec jump_smooth_annulus(double theta, double delta, double range) {
    if (delta <= 0.0 || range <= delta) throw config_error("smooth_annulus: need 0 < delta < range");
    double ramp = 0.25 * (range - delta);
    auto shape = [delta, range, ramp](double r) {
        if (r <= delta || r >= range) return 0.0;
        auto smooth = [](double u) { return u * u * (3.0 - 2.0 * u); };
        if (r < delta + ramp) return smooth((r - delta) / ramp);
        if (r > range - ramp) return smooth((range - r) / ramp);
        return 1.0;
    };
    JumpFunctionSpec j;
    j.name = "smooth_annulus";
    j.F = [theta, shape](const Point& z, const Point& w) { return theta * shape(dist(z, w)); };
    j.sup_norm = std::abs(theta);
    j.diagonal_gap = delta;
    j.range_radius = range;
    j.radial_profile = [theta, shape](double r) { return std::abs(theta) * shape(r); };
    return j;
}

} // namespace fkheat
