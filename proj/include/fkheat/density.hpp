#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "fkheat/core.hpp"
#include "fkheat/kernels.hpp"
#include "fkheat/quadrature.hpp"
#include "fkheat/stable.hpp"

// Transition density of the reference process X_t = x + sigma B_t + a^{1/alpha} S_t.
// Writing the stable part as subordinated Brownian motion, X_t - x is Gaussian
// with random variance  v = sigma2 t + 2 (a t)^{2/alpha} s,  s ~ one-sided
// (alpha/2)-stable, so the density is a one-dimensional mixture integral.

namespace fkheat {

inline double gaussian_density_radial(int d, double v, double r) {
    double e = r * r / (2.0 * v);
    if (e > 700.0) {
        double lg = -0.5 * d * std::log(2.0 * pi * v) - e;
        return lg < -745.0 ? 0.0 : std::exp(lg);
    }
    return std::pow(2.0 * pi * v, -0.5 * d) * std::exp(-e);
}

class BaseDensity {
  public:
    explicit BaseDensity(const ModelParams& m)
        : m_(m), sub_(std::make_shared<SubordinatorDensity>(0.5 * m.alpha)) {
        m_.validate();
    }

    const ModelParams& model() const { return m_; }

    /// Variance scale of the subordinated part: v = sigma2 t + subord_scale(t) * s.
    double subord_scale(double t) const { return 2.0 * std::pow(m_.a * t, 2.0 / m_.alpha); }

    /// p(t, x, y) as a function of r = |x - y|.
    double operator()(double t, double r) const {
        if (!(t > 0.0)) throw config_error("BaseDensity: t must be positive");
        if (m_.a == 0.0) return gaussian_density_radial(m_.d, m_.sigma2 * t, r);
        return mixture(t, r);
    }

    double operator()(double t, const Point& x, const Point& y) const { return (*this)(t, dist(x, y)); }

    const SubordinatorDensity& subordinator() const { return *sub_; }

  private:
    ModelParams m_;
    std::shared_ptr<SubordinatorDensity> sub_;

    double mixture(double t, double r) const {
        double base = m_.sigma2 * t;
        double scale = subord_scale(t);
        auto integrand = [&](double s) -> double {
            double v = base + scale * s;
            return gaussian_density_radial(m_.d, v, r) * (*sub_)(s);
        };
        // The mixture mass sits near s ~ 1 (clock mode) and, for large r,
        // near s ~ r^2/scale where the Gaussian factor stops suppressing.
        double s_mid = std::max(1.0, (r * r - base) / scale);
        double s_lo = 1e-7 * s_mid;
        double s_hi = 1e8 * std::max(s_mid, 1.0);
        double v = gauss_log_panels(integrand, s_lo, s_hi, 52, 12);
        double beta = 0.5 * m_.alpha;
        double tail = sub_->tail_coeff() * std::pow(2.0 * pi * scale, -0.5 * m_.d) *
                      std::pow(s_hi, -beta - 0.5 * m_.d) / (beta + 0.5 * m_.d);
        return v + tail;
    }
};

/// Cubic spline of log p(t, .) against log r on [r_min, r_max], with a
/// power-law tail extrapolation past r_max.  Immutable after construction;
/// safe for concurrent readers.
class RadialDensitySpline {
  public:
    RadialDensitySpline() = default;

    template <class F>
    RadialDensitySpline(F&& density_of_r, int d, double alpha, double r_min, double r_max, int n) {
        build(std::forward<F>(density_of_r), d, alpha, r_min, r_max, n);
    }

    template <class F>
    void build(F&& density_of_r, int d, double alpha, double r_min, double r_max, int n) {
        d_ = d;
        alpha_ = alpha;
        r_min_ = r_min;
        r_max_ = r_max;
        std::vector<double> us(static_cast<size_t>(n)); std::vector<double> vs(static_cast<size_t>(n));
        double u0 = std::log(r_min), u1 = std::log(r_max);
        for (int i = 0; i < n; ++i) {
            double u = u0 + (u1 - u0) * i / (n - 1);
            double p = density_of_r(std::exp(u));
            us[size_t(i)] = u;
            vs[size_t(i)] = std::log(std::max(p, 5e-324));
        }
        value_at_rmin_ = std::exp(vs[0]);
        value_at_rmax_ = std::exp(vs[size_t(n - 1)]);
        spline_.build(std::move(us), std::move(vs));
        built_ = true;
    }

    bool built() const { return built_; }
    double r_max() const { return r_max_; }

    double operator()(double r) const {
        if (r <= r_min_) return value_at_rmin_;
        if (r >= r_max_) return value_at_rmax_ * std::pow(r / r_max_, -double(d_) - alpha_);
        return std::exp(spline_(std::log(r)));
    }

  private:
    CubicSpline spline_;
    int d_ = 2;
    double alpha_ = 1.0;
    double r_min_ = 1e-4, r_max_ = 10.0;
    double value_at_rmin_ = 0.0, value_at_rmax_ = 0.0;
    bool built_ = false;
};

} // namespace fkheat
