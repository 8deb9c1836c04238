#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "fkheat/core.hpp"
#include "fkheat/quadrature.hpp"

// Stable-law machinery.  The isotropic alpha-stable process S (characteristic
// exponent |xi|^alpha) is realized as Brownian motion subordinated by a
// one-sided beta-stable clock, beta = alpha/2:
//   S_t = W_{T_t},  E e^{-u T_t} = e^{-t (2u)^{beta}},  T_t = 2 t^{1/beta} T0
// with T0 standard one-sided beta-stable (Laplace exponent u^beta).  The
// density of T0 is evaluated by Pollard's integral representation for small
// arguments and by the convergent inverse-power series for large ones.

namespace fkheat {

/// Density coefficient of the Levy measure of the isotropic alpha-stable
/// process: nu(dz) = stable_levy_constant(d, alpha) |z|^{-d-alpha} dz.
inline double stable_levy_constant(int d, double alpha) {
    return alpha * std::pow(2.0, alpha - 1.0) * std::tgamma(0.5 * (d + alpha)) /
           (std::pow(pi, 0.5 * d) * std::tgamma(1.0 - 0.5 * alpha));
}

/// Density of the standard one-sided beta-stable law, beta in (0,1),
/// normalized by E e^{-u T0} = e^{-u^beta}.
class OneSidedStable {
  public:
    explicit OneSidedStable(double beta) : beta_(beta) {
        if (!(beta > 0.0 && beta < 1.0)) throw config_error("OneSidedStable: beta in (0,1)");
    }

    double beta() const { return beta_; }

    /// Leading tail coefficient: f(x) ~ tail_coeff * x^{-1-beta} as x -> inf.
    double tail_coeff() const { return beta_ / std::tgamma(1.0 - beta_); }

    double density(double x) const {
        if (!(x > 0.0)) return 0.0;
        if (std::abs(beta_ - 0.5) < 1e-14) {
            // Levy closed form for E e^{-u T} = e^{-sqrt(u)}.
            return std::pow(x, -1.5) * std::exp(-0.25 / x) / (2.0 * std::sqrt(pi));
        }
        return (x >= 3.0) ? series(x) : pollard(x);
    }

    // Both evaluation routes are exposed so they can be cross-checked on the
    // overlap region; density() picks the numerically favorable one.

    // Convergent series: f(x) = (1/pi) sum_k (-1)^{k+1} Gamma(k beta + 1)/k!
    //                            sin(pi beta k) x^{-k beta - 1}.
    double series(double x) const {
        double lx = std::log(x);
        Kahan acc;
        double prev = 0.0;
        for (int k = 1; k < 200; ++k) {
            double lt = std::lgamma(k * beta_ + 1.0) - std::lgamma(k + 1.0) - (k * beta_ + 1.0) * lx;
            double term = std::exp(lt) * std::sin(pi * beta_ * k);
            if (k % 2 == 0) term = -term;
            acc.add(term);
            double m = std::abs(term);
            if (k > 3 && m < 1e-17 * std::abs(acc.value()) && prev < 1e-17 * std::abs(acc.value())) break;
            prev = m;
        }
        return acc.value() / pi;
    }

    // Pollard integral: with g = beta/(1-beta) and
    //   a(phi) = sin(beta phi)^{g} sin((1-beta) phi) / sin(phi)^{1+g},
    // f(x) = (g/pi) x^{-1/(1-beta)} int_0^pi a(phi) exp(-x^{-g} a(phi)) dphi.
    double pollard(double x) const {
        double g = beta_ / (1.0 - beta_);
        double c = std::pow(x, -g);
        auto a_of = [&](double phi) -> double {
            if (phi <= 0.0) return std::pow(beta_, g) * (1.0 - beta_);
            double sb = std::sin(beta_ * phi), s1 = std::sin((1.0 - beta_) * phi), s = std::sin(phi);
            if (s <= 0.0) return std::numeric_limits<double>::infinity();
            double la = g * std::log(sb) + std::log(s1) - (1.0 + g) * std::log(s);
            return std::exp(la);
        };
        // Integrand a e^{-c a} dies once c a exceeds ~746; find that angle.
        double phi_hi = pi;
        {
            double a_cut = 746.0 / c;
            double lo = 0.0, hi = pi - 1e-13;
            if (a_of(hi) > a_cut) {
                for (int it = 0; it < 200; ++it) {
                    double mid = 0.5 * (lo + hi);
                    (a_of(mid) > a_cut ? hi : lo) = mid;
                }
                phi_hi = hi;
            }
        }
        // Peak of a e^{-c a} sits where a = 1/c.
        double phi_peak = -1.0;
        if (a_of(0.0) < 1.0 / c && a_of(phi_hi) > 1.0 / c) {
            double lo = 0.0, hi = phi_hi;
            for (int it = 0; it < 200; ++it) {
                double mid = 0.5 * (lo + hi);
                (a_of(mid) > 1.0 / c ? hi : lo) = mid;
            }
            phi_peak = 0.5 * (lo + hi);
        }
        auto h = [&](double phi) {
            double a = a_of(phi);
            double e = c * a;
            return e > 745.0 ? 0.0 : a * std::exp(-e);
        };
        double integral = 0.0;
        if (phi_peak > 0.0 && phi_peak < phi_hi) {
            integral = integrate_gk(h, 0.0, phi_peak, 1e-12) + integrate_gk(h, phi_peak, phi_hi, 1e-12);
        } else {
            integral = integrate_gk(h, 0.0, phi_hi, 1e-12);
        }
        double lf = std::log(g / pi) - std::log(x) / (1.0 - beta_);
        return std::exp(lf) * integral;
    }

  private:
    double beta_;
};

/// Cached evaluator for the subordinator density: closed form at beta = 1/2,
/// otherwise a log-log spline over a wide grid with series tails outside.
class SubordinatorDensity {
  public:
    explicit SubordinatorDensity(double beta)
        : raw_(beta), closed_(std::abs(beta - 0.5) < 1e-14) {
        if (!closed_) build();
    }

    double beta() const { return raw_.beta(); }
    double tail_coeff() const { return raw_.tail_coeff(); }

    double operator()(double s) const {
        if (!(s > 0.0)) return 0.0;
        if (closed_) return raw_.density(s);
        if (s >= s_lo_ && s <= s_hi_) {
            double lf = spline_(std::log(s));
            return std::exp(lf);
        }
        return raw_.density(s);
    }

    /// A rough central mass location: the mode is O(1) for all beta.
    double mode_scale() const { return 1.0; }

  private:
    OneSidedStable raw_;
    bool closed_;
    double s_lo_ = 1e-4, s_hi_ = 1e9;
    CubicSpline spline_;

    void build() {
        // log f is smooth in log s; 600 nodes give ~1e-10 interpolation error.
        int n = 600;
        std::vector<double> us(static_cast<size_t>(n)); std::vector<double> vs(static_cast<size_t>(n));
        double u0 = std::log(s_lo_), u1 = std::log(s_hi_);
        for (int i = 0; i < n; ++i) {
            double u = u0 + (u1 - u0) * i / (n - 1);
            double f = raw_.density(std::exp(u));
            if (!(f > 0.0)) f = 5e-324;
            us[size_t(i)] = u;
            vs[size_t(i)] = std::log(f);
        }
        spline_.build(std::move(us), std::move(vs));
    }
};

/// Density at radius r of the isotropic alpha-stable process S_t
/// (characteristic function e^{-t |xi|^alpha}) in dimension d.
class IsotropicStable {
  public:
    IsotropicStable(int d, double alpha)
        : d_(d), alpha_(alpha), sub_(std::make_shared<SubordinatorDensity>(0.5 * alpha)) {
        if (d != 2 && d != 3) throw config_error("IsotropicStable: d must be 2 or 3");
        if (!(alpha > 0.0 && alpha < 2.0)) throw config_error("IsotropicStable: alpha in (0,2)");
    }

    double density(double t, double r) const {
        if (!(t > 0.0)) throw config_error("IsotropicStable: t must be positive");
        if (std::abs(alpha_ - 1.0) < 1e-14) {
            // Multivariate Cauchy: Gamma((d+1)/2) / pi^{(d+1)/2} * t / (t^2+r^2)^{(d+1)/2}.
            double cd = std::tgamma(0.5 * (d_ + 1)) * std::pow(pi, -0.5 * (d_ + 1));
            return cd * t / std::pow(t * t + r * r, 0.5 * (d_ + 1));
        }
        return density_via_subordination(t, r);
    }

    const SubordinatorDensity& subordinator() const { return *sub_; }

    // int_0^inf (2 pi v)^{-d/2} exp(-r^2/(2v)) f_beta(s) ds,  v = 2 t^{2/alpha} s.
    double density_via_subordination(double t, double r) const {
        double scale = 2.0 * std::pow(t, 2.0 / alpha_);
        auto integrand = [&](double s) -> double {
            double v = scale * s;
            double g = std::pow(2.0 * pi * v, -0.5 * d_) * std::exp(-r * r / (2.0 * v));
            return g * (*sub_)(s);
        };
        // Mass sits near s ~ max(1, r^2/scale); integrate on log panels around it.
        double s_mid = std::max(1.0, r * r / scale);
        double s_lo = 1e-6 * s_mid, s_hi = 1e7 * s_mid;
        double v = 0.0;
        v += gauss_log_panels(integrand, s_lo, s_hi, 48, 12);
        // Analytic tail above s_hi: g ~ (2 pi v)^{-d/2}, f ~ A s^{-1-beta}.
        double beta = 0.5 * alpha_;
        double tail = sub_->tail_coeff() * std::pow(2.0 * pi * scale, -0.5 * d_) *
                      std::pow(s_hi, -beta - 0.5 * d_) / (beta + 0.5 * d_);
        return v + tail;
    }

  private:
    int d_;
    double alpha_;
    std::shared_ptr<SubordinatorDensity> sub_;
};

} // namespace fkheat
