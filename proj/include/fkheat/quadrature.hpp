#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "fkheat/core.hpp"

// Quadrature toolkit: adaptive 1-D rules (Boost-backed), fixed Gauss-Legendre
// tables, composite panels on log-spaced meshes, a not-a-knot cubic spline,
// scaled Bessel helpers, and radial / two-center reductions of isotropic
// integrals over R^d.

namespace fkheat {

template <class F>
double integrate_gk(F&& f, double a, double b, double tol = 1e-10, double* err_out = nullptr) {
    if (a == b) return 0.0;
    double err = 0.0;
    double v = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 15, tol, &err);
    if (err_out) *err_out = err;
    return v;
}

/// Adaptive rule tolerant of integrable endpoint singularities.
template <class F>
double integrate_ts(F&& f, double a, double b, double tol = 1e-10, double* err_out = nullptr) {
    thread_local boost::math::quadrature::tanh_sinh<double> rule(15);
    double err = 0.0, l1 = 0.0;
    double v = rule.integrate(f, a, b, tol, &err, &l1);
    if (err_out) *err_out = err;
    return v;
}

/// Integral over (a, infinity) for decaying integrands.
template <class F>
double integrate_semi(F&& f, double a, double tol = 1e-10, double* err_out = nullptr) {
    thread_local boost::math::quadrature::exp_sinh<double> rule(12);
    double err = 0.0, l1 = 0.0;
    auto shifted = [&](double u) { return f(a + u); };
    double v = rule.integrate(shifted, tol, &err, &l1);
    if (err_out) *err_out = err;
    return v;
}

/// Gauss-Legendre nodes/weights on [-1,1], computed once by Newton iteration.
struct GaussRule {
    std::vector<double> x, w;
};

inline const GaussRule& gauss_rule(int n) {
    thread_local std::vector<GaussRule> cache(65);
    if (n < 1 || n > 64) throw config_error("gauss_rule: order out of range");
    GaussRule& r = cache[size_t(n)];
    if (!r.x.empty()) return r;
    r.x.resize(size_t(n));
    r.w.resize(size_t(n));
    int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(pi * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
            }
            pp = n * (z * p0 - p1) / (z * z - 1.0);
            double dz = p0 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        r.x[size_t(i)] = -z;
        r.x[size_t(n - 1 - i)] = z;
        r.w[size_t(i)] = 2.0 / ((1.0 - z * z) * pp * pp);
        r.w[size_t(n - 1 - i)] = r.w[size_t(i)];
    }
    return r;
}

/// Fixed Gauss-Legendre on [a,b].
template <class F>
double gauss_fixed(F&& f, double a, double b, int n) {
    const GaussRule& r = gauss_rule(n);
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    Kahan acc;
    for (size_t i = 0; i < r.x.size(); ++i) acc.add(r.w[i] * f(mid + half * r.x[i]));
    return acc.value() * half;
}

/// Composite Gauss on log-spaced panels over [a,b], 0 < a < b.  Suits smooth
/// integrands with power-law variation across decades.
template <class F>
double gauss_log_panels(F&& f, double a, double b, int panels, int order) {
    if (!(a > 0.0 && b > a)) throw config_error("gauss_log_panels: need 0 < a < b");
    double la = std::log(a), lb = std::log(b);
    Kahan acc;
    for (int p = 0; p < panels; ++p) {
        double u0 = std::exp(la + (lb - la) * p / panels);
        double u1 = std::exp(la + (lb - la) * (p + 1) / panels);
        acc.add(gauss_fixed(f, u0, u1, order));
    }
    return acc.value();
}

/// Not-a-knot cubic spline through (x_i, y_i); natural fallback for n < 4.
class CubicSpline {
  public:
    CubicSpline() = default;
    CubicSpline(std::vector<double> xs, std::vector<double> ys) { build(std::move(xs), std::move(ys)); }

    void build(std::vector<double> xs, std::vector<double> ys) {
        x_ = std::move(xs);
        y_ = std::move(ys);
        size_t n = x_.size();
        if (n != y_.size() || n < 2) throw config_error("CubicSpline: bad inputs");
        m_.assign(n, 0.0);
        if (n == 2) return;
        std::vector<double> h(n - 1);
        for (size_t i = 0; i + 1 < n; ++i) {
            h[i] = x_[i + 1] - x_[i];
            if (!(h[i] > 0.0)) throw config_error("CubicSpline: nodes must increase");
        }
        // Tridiagonal system for interior moments; not-a-knot folds the end
        // moments into rows 1 and n-2 (natural ends when n==3).
        size_t k = n - 2;
        std::vector<double> lo(k, 0.0), di(k, 0.0), up(k, 0.0), rhs(k, 0.0);
        for (size_t i = 1; i + 1 <= n - 2 + 1 && i <= n - 2; ++i) {
            size_t j = i - 1;
            lo[j] = h[i - 1] / 6.0;
            di[j] = (h[i - 1] + h[i]) / 3.0;
            up[j] = h[i] / 6.0;
            rhs[j] = (y_[i + 1] - y_[i]) / h[i] - (y_[i] - y_[i - 1]) / h[i - 1];
        }
        bool nak = n >= 4;
        double a0 = 0.0, b0 = 0.0, aN = 0.0, bN = 0.0; // m_0 = a0 m_1 + b0 m_2, m_{n-1} = aN m_{n-2} + bN m_{n-3}
        if (nak) {
            a0 = 1.0 + h[0] / h[1];
            b0 = -h[0] / h[1];
            aN = 1.0 + h[n - 2] / h[n - 3];
            bN = -h[n - 2] / h[n - 3];
            di[0] += lo[0] * a0;
            up[0] += lo[0] * b0;
            lo[0] = 0.0;
            di[k - 1] += up[k - 1] * aN;
            lo[k - 1] += up[k - 1] * bN;
            up[k - 1] = 0.0;
        }
        for (size_t i = 1; i < k; ++i) {
            double f = lo[i] / di[i - 1];
            di[i] -= f * up[i - 1];
            rhs[i] -= f * rhs[i - 1];
        }
        std::vector<double> sol(k, 0.0);
        sol[k - 1] = rhs[k - 1] / di[k - 1];
        for (size_t i = k - 1; i-- > 0;) sol[i] = (rhs[i] - up[i] * sol[i + 1]) / di[i];
        for (size_t i = 0; i < k; ++i) m_[i + 1] = sol[i];
        if (nak) {
            m_[0] = a0 * m_[1] + b0 * m_[2];
            m_[n - 1] = aN * m_[n - 2] + bN * m_[n - 3];
        }
    }

    double operator()(double x) const {
        size_t n = x_.size();
        size_t i;
        if (x <= x_[0]) {
            i = 0;
        } else if (x >= x_[n - 1]) {
            i = n - 2;
        } else {
            i = size_t(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin()) - 1;
        }
        double h = x_[i + 1] - x_[i];
        double A = (x_[i + 1] - x) / h, B = 1.0 - A;
        return A * y_[i] + B * y_[i + 1] + ((A * A * A - A) * m_[i] + (B * B * B - B) * m_[i + 1]) * h * h / 6.0;
    }

    const std::vector<double>& xs() const { return x_; }
    const std::vector<double>& ys() const { return y_; }

  private:
    std::vector<double> x_, y_, m_;
};

/// Scaled modified Bessel function exp(-x) I_0(x), x >= 0.
inline double i0e(double x) {
    if (x < 0.0) throw config_error("i0e: negative argument");
    if (x <= 16.0) {
        double q = 0.25 * x * x, term = 1.0, sum = 1.0;
        for (int k = 1; k < 80; ++k) {
            term *= q / (double(k) * double(k));
            sum += term;
            if (term < 1e-17 * sum) break;
        }
        return sum * std::exp(-x);
    }
    double sum = 1.0, term = 1.0;
    for (int k = 1; k <= 12; ++k) {
        double odd = 2.0 * k - 1.0;
        term *= odd * odd / (8.0 * k * x);
        sum += term;
    }
    return sum / std::sqrt(2.0 * pi * x);
}

/// Angular average of the isotropic Gaussian density with variance v per
/// coordinate, taken over directions of w with |w| = rho and |u| = r:
///   d=2:  (1/v) exp(-(r-rho)^2/(2v)) i0e(r rho / v)
///   d=3:  2 pi (2 pi v)^{-3/2} (v/(r rho)) [exp(-(r-rho)^2/2v) - exp(-(r+rho)^2/2v)]
/// so that  int f(|u-w|) G(|w|) dw = int_0^inf G(rho) rho^{d-1} ang_gauss(v,r,rho) drho.
inline double ang_gauss(int d, double v, double r, double rho) {
    double diff = r - rho;
    double e = diff * diff / (2.0 * v);
    if (d == 2) {
        if (e > 700.0) return 0.0;
        return std::exp(-e) * i0e(r * rho / v) / v;
    }
    double x = 2.0 * r * rho / v;
    double factor;
    if (x < 1e-10) {
        factor = 2.0 * (1.0 - 0.5 * x); // (1 - e^{-x}) * 2/x expansion
    } else {
        factor = -std::expm1(-x) * 2.0 / x;
    }
    if (e > 700.0) return 0.0;
    return 2.0 * pi * std::pow(2.0 * pi * v, -1.5) * std::exp(-e) * factor;
}

/// omega_d int_a^b K(rho) rho^{d-1} drho, adaptive on the finite part.
template <class F>
double integrate_radial(F&& K, int d, double a, double b, double tol = 1e-10) {
    auto g = [&](double rho) { return K(rho) * std::pow(rho, d - 1); };
    return sphere_area(d) * integrate_gk(g, a, b, tol);
}

/// Chebyshev-Lobatto collocation on [a,b]: extrema nodes (both endpoints
/// included) plus barycentric interpolation through values sampled at them.
/// For a function analytic on the interval the interpolant converges
/// geometrically in the node count.
class ChebLobatto {
  public:
    ChebLobatto() = default;
    ChebLobatto(double a, double b, int m) { build(a, b, m); }

    void build(double a, double b, int m) {
        if (!(b > a) || m < 2) throw config_error("ChebLobatto: need b > a and m >= 2");
        a_ = a;
        b_ = b;
        x_.resize(size_t(m));
        w_.resize(size_t(m));
        double mid = 0.5 * (a + b), half = 0.5 * (b - a);
        for (int i = 0; i < m; ++i) {
            x_[size_t(i)] = mid - half * std::cos(pi * i / (m - 1.0));
            double w = (i % 2 == 0) ? 1.0 : -1.0;
            if (i == 0 || i == m - 1) w *= 0.5;
            w_[size_t(i)] = w;
        }
        x_.front() = a;
        x_.back() = b;
    }

    const std::vector<double>& nodes() const { return x_; }
    double lo() const { return a_; }
    double hi() const { return b_; }

    /// Barycentric evaluation of the interpolant through `values` (one per
    /// node, same order as nodes()) at x.  Exact at the nodes.
    double eval(const std::vector<double>& values, double x) const {
        if (values.size() != x_.size()) throw config_error("ChebLobatto::eval: value count mismatch");
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < x_.size(); ++i) {
            double dx = x - x_[i];
            if (std::abs(dx) < 1e-300) return values[i];
            double c = w_[i] / dx;
            num += c * values[i];
            den += c;
        }
        return num / den;
    }

  private:
    double a_ = 0.0, b_ = 1.0;
    std::vector<double> x_, w_;
};

/// Two-center isotropic convolution  C(r) = int_{R^d} f(|u-w|) g(|w|) dw with
/// |u| = r.  Outer integral over rho = |w| is split at the ridge rho ~ r;
/// inner angular integral is adaptive.  `cut` truncates the outer radius.
template <class Ff, class Fg>
double conv_radial(int d, Ff&& f, Fg&& g, double r, double cut, double tol = 1e-9,
                   const std::vector<double>& extra_breaks = {}) {
    auto inner = [&](double rho) -> double {
        auto h = [&](double th) {
            double c = std::cos(th);
            double u2 = r * r + rho * rho - 2.0 * r * rho * c;
            double u = u2 > 0.0 ? std::sqrt(u2) : 0.0;
            double fv = f(u);
            return (d == 2) ? 2.0 * fv : 2.0 * pi * fv * std::sin(th);
        };
        return integrate_gk(h, 0.0, pi, tol * 0.1) * g(rho) * std::pow(rho, d - 1);
    };
    std::vector<double> brk;
    brk.push_back(0.0);
    if (r > 0.0 && r < cut) {
        if (0.5 * r > 0.0) brk.push_back(0.5 * r);
        brk.push_back(r);
        if (1.5 * r < cut) brk.push_back(1.5 * r);
    }
    for (double v : extra_breaks)
        if (v > 0.0 && v < cut) brk.push_back(v);
    brk.push_back(cut);
    std::sort(brk.begin(), brk.end());
    brk.erase(std::unique(brk.begin(), brk.end()), brk.end());
    Kahan acc;
    for (size_t i = 0; i + 1 < brk.size(); ++i) acc.add(integrate_gk(inner, brk[i], brk[i + 1], tol));
    return acc.value();
}

} // namespace fkheat
