#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fkheat/core.hpp"
#include "fkheat/density.hpp"
#include "fkheat/kato.hpp"
#include "fkheat/kernels.hpp"
#include "fkheat/measures.hpp"
#include "fkheat/quadrature.hpp"
#include "fkheat/sampling.hpp"

// Numerical verification of the three-point comparison inequalities: the
// pointwise eta bound, the elementary parabolic two-point inequality, the
// Gamma/eta convolution bounds, their density versions, and the generalized
// region-split (U/V) variants driven by a jump function F(z,w).
//
// The four-dimensional (z,w) integrals are reduced exactly: substituting
// h = z - w turns F(z,w)/|z-w|^{d+alpha} into a radial weight in h, the two
// kernels become radial profiles centered at x and y+h, and the region split
//   V_{x,y} = { |x-y| >= 4 (|y-w| /\ |x-z|) }
// becomes the union of two disks of radius |x-y|/4 centered exactly at those
// two kernel centers.  Every piece is then a one-dimensional shell integral
// with an adaptive angular factor, glued over h through a spline in the
// center separation r = |x - y - h|.

namespace fkheat {

// ---------------------------------------------------------------------------
// report & region types
// ---------------------------------------------------------------------------

/// Outcome of one inequality check.  `worst_witness` is the flattened
/// maximizing tuple: (t, s, x, y, z[, w]) for sampled pointwise checks and
/// (t, x, y) for grid-driven integral checks, coordinates in row order.
struct InequalityReport {
    std::string name;
    std::uint64_t samples = 0;
    double empirical_constant = 0.0;
    std::vector<double> worst_witness;
    std::uint64_t violations = 0;
};

enum class Region { U, V };

/// The far-field split: V collects configurations where both integration
/// points hug the endpoints, U is everything else.
struct RegionSplit {
    Point x, y;

    bool in_V(const Point& z, const Point& w) const {
        double m = std::min(dist(y, w), dist(x, z));
        return dist(x, y) >= 4.0 * m;
    }
    bool in_U(const Point& z, const Point& w) const { return !in_V(z, w); }
};

inline Region region_membership(const Point& x, const Point& y, const Point& z, const Point& w) {
    return RegionSplit{x, y}.in_V(z, w) ? Region::V : Region::U;
}

// ---------------------------------------------------------------------------
// sampled pointwise checks
// ---------------------------------------------------------------------------

using ConfigSampler = std::function<IneqSample(std::uint64_t)>;

inline ConfigSampler default_ineq_sampler(int d, bool with_w) {
    return [d, with_w](std::uint64_t i) { return ineq_sample(i, d, with_w); };
}

namespace detail3p {

inline void note_witness(InequalityReport& rep, double ratio, const IneqSample& smp, int d,
                         bool with_w) {
    if (!(ratio > rep.empirical_constant)) return;
    rep.empirical_constant = ratio;
    rep.worst_witness.clear();
    rep.worst_witness.push_back(smp.t);
    rep.worst_witness.push_back(smp.s);
    auto push = [&](const Point& p) {
        for (int c = 0; c < d; ++c) rep.worst_witness.push_back(p[c]);
    };
    push(smp.x);
    push(smp.y);
    push(smp.z);
    if (with_w) push(smp.w);
}

} // namespace detail3p

/// Pointwise eta three-point bound
///   eta(t-s;x-z) eta(s;z-y) <= C1 eta(t;x-y) [eta(t-s;x-z) + eta(s;z-y)].
/// The sup of the ratio is reported and checked against the provable
/// constant 2^{d+alpha}; exceeding it is a numerical contradiction.
inline InequalityReport check_eta_3p(const ConfigSampler& samples, std::uint64_t n,
                                     const ModelParams& model) {
    model.validate();
    InequalityReport rep;
    rep.name = "eta_3p";
    rep.samples = n;
    for (std::uint64_t i = 0; i < n; ++i) {
        IneqSample smp = samples(i);
        double e1 = eta_kernel(smp.t - smp.s, dist(smp.x, smp.z), model.d, model.alpha);
        double e2 = eta_kernel(smp.s, dist(smp.z, smp.y), model.d, model.alpha);
        double lhs = e1 * e2;
        double rhs = eta_kernel(smp.t, dist(smp.x, smp.y), model.d, model.alpha) * (e1 + e2);
        if (rhs == 0.0) {
            if (lhs > 0.0) ++rep.violations;
            continue;
        }
        detail3p::note_witness(rep, lhs / rhs, smp, model.d, false);
    }
    double bound = std::pow(2.0, model.d + model.alpha);
    if (rep.empirical_constant > bound * (1.0 + 1e-9))
        throw numeric_error("check_eta_3p: sampled ratio exceeds the provable constant");
    return rep;
}

/// Elementary parabolic two-point inequality
///   |x-z|^2/(t-s) + |z-y|^2/s >= |x-y|^2/t,
/// with equality at z* = ((t-s) y + s x)/t.  empirical_constant is the sup of
/// RHS/LHS (at most 1); violations counts samples failing at 1e-12 relative.
inline InequalityReport check_elementary_inequality(const ConfigSampler& samples, std::uint64_t n) {
    InequalityReport rep;
    rep.name = "elementary_two_point";
    rep.samples = n;
    for (std::uint64_t i = 0; i < n; ++i) {
        IneqSample smp = samples(i);
        double lhs = dist2(smp.x, smp.z) / (smp.t - smp.s) + dist2(smp.z, smp.y) / smp.s;
        double rhs = dist2(smp.x, smp.y) / smp.t;
        if (lhs < rhs * (1.0 - 1e-12)) ++rep.violations;
        if (lhs > 0.0) detail3p::note_witness(rep, rhs / lhs, smp, smp.x.d, false);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// grids
// ---------------------------------------------------------------------------

struct SpaceTimePoint {
    double t = 1.0;
    Point x, y;
};

using SpaceTimeGrid = std::vector<SpaceTimePoint>;

inline Point axis_point(int d, double r) { return d == 2 ? Point(r, 0.0) : Point(r, 0.0, 0.0); }

/// Small default (t, x, y) grid: two horizons, separations from coincident to
/// a few diffusive lengths, laid along the first axis.
inline SpaceTimeGrid default_space_time_grid(int d) {
    SpaceTimeGrid g;
    for (double t : {0.25, 1.0})
        for (double r : {0.0, 0.3, 1.0, 2.5})
            g.push_back({t, axis_point(d, 0.0), axis_point(d, r)});
    return g;
}

// ---------------------------------------------------------------------------
// detail: radial kernels, shell integrals, region-restricted z-integrals
// ---------------------------------------------------------------------------

namespace detail3p {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Radial factor of a two-center integrand: value profile, exact partial
/// space mass over {P0 <= |z| <= P1} when available, a ridge-width hint for
/// quadrature breakpoints, and the radius beyond which it is negligible.
struct RadialKernel {
    std::function<double(double)> f;
    std::function<double(double, double)> mass; // exact d-volume integral, may be empty
    double scale = 1.0;
    double reach = kInf;
    bool is_one = false;
};

inline RadialKernel make_one_kernel() {
    RadialKernel k;
    k.f = [](double) { return 1.0; };
    k.scale = kInf;
    k.is_one = true;
    return k;
}

/// int_{P0 <= |z| <= P1} Gamma_lambda(u;|z|) dz in closed form.
inline double gamma_space_mass(double u, double lambda, int d, double P0, double P1) {
    double c = lambda / u;
    auto head = [&](double P) -> double { // mass over |z| <= P
        if (P <= 0.0) return 0.0;
        if (d == 2) {
            double e = c * P * P;
            return (pi / lambda) * (e > 700.0 ? 1.0 : -std::expm1(-e));
        }
        if (!std::isfinite(P)) return std::pow(pi / lambda, 1.5);
        double sc = std::sqrt(c) * P;
        double body = std::erf(sc) - 2.0 / std::sqrt(pi) * sc * std::exp(-sc * sc);
        return std::pow(pi / lambda, 1.5) * body;
    };
    if (!std::isfinite(P1)) return (d == 2 ? pi / lambda : std::pow(pi / lambda, 1.5)) - head(P0);
    return head(P1) - head(P0);
}

/// int_{P0 <= |z| <= P1} eta(u;|z|) dz in closed binomial form.
inline double eta_space_mass(double u, int d, double alpha, double P0, double P1) {
    double m = double(d) + alpha;
    double X = std::sqrt(u);
    // int (X+rho)^{k-m} drho over [P0, P1]
    auto pint = [&](int k) {
        double e = double(k) - m + 1.0;
        double hi = std::isfinite(P1) ? std::pow(X + P1, e) : 0.0; // e < 0 always here
        return (hi - std::pow(X + P0, e)) / e;
    };
    double body;
    if (d == 2) {
        body = pint(1) - X * pint(0);
    } else {
        body = pint(2) - 2.0 * X * pint(1) + X * X * pint(0);
    }
    return sphere_area(d) * u * body;
}

inline RadialKernel make_gamma_radial(double u, double lambda, int d) {
    RadialKernel k;
    k.f = [u, lambda, d](double rho) { return gamma_kernel(u, rho, lambda, d); };
    k.mass = [u, lambda, d](double P0, double P1) { return gamma_space_mass(u, lambda, d, P0, P1); };
    k.scale = std::sqrt(u / (2.0 * lambda));
    k.reach = 9.0 * std::sqrt(u / lambda);
    return k;
}

inline RadialKernel make_eta_radial(double u, int d, double alpha) {
    RadialKernel k;
    k.f = [u, d, alpha](double rho) { return eta_kernel(u, rho, d, alpha); };
    k.mass = [u, d, alpha](double P0, double P1) { return eta_space_mass(u, d, alpha, P0, P1); };
    k.scale = std::sqrt(u);
    return k;
}

inline RadialKernel make_envelope_radial(double u, double lambda, int d, double alpha) {
    RadialKernel g = make_gamma_radial(u, lambda, d);
    RadialKernel e = make_eta_radial(u, d, alpha);
    RadialKernel k;
    k.f = [g, e](double rho) { return g.f(rho) + e.f(rho); };
    k.mass = [g, e](double P0, double P1) { return g.mass(P0, P1) + e.mass(P0, P1); };
    k.scale = std::min(g.scale, e.scale);
    return k;
}

/// Wrap a sampled radial density (power tail past its grid) as a kernel;
/// mass is integrated numerically from the spline.
inline RadialKernel make_spline_radial(const RadialDensitySpline& sp, int d, double scale_hint) {
    RadialKernel k;
    k.f = [&sp](double rho) { return sp(rho); };
    k.mass = [&sp, d](double P0, double P1) {
        double hi = std::isfinite(P1) ? P1 : std::max(4.0 * sp.r_max(), 4e3);
        double v = integrate_radial([&sp](double r) { return sp(r); }, d, P0, hi, 1e-9);
        if (!std::isfinite(P1)) {
            // continue the power tail analytically (integrable: decay d+alpha)
            double p = sp(hi);
            // local decay exponent from the spline's own extrapolation
            double q = std::log(sp(hi) / sp(2.0 * hi)) / std::log(2.0);
            v += sphere_area(d) * p * std::pow(hi, double(d)) / (q - d);
        }
        return v;
    };
    k.scale = scale_hint;
    return k;
}

enum class AngularWindow { none, inside_far_disk, outside_far_disk };

/// cos(theta*) where the shell at radius rho around the origin crosses the
/// far disk of radius R4 centered at distance r.
inline double window_cos(double rho, double r, double R4) {
    return (rho * rho + r * r - R4 * R4) / (2.0 * rho * r);
}

/// Shell-decomposed two-center integral over rho in [rho0, rho1]:
///   int A(rho) rho^{d-1} [ angular integral of B(dist) over the window ] drho,
/// dist^2 = rho^2 + r^2 - 2 rho r cos(theta).  The angular window against the
/// far disk has the analytic limit theta* = acos(window_cos), so region
/// restrictions never introduce discontinuous integrands.
template <class FB>
double shell_integral(int d, const RadialKernel& A, FB&& Bf, double r, double rho0, double rho1,
                      AngularWindow win, double R4, double tol) {
    if (!(rho1 > rho0)) return 0.0;
    auto inner = [&](double rho) -> double {
        double th_lo = 0.0, th_hi = pi;
        if (win != AngularWindow::none) {
            if (r < 1e-14) {
                bool ins = rho <= R4;
                if (win == AngularWindow::inside_far_disk ? !ins : ins) return 0.0;
            } else {
                double c = window_cos(std::max(rho, 1e-300), r, R4);
                double th_star = c >= 1.0 ? 0.0 : (c <= -1.0 ? pi : std::acos(c));
                if (win == AngularWindow::inside_far_disk)
                    th_hi = th_star;
                else
                    th_lo = th_star;
            }
            if (!(th_hi > th_lo)) return 0.0;
        }
        auto h = [&](double th) {
            double u2 = rho * rho + r * r - 2.0 * rho * r * std::cos(th);
            double bv = Bf(u2 > 0.0 ? std::sqrt(u2) : 0.0);
            return d == 2 ? 2.0 * bv : 2.0 * pi * bv * std::sin(th);
        };
        double ang = integrate_gk(h, th_lo, th_hi, 0.05 * tol);
        return A.f(rho) * std::pow(rho, d - 1) * ang;
    };
    std::vector<double> brk{rho0, rho1};
    auto addb = [&](double v) {
        if (std::isfinite(v) && v > rho0 * (1.0 + 1e-12) + 1e-300 && v < rho1 * (1.0 - 1e-12))
            brk.push_back(v);
    };
    addb(0.5 * r);
    addb(r);
    addb(1.5 * r);
    if (win != AngularWindow::none) {
        addb(std::abs(r - R4));
        addb(r + R4);
    }
    if (std::isfinite(A.scale)) {
        addb(A.scale);
        addb(4.0 * A.scale);
    }
    for (double f : {1.0, 10.0, 100.0}) addb(f);
    std::sort(brk.begin(), brk.end());
    brk.erase(std::unique(brk.begin(), brk.end()), brk.end());
    Kahan acc;
    for (size_t i = 0; i + 1 < brk.size(); ++i) acc.add(integrate_gk(inner, brk[i], brk[i + 1], tol));
    return acc.value();
}

enum class ZRegion { full, V, U };

/// int_{R^d} A(|z|) B(|z - r e1|) 1_region dz with the two region disks
/// D_A = {|z| <= R4}, D_B = {|z - r e1| <= R4}.  V = D_A u D_B, U = complement.
/// Both restricted cases are evaluated directly (no full-minus-V cancellation).
inline double z_region_integral(int d, const RadialKernel& A, const RadialKernel& B, double r,
                                ZRegion reg, double R4, double tol) {
    // Reflecting z through the midpoint of the two centers exchanges the
    // factors and the two equal-radius region disks, so the integral is
    // symmetric in (A, B).  Orient the narrower factor radially: its ridge is
    // then resolved by explicit shell breakpoints, whereas a ridge far
    // narrower than the angular rule's node spacing would be missed entirely.
    if (!B.is_one && B.scale < A.scale) return z_region_integral(d, B, A, r, reg, R4, tol);
    double cut = std::min(A.reach, B.is_one ? kInf : r + B.reach);
    if (!std::isfinite(cut)) cut = std::max(500.0, r + 500.0);
    switch (reg) {
        case ZRegion::full:
            if (B.is_one && A.mass) return A.mass(0.0, kInf);
            return shell_integral(d, A, B.f, r, 0.0, cut, AngularWindow::none, 0.0, tol);
        case ZRegion::V: {
            if (!(R4 > 0.0)) return 0.0;
            double dA = (B.is_one && A.mass)
                            ? A.mass(0.0, R4)
                            : shell_integral(d, A, B.f, r, 0.0, R4, AngularWindow::none, 0.0, tol);
            // far-disk piece kept in the same polar frame (radial factor A)
            // via the analytic window, so the orientation choice above stays
            // in force instead of putting A back on the angular side
            double dB = shell_integral(d, A, B.f, r, std::max(0.0, r - R4),
                                       std::min(cut, r + R4), AngularWindow::inside_far_disk, R4,
                                       tol);
            double lens = 0.0;
            if (r < 2.0 * R4)
                lens = shell_integral(d, A, B.f, r, 0.0, R4, AngularWindow::inside_far_disk, R4, tol);
            return dA + dB - lens;
        }
        case ZRegion::U: {
            if (!(R4 > 0.0)) // empty disks: U is everything
                return z_region_integral(d, A, B, r, ZRegion::full, 0.0, tol);
            double near_band =
                shell_integral(d, A, B.f, r, R4, std::min(r + R4, cut), AngularWindow::outside_far_disk, R4, tol);
            double far_band = 0.0;
            if (r + R4 < cut) {
                if (B.is_one && A.mass)
                    far_band = A.mass(r + R4, kInf);
                else
                    far_band = shell_integral(d, A, B.f, r, r + R4, cut, AngularWindow::none, 0.0, tol);
            }
            return near_band + far_band;
        }
    }
    return 0.0;
}

/// Nodes and weights for int_0^t f(s) ds with geometric panels refined into
/// both endpoints (the kernels concentrate there).  Mass below t*1e-6 of each
/// endpoint is dropped; integrands here are bounded, so the omission is
/// O(t * 1e-6 * sup f).
inline std::vector<std::pair<double, double>> s_panel_nodes(double t, int panels_per_side,
                                                            int order) {
    std::vector<std::pair<double, double>> nw;
    const GaussRule& rule = gauss_rule(order);
    auto add_panel = [&](double a, double b, bool mirror) {
        double mid = 0.5 * (a + b), half = 0.5 * (b - a);
        for (size_t i = 0; i < rule.x.size(); ++i) {
            double u = mid + half * rule.x[i];
            nw.emplace_back(mirror ? t - u : u, half * rule.w[i]);
        }
    };
    double lo = 1e-6 * t, hi = 0.5 * t;
    double ratio = std::pow(hi / lo, 1.0 / panels_per_side);
    for (int side = 0; side < 2; ++side) {
        double a = lo;
        for (int p2 = 0; p2 < panels_per_side; ++p2) {
            double b = (p2 + 1 == panels_per_side) ? hi : a * ratio;
            add_panel(a, b, side == 1);
            a = b;
        }
    }
    return nw;
}

/// Spline of a nonnegative profile against r, stored in log scale.
class LogSpline {
  public:
    template <class F>
    void build(F&& fn, double r_lo, double r_hi, int n, const std::vector<double>& extra) {
        std::vector<double> rs;
        rs.reserve(size_t(n) + extra.size());
        for (int i = 0; i < n; ++i) rs.push_back(r_lo + (r_hi - r_lo) * i / (n - 1));
        for (double e : extra)
            if (e > r_lo && e < r_hi) rs.push_back(e);
        std::sort(rs.begin(), rs.end());
        rs.erase(std::unique(rs.begin(), rs.end(),
                             [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                 rs.end());
        std::vector<double> ys(rs.size());
        for (size_t i = 0; i < rs.size(); ++i) ys[i] = std::log(std::max(fn(rs[i]), 1e-280));
        // Cap the dynamic range at e^-350 of the peak and clip the usable
        // domain to the resolved support.  A cubic through an underflowed
        // node would otherwise swing far above the neighboring log values,
        // and the exponential turns that swing into a spurious spike.
        double ymax = *std::max_element(ys.begin(), ys.end());
        double yfloor = ymax - 350.0;
        size_t i0 = 0, i1 = rs.size() - 1;
        while (i0 < i1 && ys[i0] < yfloor) ++i0;
        while (i1 > i0 && ys[i1] < yfloor) --i1;
        for (double& y : ys) y = std::max(y, yfloor);
        lo_ = rs[i0];
        hi_ = rs[i1];
        sp_.build(std::move(rs), std::move(ys));
    }

    double operator()(double r) const { return std::exp(sp_(std::min(std::max(r, lo_), hi_))); }

  private:
    CubicSpline sp_;
    double lo_ = 0.0, hi_ = 1.0;
};

/// int_{R^d} phi(|h|) |h|^{-(d+alpha)} G(|R e1 - h|) dh for a radial profile
/// G given as a spline over the reachable separations.
inline double h_integral(int d, double alpha, const std::function<double(double)>& phi,
                         double delta, double hmax, double R, const LogSpline& G, double tol) {
    auto outer = [&](double rho) -> double {
        auto ang = [&](double th) {
            double r2 = R * R + rho * rho - 2.0 * R * rho * std::cos(th);
            double g = G(r2 > 0.0 ? std::sqrt(r2) : 0.0);
            return d == 2 ? 2.0 * g : 2.0 * pi * g * std::sin(th);
        };
        double a = integrate_gk(ang, 0.0, pi, 0.1 * tol);
        return phi(rho) * std::pow(rho, -1.0 - alpha) * a;
    };
    return integrate_gk(outer, delta, hmax, tol);
}

/// Gaussian density convolution bookkeeping for products of Gamma kernels:
/// Gamma_l(u;.) = (pi/l)^{d/2} g_{u/(2l)}(.) with g_v the Gaussian density.
struct GammaProduct {
    double prefactor; // (pi/a)^{d/2} (pi/b)^{d/2}
    double v1, v2;    // component variances
    double v_sum() const { return v1 + v2; }
    double v_prod() const { return v1 * v2 / (v1 + v2); }
};

inline GammaProduct gamma_product(double a, double b, double t, double s, int d) {
    return {std::pow(pi * pi / (a * b), 0.5 * d), (t - s) / (2.0 * a), s / (2.0 * b)};
}

/// int_{R^2} A(|x-z|) B(|y-z|) M(|z-c|) dz by polar coordinates around y
/// (planar only; the two off-center factors live at arbitrary angles).
template <class FA, class FB, class FM>
double planar_three_factor(FA&& A, FB&& B, FM&& M, const Point& x, const Point& y, const Point& c,
                           double cut, double tol, const std::vector<double>& extra_breaks = {}) {
    double rxy = dist(x, y);
    auto outer = [&](double rho) -> double {
        auto ang = [&](double th) {
            Point z = y;
            z[0] += rho * std::cos(th);
            z[1] += rho * std::sin(th);
            return A(dist(x, z)) * M(dist(z, c));
        };
        return B(rho) * rho * integrate_gk(ang, 0.0, 2.0 * pi, 0.1 * tol);
    };
    std::vector<double> brk{0.0, cut};
    for (double v : {0.5 * rxy, rxy, 1.5 * rxy, dist(y, c)})
        if (v > 1e-12 && v < cut) brk.push_back(v);
    for (double v : extra_breaks)
        if (v > 1e-12 && v < cut) brk.push_back(v);
    std::sort(brk.begin(), brk.end());
    brk.erase(std::unique(brk.begin(), brk.end()), brk.end());
    Kahan acc;
    for (size_t i = 0; i + 1 < brk.size(); ++i) acc.add(integrate_gk(outer, brk[i], brk[i + 1], tol));
    return acc.value();
}

inline void note_grid_witness(InequalityReport& rep, double ratio, const SpaceTimePoint& pt,
                              int d) {
    if (!(ratio > rep.empirical_constant)) return;
    rep.empirical_constant = ratio;
    rep.worst_witness.clear();
    rep.worst_witness.push_back(pt.t);
    for (int c = 0; c < d; ++c) rep.worst_witness.push_back(pt.x[c]);
    for (int c = 0; c < d; ++c) rep.worst_witness.push_back(pt.y[c]);
}

inline void tally_ratio(InequalityReport& rep, double lhs, double rhs, const SpaceTimePoint& pt,
                        int d) {
    if (rhs <= 0.0) {
        if (lhs > 1e-300) ++rep.violations;
        return;
    }
    note_grid_witness(rep, lhs / rhs, pt, d);
}

} // namespace detail3p

// ---------------------------------------------------------------------------
// convolution inequality checks (measure-driven)
// ---------------------------------------------------------------------------

/// Gamma*Gamma convolution bound: for 0 < a < b,
///   int_0^t int Gamma_a(t-s;x-z) Gamma_b(s;z-y) |mu|(dz) ds
///     <= C2 Gamma_a(t;x-y) * N_mu^{Gamma_c}(t),  c = (b-a) /\ (a/2).
/// The z-integral collapses through the Gaussian product identity, leaving a
/// single s-integral per grid point.
inline InequalityReport check_gamma_convolution(const MeasureSpec& mu, double a, double b,
                                                const SpaceTimeGrid& grid,
                                                const ModelParams& model) {
    using namespace detail3p;
    if (!(a > 0.0 && b > a)) throw config_error("check_gamma_convolution: need 0 < a < b");
    model.validate();
    mu.validate();
    InequalityReport rep;
    rep.name = "gamma_conv";
    rep.samples = grid.size();
    if (mu.is_zero()) {
        rep.worst_witness = {grid.empty() ? 0.0 : grid.front().t};
        return rep;
    }
    double c = std::min(b - a, 0.5 * a);
    int d = model.d;
    for (const auto& pt : grid) {
        if (!(pt.t > 0.0 && pt.t <= 1.0))
            throw config_error("check_gamma_convolution: grid horizon must lie in (0,1]");
        double R = dist(pt.x, pt.y);
        auto integrand = [&](double s) -> double {
            GammaProduct gp = gamma_product(a, b, pt.t, s, d);
            double gauss = gaussian_density_radial(d, gp.v_sum(), R);
            double zmass;
            if (mu.constant_level) {
                zmass = std::abs(*mu.constant_level);
            } else {
                if (!mu.radial_abs || !std::isfinite(mu.effective_radius))
                    throw config_error("check_gamma_convolution: measure needs a bounded radial profile");
                double w = gp.v_prod();
                Point m = (pt.x * gp.v2 + pt.y * gp.v1) * (1.0 / gp.v_sum());
                // The Gaussian factor collapses to a near-delta at the ends of
                // the time split; its angular average is available in closed
                // form, leaving a single radial integral over the profile.
                double sw = std::sqrt(w);
                double rm = dist(m, mu.center);
                auto integ = [&](double rho) {
                    return (*mu.radial_abs)(rho) * std::pow(rho, d - 1) *
                           ang_gauss(d, w, rm, rho);
                };
                std::vector<double> brk{0.0, mu.effective_radius};
                for (double v2 : {rm - 4.0 * sw, rm - 2.0 * sw, rm - sw, rm, rm + sw,
                                  rm + 2.0 * sw, rm + 4.0 * sw, rm + 8.0 * sw})
                    if (v2 > 0.0 && v2 < mu.effective_radius) brk.push_back(v2);
                std::sort(brk.begin(), brk.end());
                Kahan zacc;
                for (size_t i = 0; i + 1 < brk.size(); ++i)
                    zacc.add(integrate_gk(integ, brk[i], brk[i + 1], 1e-9));
                zmass = zacc.value();
            }
            return gp.prefactor * gauss * zmass;
        };
        double lhs = 0.0;
        for (auto [s, w] : s_panel_nodes(pt.t, 8, 8)) lhs += w * integrand(s);
        double rhs = gamma_kernel(pt.t, R, a, d) *
                     kato_norm_measure(mu, pt.t, c, model, KernelPart::gamma).value;
        tally_ratio(rep, lhs, rhs, pt, d);
    }
    return rep;
}

/// Gamma*eta convolution bound:
///   int_0^t int Gamma_a(t-s;x-z) eta(s;z-y) |mu|(dz) ds
///     <= C3 [ Gamma_a(t;x-y) N_mu^{eta}(t) + eta(t;x-y) N_mu^{Gamma_a}(t) ].
inline InequalityReport check_gamma_eta_convolution(const MeasureSpec& mu, double a,
                                                    const SpaceTimeGrid& grid,
                                                    const ModelParams& model) {
    using namespace detail3p;
    if (!(a > 0.0)) throw config_error("check_gamma_eta_convolution: need a > 0");
    model.validate();
    mu.validate();
    InequalityReport rep;
    rep.name = "gamma_eta_conv";
    rep.samples = grid.size();
    if (mu.is_zero()) {
        rep.worst_witness = {grid.empty() ? 0.0 : grid.front().t};
        return rep;
    }
    int d = model.d;
    for (const auto& pt : grid) {
        if (!(pt.t > 0.0 && pt.t <= 1.0))
            throw config_error("check_gamma_eta_convolution: grid horizon must lie in (0,1]");
        double R = dist(pt.x, pt.y);
        auto inner = [&](double s) -> double {
            auto gA = [&](double rho) { return gamma_kernel(pt.t - s, rho, a, d); };
            auto eB = [&](double rho) { return eta_kernel(s, rho, d, model.alpha); };
            // The Gaussian factor turns into a near-delta as s -> t, so it must
            // be the radial variable of the two-centre quadrature with panel
            // breaks at its own width (the power-tail factor stays angular and
            // never starves the adaptive rule of signal).
            double eg = std::sqrt((pt.t - s) / a), es = std::sqrt(s);
            std::vector<double> brk{0.5 * eg, eg, 2.0 * eg, 4.0 * eg, 9.0 * eg,
                                    0.5 * es, es, 2.0 * es, 4.0 * es};
            if (mu.constant_level) {
                return std::abs(*mu.constant_level) *
                       conv_radial(d, eB, gA, R, 14.0 * eg, 1e-8, brk);
            }
            if (d != 2)
                throw config_error(
                    "check_gamma_eta_convolution: non-constant measures supported in d=2 only");
            if (!mu.radial_abs || !std::isfinite(mu.effective_radius))
                throw config_error("check_gamma_eta_convolution: measure needs a bounded radial profile");
            double cut = std::min(14.0 * eg, dist(pt.x, mu.center) + mu.effective_radius);
            return planar_three_factor(eB, gA, *mu.radial_abs, pt.y, pt.x, mu.center, cut, 1e-8,
                                       brk);
        };
        double lhs = 0.0;
        for (auto [s, w] : s_panel_nodes(pt.t, 8, 8)) lhs += w * inner(s);
        double rhs = gamma_kernel(pt.t, R, a, d) *
                         kato_norm_measure(mu, pt.t, a, model, KernelPart::eta).value +
                     eta_kernel(pt.t, R, d, model.alpha) *
                         kato_norm_measure(mu, pt.t, a, model, KernelPart::gamma).value;
        tally_ratio(rep, lhs, rhs, pt, d);
    }
    return rep;
}

namespace detail3p {

/// Radial splines of the base transition density p(u, .), cached per time
/// slice; the subordinator spline makes each build cheap.
class DensitySliceCache {
  public:
    explicit DensitySliceCache(const ModelParams& model)
        : model_(model), dens_(model) {}

    const RadialDensitySpline& slice(double u) {
        auto it = cache_.find(u);
        if (it != cache_.end()) return it->second;
        double spread = std::sqrt(model_.sigma2 * u) +
                        (model_.a > 0.0 ? std::pow(model_.a * u, 1.0 / model_.alpha) : 0.0);
        double r_hi = std::max(60.0, 40.0 * spread);
        RadialDensitySpline sp([&](double r) { return dens_(u, r); }, model_.d, model_.alpha,
                               1e-4 * spread, r_hi, 110);
        return cache_.emplace(u, std::move(sp)).first->second;
    }

    double scale(double u) const {
        return std::sqrt(model_.sigma2 * u) +
               (model_.a > 0.0 ? std::pow(model_.a * u, 1.0 / model_.alpha) : 0.0);
    }

  private:
    ModelParams model_;
    BaseDensity dens_;
    std::map<double, RadialDensitySpline> cache_;
};

} // namespace detail3p

/// Density three-point bound (the mu-driven Duhamel step):
///   int_0^t int p(t-s,x,z) p_{2l/3}(s,z,y) |mu|(dz) ds
///     <= M1 p_{2l/3}(t,x,y) N_mu^{alpha,l/3}(t),  l = certified upper rate.
inline InequalityReport check_3p_for_p(const MeasureSpec& mu, const ModelParams& model,
                                       const SpaceTimeGrid& grid) {
    using namespace detail3p;
    model.validate();
    mu.validate();
    InequalityReport rep;
    rep.name = "3p_for_p";
    rep.samples = grid.size();
    if (mu.is_zero()) {
        rep.worst_witness = {grid.empty() ? 0.0 : grid.front().t};
        return rep;
    }
    int d = model.d;
    double lam = model.lambda_hi;
    DensitySliceCache slices(model);
    for (const auto& pt : grid) {
        if (!(pt.t > 0.0 && pt.t <= 1.0))
            throw config_error("check_3p_for_p: grid horizon must lie in (0,1]");
        double R = dist(pt.x, pt.y);
        auto inner = [&](double s) -> double {
            const RadialDensitySpline& psl = slices.slice(pt.t - s);
            auto pA = [&](double rho) { return psl(rho); };
            auto eB = [&](double rho) {
                return envelope_kernel(s, rho, 2.0 * lam / 3.0, d, model.alpha);
            };
            // Whichever factor is narrower near its endpoint of the time split
            // serves as the radial variable, with panel breaks at both widths.
            double w1 = slices.scale(pt.t - s);
            double w2 = std::sqrt(1.5 * s / lam);
            std::vector<double> brk{0.5 * w1, w1, 2.0 * w1, 4.0 * w1, 8.0 * w1,
                                    0.5 * w2, w2, 2.0 * w2, 4.0 * w2, 8.0 * w2};
            bool p_radial = w1 <= w2;
            if (mu.constant_level) {
                double cut = R + 500.0;
                double v = p_radial ? conv_radial(d, eB, pA, R, cut, 1e-7, brk)
                                    : conv_radial(d, pA, eB, R, cut, 1e-7, brk);
                return std::abs(*mu.constant_level) * v;
            }
            if (d != 2)
                throw config_error("check_3p_for_p: non-constant measures supported in d=2 only");
            if (!mu.radial_abs || !std::isfinite(mu.effective_radius))
                throw config_error("check_3p_for_p: measure needs a bounded radial profile");
            if (p_radial) {
                double cut = dist(pt.x, mu.center) + mu.effective_radius;
                return planar_three_factor(eB, pA, *mu.radial_abs, pt.y, pt.x, mu.center, cut,
                                           1e-7, brk);
            }
            double cut = dist(pt.y, mu.center) + mu.effective_radius;
            return planar_three_factor(pA, eB, *mu.radial_abs, pt.x, pt.y, mu.center, cut, 1e-7,
                                       brk);
        };
        double lhs = 0.0;
        for (auto [s, w] : s_panel_nodes(pt.t, 6, 6)) lhs += w * inner(s);
        double rhs = envelope_kernel(pt.t, R, 2.0 * lam / 3.0, d, model.alpha) *
                     kato_norm_measure(mu, pt.t, lam / 3.0, model).value;
        tally_ratio(rep, lhs, rhs, pt, d);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// generalized 3P checks with jump function F and region split
// ---------------------------------------------------------------------------

enum class KernelPairKind { eta_eta, gamma_gamma, gamma_eta };
enum class IneqCase { near, far_U, far_V };

/// Kernel pair under the generalized bounds.  gamma_gamma uses rates (a, b)
/// with a < b; gamma_eta uses rate a for its Gamma factor; eta_eta ignores both.
struct KernelPairSpec {
    KernelPairKind kind = KernelPairKind::eta_eta;
    double a = 0.5;
    double b = 1.0;
};

/// Quadrature knobs for the generalized checks; defaults favor accuracy over
/// speed on the small certification grids.
struct GenThreePControl {
    int s_panels = 6;      // geometric s-panels per endpoint side
    int s_order = 6;       // Gauss order per panel
    int r_nodes = 24;      // separation spline resolution
    double z_tol = 1e-6;   // shell quadrature tolerance
    double h_tol = 1e-6;   // jump-radius quadrature tolerance
};

namespace detail3p {

struct GenPairKernels {
    std::function<RadialKernel(double)> K1; // time-slice at u = t - s, centered at x
    std::function<RadialKernel(double)> K2; // time-slice at u = s, centered at y + h
    std::function<RadialKernel(double)> J1; // RHS kernel at time s, centered at x
    std::function<RadialKernel(double)> J2; // RHS kernel at time s, centered at y
};

inline GenPairKernels gen_pair_kernels(const KernelPairSpec& pair, const ModelParams& model) {
    int d = model.d;
    double alpha = model.alpha;
    switch (pair.kind) {
        case KernelPairKind::eta_eta: {
            auto e = [d, alpha](double u) { return make_eta_radial(u, d, alpha); };
            return {e, e, e, e};
        }
        case KernelPairKind::gamma_gamma: {
            if (!(pair.a > 0.0 && pair.b > pair.a))
                throw config_error("check_gen_3p: gamma_gamma needs 0 < a < b");
            double a = pair.a, b = pair.b;
            auto ga = [d, a](double u) { return make_gamma_radial(u, a, d); };
            auto gb = [d, b](double u) { return make_gamma_radial(u, b, d); };
            return {ga, gb, ga, gb};
        }
        case KernelPairKind::gamma_eta: {
            if (!(pair.a > 0.0)) throw config_error("check_gen_3p: gamma_eta needs a > 0");
            double a = pair.a;
            auto ga = [d, a](double u) { return make_gamma_radial(u, a, d); };
            auto e = [d, alpha](double u) { return make_eta_radial(u, d, alpha); };
            return {ga, e, ga, e};
        }
    }
    throw config_error("check_gen_3p: unknown kernel pair");
}

inline void require_jump_profile(const JumpFunctionSpec& F, const char* who) {
    F.validate();
    if (!F.radial_profile) throw config_error(std::string(who) + ": jump family lacks a radial profile");
    if (!(F.diagonal_gap > 0.0))
        throw numeric_error(std::string(who) + ": inner integral diverges at the diagonal (no gap)");
    if (!std::isfinite(F.range_radius)) throw config_error(std::string(who) + ": unbounded jump range");
}

/// Accumulates the space-time integrals behind one generalized 3P row:
/// the LHS kernel product and the two RHS single-kernel integrals, each
/// restricted to the requested region and weighted by phi(|h|)/|h|^{d+alpha}.
struct GenIntegrals {
    double lhs = 0.0;
    double j1 = 0.0;
    double j2 = 0.0;
};

inline GenIntegrals gen_region_integrals(const GenPairKernels& kk, const JumpFunctionSpec& F,
                                         ZRegion reg, const SpaceTimePoint& pt,
                                         const ModelParams& model, const GenThreePControl& ctl,
                                         bool want_j) {
    int d = model.d;
    double alpha = model.alpha;
    double R = dist(pt.x, pt.y);
    double R4 = 0.25 * R;
    const auto& phi = *F.radial_profile;
    double delta = F.diagonal_gap, hmax = F.range_radius;
    double r_lo = std::max(0.0, R - hmax), r_hi = R + hmax;
    std::vector<double> kinks{0.5 * R}; // lens birth at r = 2 R4
    GenIntegrals out;
    for (auto [s, w] : s_panel_nodes(pt.t, ctl.s_panels, ctl.s_order)) {
        RadialKernel K1 = kk.K1(pt.t - s);
        RadialKernel K2 = kk.K2(s);
        LogSpline Z;
        Z.build([&](double r) { return z_region_integral(d, K1, K2, r, reg, R4, ctl.z_tol); },
                r_lo, r_hi, ctl.r_nodes, kinks);
        out.lhs += w * h_integral(d, alpha, phi, delta, hmax, R, Z, ctl.h_tol);
        if (!want_j) continue;
        RadialKernel one = make_one_kernel();
        RadialKernel J1 = kk.J1(s);
        RadialKernel J2 = kk.J2(s);
        if (reg == ZRegion::full) {
            // no region coupling: both factors separate exactly
            double hmass = h_integral(d, alpha, phi, delta, hmax, R,
                                      [] {
                                          LogSpline unit;
                                          unit.build([](double) { return 1.0; }, 0.0, 1.0, 4, {});
                                          return unit;
                                      }(),
                                      ctl.h_tol);
            out.j1 += w * hmass * z_region_integral(d, J1, one, 0.0, ZRegion::full, 0.0, ctl.z_tol);
            out.j2 += w * hmass * z_region_integral(d, J2, one, 0.0, ZRegion::full, 0.0, ctl.z_tol);
        } else {
            LogSpline Z1, Z2;
            Z1.build([&](double r) { return z_region_integral(d, J1, one, r, reg, R4, ctl.z_tol); },
                     r_lo, r_hi, ctl.r_nodes, kinks);
            Z2.build([&](double r) { return z_region_integral(d, J2, one, r, reg, R4, ctl.z_tol); },
                     r_lo, r_hi, ctl.r_nodes, kinks);
            out.j1 += w * h_integral(d, alpha, phi, delta, hmax, R, Z1, ctl.h_tol);
            out.j2 += w * h_integral(d, alpha, phi, delta, hmax, R, Z2, ctl.h_tol);
        }
    }
    return out;
}

inline ZRegion region_of_case(IneqCase icase) {
    switch (icase) {
        case IneqCase::near: return ZRegion::full;
        case IneqCase::far_U: return ZRegion::U;
        case IneqCase::far_V: return ZRegion::V;
    }
    throw config_error("check_gen_3p: unknown case");
}

inline const char* case_name(IneqCase icase) {
    switch (icase) {
        case IneqCase::near: return "near";
        case IneqCase::far_U: return "far_U";
        case IneqCase::far_V: return "far_V";
    }
    return "?";
}

inline const char* pair_name(KernelPairKind k) {
    switch (k) {
        case KernelPairKind::eta_eta: return "eta_eta";
        case KernelPairKind::gamma_gamma: return "gamma_gamma";
        case KernelPairKind::gamma_eta: return "gamma_eta";
    }
    return "?";
}

} // namespace detail3p

/// Generalized 3P inequality for one kernel pair, one region case, over a
/// (t,x,y) grid.  near: |x-y| <= sqrt(t), integral over all of R^d x R^d;
/// far_U / far_V: |x-y| > sqrt(t), integral restricted to U or V.  The RHS
/// follows the matching case of the generalized comparison lemmas; on V it is
/// ||F||_inf eta(t;x-y) alone.  Reported constant is the grid sup of LHS/RHS.
inline InequalityReport check_gen_3p(const KernelPairSpec& pair, const JumpFunctionSpec& F,
                                     IneqCase icase, const SpaceTimeGrid& grid,
                                     const ModelParams& model, const GenThreePControl& ctl = {}) {
    using namespace detail3p;
    model.validate();
    InequalityReport rep;
    rep.name = std::string("gen_3p.") + pair_name(pair.kind) + "." + case_name(icase);
    rep.samples = grid.size();
    if (F.is_zero()) {
        rep.worst_witness = {grid.empty() ? 0.0 : grid.front().t};
        return rep;
    }
    require_jump_profile(F, "check_gen_3p");
    GenPairKernels kk = gen_pair_kernels(pair, model);
    int d = model.d;
    double alpha = model.alpha;
    ZRegion reg = region_of_case(icase);
    for (const auto& pt : grid) {
        if (!(pt.t > 0.0 && pt.t <= 1.0))
            throw config_error("check_gen_3p: grid horizon must lie in (0,1]");
        double R = dist(pt.x, pt.y);
        double rt = std::sqrt(pt.t);
        if (icase == IneqCase::near && R > rt)
            throw config_error("check_gen_3p: near case requires |x-y| <= sqrt(t)");
        if (icase != IneqCase::near && !(R > rt))
            throw config_error("check_gen_3p: far cases require |x-y| > sqrt(t)");
        bool want_j = icase != IneqCase::far_V;
        GenIntegrals gi = gen_region_integrals(kk, F, reg, pt, model, ctl, want_j);
        double rhs = 0.0;
        double eta_xy = eta_kernel(pt.t, R, d, alpha);
        switch (pair.kind) {
            case KernelPairKind::eta_eta:
                rhs = icase == IneqCase::far_V ? F.sup_norm * eta_xy : eta_xy * (gi.j1 + gi.j2);
                break;
            case KernelPairKind::gamma_gamma: {
                if (icase == IneqCase::far_V) {
                    rhs = F.sup_norm * eta_xy;
                } else {
                    // near-field envelope carries the slower rate b; the
                    // far-field U bound carries rate a
                    double rate = icase == IneqCase::near ? pair.b : pair.a;
                    rhs = gamma_kernel(pt.t, R, rate, d) * (gi.j1 + gi.j2);
                }
                break;
            }
            case KernelPairKind::gamma_eta:
                if (icase == IneqCase::far_V) {
                    rhs = F.sup_norm * eta_xy;
                } else {
                    rhs = gamma_kernel(pt.t, R, pair.a, d) * gi.j2 + eta_xy * gi.j1;
                }
                break;
        }
        tally_ratio(rep, gi.lhs, rhs, pt, d);
    }
    return rep;
}

/// Density version of the generalized bound: verifies both
///   (full)  int_0^t iint p(t-s,x,z) p_{2l/3}(s,w,y) F1 |z-w|^{-d-a} dz dw ds
///             <= M2 p_{2l/3}(t,x,y) [ N_{F1}^{a,l/3}(t) + ||F1|| 1_{|x-y|>sqrt t} ]
///   (U)     same restricted to U  <= M2 p_{2l/3}(t,x,y) N_{F1}^{a,l/3}(t)
/// and reports the larger empirical M2 over the grid.
inline InequalityReport check_gen_3p_for_p(const JumpFunctionSpec& F1, const ModelParams& model,
                                           const SpaceTimeGrid& grid,
                                           const GenThreePControl& ctl = {}) {
    using namespace detail3p;
    model.validate();
    InequalityReport rep;
    rep.name = "gen_3p_for_p";
    rep.samples = 2 * grid.size();
    if (F1.is_zero()) {
        rep.worst_witness = {grid.empty() ? 0.0 : grid.front().t};
        return rep;
    }
    require_jump_profile(F1, "check_gen_3p_for_p");
    int d = model.d;
    double alpha = model.alpha;
    double lam = model.lambda_hi;
    DensitySliceCache slices(model);
    GenPairKernels kk;
    kk.K1 = [&](double u) {
        return make_spline_radial(slices.slice(u), d, slices.scale(u));
    };
    kk.K2 = [&](double u) { return make_envelope_radial(u, 2.0 * lam / 3.0, d, alpha); };
    kk.J1 = kk.K1; // unused (want_j = false below)
    kk.J2 = kk.K2;
    for (const auto& pt : grid) {
        if (!(pt.t > 0.0 && pt.t <= 1.0))
            throw config_error("check_gen_3p_for_p: grid horizon must lie in (0,1]");
        double R = dist(pt.x, pt.y);
        double p_env = envelope_kernel(pt.t, R, 2.0 * lam / 3.0, d, alpha);
        double nf1 = kato_norm_jump(F1, pt.t, lam / 3.0, model).value;
        GenIntegrals full = gen_region_integrals(kk, F1, ZRegion::full, pt, model, ctl, false);
        GenIntegrals restU = gen_region_integrals(kk, F1, ZRegion::U, pt, model, ctl, false);
        double rhs_full = p_env * (nf1 + (R > std::sqrt(pt.t) ? F1.sup_norm : 0.0));
        double rhs_U = p_env * nf1;
        tally_ratio(rep, full.lhs, rhs_full, pt, d);
        tally_ratio(rep, restU.lhs, rhs_U, pt, d);
    }
    return rep;
}

/// Halftime reproduction bound for the comparison envelope: for 0 < t < 2,
///   int p_{2l/3}(t/2,x,z) p_{2l/3}(t/2,z,y) dz <= C p_{2l/3}(t,x,y).
inline InequalityReport check_halftime_envelope(const SpaceTimeGrid& grid, double lambda,
                                                const ModelParams& model) {
    model.validate();
    if (!(lambda > 0.0)) throw config_error("check_halftime_envelope: lambda must be positive");
    InequalityReport rep;
    rep.name = "halftime_envelope";
    rep.samples = grid.size();
    int d = model.d;
    double alpha = model.alpha;
    double rate = 2.0 * lambda / 3.0;
    for (const auto& pt : grid) {
        if (!(pt.t > 0.0 && pt.t < 2.0))
            throw config_error("check_halftime_envelope: need 0 < t < 2");
        double R = dist(pt.x, pt.y);
        auto half = [&](double rho) { return envelope_kernel(0.5 * pt.t, rho, rate, d, alpha); };
        double wg = std::sqrt(0.5 * pt.t / rate), we = std::sqrt(0.5 * pt.t);
        double lhs = conv_radial(d, half, half, R, R + 500.0, 1e-8,
                                 {0.5 * wg, wg, 2.0 * wg, 4.0 * wg, 0.5 * we, we, 2.0 * we});
        double rhs = envelope_kernel(pt.t, R, rate, d, alpha);
        detail3p::tally_ratio(rep, lhs, rhs, pt, d);
    }
    return rep;
}

} // namespace fkheat
