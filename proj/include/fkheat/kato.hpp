#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <variant>
#include <vector>

#include <boost/math/special_functions/expint.hpp>

#include "fkheat/core.hpp"
#include "fkheat/kernels.hpp"
#include "fkheat/measures.hpp"
#include "fkheat/quadrature.hpp"

namespace fkheat {

struct KatoNormResult {
    double t = 0.0;
    double lambda = 0.0;
    double value = 0.0;
    Point sup_witness{};
    double quad_error = 0.0;
};

// int_0^t Gamma_lambda(s; rho) ds.
// d=2: E_1(lambda rho^2 / t);  d=3: sqrt(pi/c) erfc(sqrt(c/t)), c = lambda rho^2.
// Diverges at rho = 0 for d >= 2 (integrable singularity under d-dim volume).
inline double gamma_time_integral(double t, double rho, double lambda, int d) {
    double c = lambda * rho * rho;
    if (d == 2) {
        double x = c / t;
        if (x > 740.0) return 0.0;
        if (x < 1e-14) return -std::log(x) - 0.57721566490153286 + x; // E1 series head
        return boost::math::expint(1, x);
    }
    if (rho == 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt(pi / c) * std::erfc(std::sqrt(c / t));
}

// int_0^t eta(s; rho) ds = 2 int_0^{sqrt t} u^3 (u + rho)^{-(d+alpha)} du.
// Closed binomial form when rho is comparable to sqrt(t); fixed Gauss when
// rho >> sqrt(t) (the binomial terms cancel to (sqrt(t)/rho)^4 there).
inline double eta_time_integral(double t, double rho, int d, double alpha) {
    double m = d + alpha;
    double X = std::sqrt(t);
    if (rho == 0.0) {
        if (m >= 4.0) return std::numeric_limits<double>::infinity();
        return 2.0 * std::pow(X, 4.0 - m) / (4.0 - m);
    }
    if (rho > 8.0 * X) {
        auto f = [&](double u) { return u * u * u * std::pow(u + rho, -m); };
        return 2.0 * gauss_fixed(f, 0.0, X, 24);
    }
    // int_0^X (u+rho)^{k-m} du
    auto pint = [&](int k) {
        double e = k - m + 1.0;
        if (std::abs(e) < 1e-12) return std::log((X + rho) / rho);
        return (std::pow(X + rho, e) - std::pow(rho, e)) / e;
    };
    double r2 = rho * rho;
    return 2.0 * (pint(3) - 3.0 * rho * pint(2) + 3.0 * r2 * pint(1) - r2 * rho * pint(0));
}

/// Which summand of the comparison envelope a norm integrates against.
enum class KernelPart { gamma, eta, both };

inline double kernel_time_integral(double t, double rho, double lambda, int d, double alpha,
                                   KernelPart part = KernelPart::both) {
    double v = 0.0;
    if (part != KernelPart::eta) v += gamma_time_integral(t, rho, lambda, d);
    if (part != KernelPart::gamma) v += eta_time_integral(t, rho, d, alpha);
    return v;
}

// Lebesgue measure: int Gamma_lambda(s;.) = (pi/lambda)^{d/2} and
// int eta(s;.) = S_d B(d,alpha) s^{1-alpha/2}, both in closed form.
inline double lebesgue_kato_norm(double t, double lambda, int d, double alpha,
                                 KernelPart part = KernelPart::both) {
    double gamma_part = std::pow(pi / lambda, 0.5 * d) * t;
    double e = 2.0 - 0.5 * alpha;
    double eta_part = sphere_area(d) * std::beta(double(d), alpha) * std::pow(t, e) / e;
    if (part == KernelPart::gamma) return gamma_part;
    if (part == KernelPart::eta) return eta_part;
    return gamma_part + eta_part;
}

namespace detail {

inline void check_horizon(double t) {
    if (!(t > 0.0) || t > 1.0) throw config_error("kato norm: need 0 < t <= 1");
}

inline std::vector<double> witness_radii(double reach) {
    std::vector<double> rs;
    for (double r = 0.0; r <= reach + 1e-9; r += 0.25) rs.push_back(r);
    return rs;
}

} // namespace detail

// N_mu(t) = sup_x int_0^t int (Gamma_lambda + eta)(s; x - y) |mu|(dy) ds,
// kernel at time s.  Sup realized over a witness ray from the mass center
// (registry measures are radial, so the norm depends on |x - center| only).
inline KatoNormResult kato_norm_measure(const MeasureSpec& mu, double t, double lambda,
                                        const ModelParams& model, KernelPart part = KernelPart::both) {
    detail::check_horizon(t);
    mu.validate();
    KatoNormResult out;
    out.t = t;
    out.lambda = lambda;
    out.sup_witness = mu.center;
    if (mu.is_zero()) return out;
    if (mu.constant_level) {
        out.value = std::abs(*mu.constant_level) * lebesgue_kato_norm(t, lambda, model.d, model.alpha, part);
        out.quad_error = 1e-14 * out.value;
        return out;
    }
    if (!mu.radial_abs)
        throw config_error("kato_norm_measure: measure family lacks a radial profile");
    const auto& vrad = *mu.radial_abs;
    double cut = mu.effective_radius;
    if (!std::isfinite(cut)) throw config_error("kato_norm_measure: unbounded support");
    auto K = [&](double rho) { return kernel_time_integral(t, rho, lambda, model.d, model.alpha, part); };
    auto norm_at = [&](double r, double tol) {
        return conv_radial(model.d, K, vrad, r, cut, tol);
    };
    double reach = std::min(cut, 4.0) + 2.0;
    double best = -1.0, best_r = 0.0;
    for (double r : detail::witness_radii(reach)) {
        double n = norm_at(r, 3e-6);
        if (n > best) {
            best = n;
            best_r = r;
        }
    }
    double refined = norm_at(best_r, 1e-9);
    out.value = refined;
    out.sup_witness = mu.center;
    out.sup_witness[0] += best_r;
    out.quad_error = std::abs(refined - norm_at(best_r, 1e-7));
    return out;
}

// N_F(t) = sup_y int_0^t iint (Gamma_lambda + eta)(s; y - z)
//          (|F(z,w)| + |F(w,z)|) / |z - w|^{d + alpha} dw dz ds.
// Registry families are translation invariant: the inner w-integral is a
// z-independent constant and the outer integral reduces to the Lebesgue norm.
inline KatoNormResult kato_norm_jump(const JumpFunctionSpec& F, double t, double lambda,
                                     const ModelParams& model) {
    detail::check_horizon(t);
    F.validate();
    KatoNormResult out;
    out.t = t;
    out.lambda = lambda;
    if (F.is_zero()) return out;
    if (F.diagonal_gap <= 0.0)
        throw numeric_error("kato_norm_jump: inner integral diverges at the diagonal (no gap)");
    if (!F.radial_profile)
        throw config_error("kato_norm_jump: jump family lacks a radial profile");
    if (!std::isfinite(F.range_radius))
        throw config_error("kato_norm_jump: unbounded range");
    const auto& phi = *F.radial_profile;
    double mexp = model.d + model.alpha;
    auto g = [&](double r) { return 2.0 * phi(r) * std::pow(r, -mexp) * std::pow(r, model.d - 1); };
    double inner = sphere_area(model.d) * integrate_gk(g, F.diagonal_gap, F.range_radius, 1e-12);
    out.value = inner * lebesgue_kato_norm(t, lambda, model.d, model.alpha);
    out.quad_error = 1e-11 * out.value;
    return out;
}

inline double combined_norm(const MeasureSpec& mu, const JumpFunctionSpec& F1, double t,
                            double lambda, const ModelParams& model) {
    return kato_norm_measure(mu, t, lambda, model).value +
           kato_norm_jump(F1, t, lambda, model).value;
}

struct KatoProbeReport {
    std::vector<double> ts;
    std::vector<double> values;
    double fitted_exponent = 0.0;
    bool consistent = false;
};

// Decay exponents below this are treated as "not vanishing" by the probe; the
// probe reports evidence, never a proof.
inline constexpr double kKatoDecayThreshold = 0.3;

inline double kato_norm_measure_or_jump(const MeasureSpec& m, double t, double lambda,
                                        const ModelParams& model) {
    return kato_norm_measure(m, t, lambda, model).value;
}
inline double kato_norm_measure_or_jump(const JumpFunctionSpec& f, double t, double lambda,
                                        const ModelParams& model) {
    return kato_norm_jump(f, t, lambda, model).value;
}

inline KatoProbeReport kato_membership_probe(
    const std::variant<MeasureSpec, JumpFunctionSpec>& spec, double lambda,
    const std::vector<double>& ts, const ModelParams& model) {
    if (ts.empty()) throw config_error("membership probe: empty time sequence");
    for (size_t i = 0; i + 1 < ts.size(); ++i)
        if (!(ts[i + 1] < ts[i])) throw config_error("membership probe: ts must strictly decrease");
    if (ts.front() > 1.0) throw config_error("membership probe: times must be <= 1");
    KatoProbeReport rep;
    rep.ts = ts;
    for (double t : ts) {
        double v = std::visit(
            [&](const auto& s) { return kato_norm_measure_or_jump(s, t, lambda, model); }, spec);
        rep.values.push_back(v);
    }
    // least-squares slope of log N against log t over the positive entries
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (size_t i = 0; i < ts.size(); ++i) {
        if (rep.values[i] <= 0.0) continue;
        double x = std::log(ts[i]), y = std::log(rep.values[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    if (n >= 2) {
        rep.fitted_exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    } else {
        rep.fitted_exponent = std::numeric_limits<double>::quiet_NaN();
    }
    bool nonincreasing = true;
    for (size_t i = 0; i + 1 < rep.values.size(); ++i)
        if (rep.values[i + 1] > rep.values[i] * (1.0 + 1e-9)) nonincreasing = false;
    bool all_zero = std::all_of(rep.values.begin(), rep.values.end(),
                                [](double v) { return v == 0.0; });
    rep.consistent = all_zero || (nonincreasing && rep.fitted_exponent >= kKatoDecayThreshold);
    return rep;
}

} // namespace fkheat
