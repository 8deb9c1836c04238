#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "fkheat/core.hpp"

// Comparison kernels used throughout: the Gaussian-type kernel
//   gamma_lambda(t;x) = t^{-d/2} exp(-lambda |x|^2 / t),
// the polynomial-tail kernel
//   eta(t;x) = t / (sqrt(t) + |x|)^{d+alpha},
// and their sum, the two-sided envelope.  All evaluators take the radius
// |x| directly; callers handle points.

namespace fkheat {

struct ComparisonKernelParams {
    double lambda = 1.0; // Gaussian rate, > 0
    int d = 2;
    double alpha = 1.0;

    void validate() const {
        if (!(lambda > 0.0)) throw config_error("ComparisonKernelParams: lambda must be positive");
        if (d != 2 && d != 3) throw config_error("ComparisonKernelParams: d must be 2 or 3");
        if (!(alpha > 0.0 && alpha < 2.0)) throw config_error("ComparisonKernelParams: alpha in (0,2)");
    }
};

/// log gamma_lambda(t;r); safe for arguments where the linear form underflows.
inline double log_gamma_kernel(double t, double r, double lambda, int d) {
    return -0.5 * d * std::log(t) - lambda * r * r / t;
}

inline double gamma_kernel(double t, double r, double lambda, int d) {
    double e = lambda * r * r / t;
    if (e > 700.0) {
        double lg = log_gamma_kernel(t, r, lambda, d);
        return lg < -745.0 ? 0.0 : std::exp(lg);
    }
    return std::pow(t, -0.5 * d) * std::exp(-e);
}

inline double gamma_kernel(double t, double r, const ComparisonKernelParams& k) {
    return gamma_kernel(t, r, k.lambda, k.d);
}

inline double eta_kernel(double t, double r, int d, double alpha) {
    double s = std::sqrt(t) + r;
    return t / std::pow(s, d + alpha);
}

inline double eta_kernel(double t, double r, const ComparisonKernelParams& k) {
    return eta_kernel(t, r, k.d, k.alpha);
}

/// Two-sided envelope p_lambda(t;r) = gamma_lambda(t;r) + eta(t;r).
inline double envelope_kernel(double t, double r, double lambda, int d, double alpha) {
    return gamma_kernel(t, r, lambda, d) + eta_kernel(t, r, d, alpha);
}

/// Compact min-form of the envelope and the expanded form, for the
/// two-sided comparability check on (0,1].  Returns {compact, expanded}.
/// compact  = t^{-d/2} /\ ( gamma_lambda(t;r) + t^{-d/alpha} /\ t/r^{d+alpha} )
/// expanded = gamma_lambda(t;r) + eta(t;r)
struct CompactFormPair {
    double compact = 0.0;
    double expanded = 0.0;
    double ratio = 0.0; // compact / expanded
};

inline CompactFormPair equivalence_compact_form(double t, double r, double lambda, int d, double alpha) {
    if (!(t > 0.0 && t <= 1.0)) throw config_error("equivalence_compact_form: t must lie in (0,1]");
    double a = std::pow(t, -0.5 * d);
    double b = gamma_kernel(t, r, lambda, d);
    double tail = (r > 0.0) ? t / std::pow(r, d + alpha) : std::numeric_limits<double>::infinity();
    double c = std::min(std::pow(t, -double(d) / alpha), tail);
    CompactFormPair out;
    out.compact = std::min(a, b + c);
    out.expanded = b + eta_kernel(t, r, d, alpha);
    out.ratio = out.compact / out.expanded;
    return out;
}

/// Elementary two-point inequality behind the Gaussian 3P bound:
/// |x-z|^2/(t-s) + |z-y|^2/s >= |x-y|^2/t, with equality at
/// z = ((t-s) y + s x)/t.  Returns lhs - rhs (nonnegative up to roundoff).
inline double elementary_threepoint_gap(double t, double s, const Point& x, const Point& y, const Point& z) {
    if (!(s > 0.0 && s < t)) throw config_error("elementary_threepoint_gap: need 0 < s < t");
    double lhs = (x - z).norm2() / (t - s) + (z - y).norm2() / s;
    double rhs = (x - y).norm2() / t;
    return lhs - rhs;
}

} // namespace fkheat
