#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fkheat/core.hpp"
#include "fkheat/density.hpp"
#include "fkheat/kernels.hpp"

// Envelope certification: on a (t, r) grid over (0,1] x [0, r_max] the base
// density is compared against the two candidate envelopes
//   lower:  p >= C^{-1} (gamma_{lambda_lo} + eta)
//   upper:  p <= C     (gamma_{lambda_hi} + eta)
// and the smallest admissible constant on the grid is reported.

namespace fkheat {

struct EnvelopeGridSpec {
    int n_t = 100;
    int n_r = 100;
    double t_min = 1e-3;
    double t_max = 1.0;
    double r_max = 5.0;

    void validate() const {
        if (n_t < 2 || n_r < 2) throw config_error("EnvelopeGridSpec: need at least a 2x2 grid");
        if (!(t_min > 0.0 && t_max <= 1.0 && t_min < t_max)) throw config_error("EnvelopeGridSpec: t range must sit inside (0,1]");
        if (!(r_max > 0.0)) throw config_error("EnvelopeGridSpec: r_max must be positive");
    }

    std::vector<double> times() const {
        std::vector<double> ts(static_cast<size_t>(n_t));
        double u0 = std::log(t_min), u1 = std::log(t_max);
        for (int i = 0; i < n_t; ++i) ts[size_t(i)] = std::exp(u0 + (u1 - u0) * i / (n_t - 1));
        return ts;
    }

    std::vector<double> radii() const {
        // Graded toward zero; includes the diagonal r = 0.
        std::vector<double> rs(static_cast<size_t>(n_r));
        for (int j = 0; j < n_r; ++j) {
            double u = double(j) / (n_r - 1);
            rs[size_t(j)] = r_max * u * std::sqrt(u);
        }
        return rs;
    }
};

struct EnvelopeCertificate {
    double lambda_lo = 0.0;
    double lambda_hi = 0.0;
    EnvelopeGridSpec grid;
    // ratio_min: inf over the grid of p / p_{lambda_lo};
    // ratio_max: sup over the grid of p / p_{lambda_hi}.
    double ratio_min = 0.0;
    double ratio_max = 0.0;
    double certified_C = 0.0; // max(1/ratio_min, ratio_max, 1)
    double t_at_min = 0.0, r_at_min = 0.0;
    double t_at_max = 0.0, r_at_max = 0.0;
};

inline EnvelopeCertificate certify_envelope(const BaseDensity& p, double lambda_lo, double lambda_hi,
                                            const EnvelopeGridSpec& grid) {
    grid.validate();
    const ModelParams& m = p.model();
    if (!(lambda_lo > 0.0 && lambda_lo <= 1.0 && lambda_hi > 0.0 && lambda_hi <= 1.0))
        throw config_error("certify_envelope: lambdas must lie in (0,1]");
    EnvelopeCertificate cert;
    cert.lambda_lo = lambda_lo;
    cert.lambda_hi = lambda_hi;
    cert.grid = grid;
    cert.ratio_min = std::numeric_limits<double>::infinity();
    cert.ratio_max = 0.0;
    for (double t : grid.times()) {
        for (double r : grid.radii()) {
            double pv = p(t, r);
            if (!(pv > 0.0)) throw numeric_error("certify_envelope: nonpositive density on grid");
            double lo = envelope_kernel(t, r, lambda_lo, m.d, m.alpha);
            double hi = envelope_kernel(t, r, lambda_hi, m.d, m.alpha);
            double q_lo = pv / lo;
            double q_hi = pv / hi;
            if (q_lo < cert.ratio_min) {
                cert.ratio_min = q_lo;
                cert.t_at_min = t;
                cert.r_at_min = r;
            }
            if (q_hi > cert.ratio_max) {
                cert.ratio_max = q_hi;
                cert.t_at_max = t;
                cert.r_at_max = r;
            }
        }
    }
    cert.certified_C = std::max({1.0 / cert.ratio_min, cert.ratio_max, 1.0});
    return cert;
}

/// Applies a certificate back onto the model parameters.
inline void apply_certificate(ModelParams& m, const EnvelopeCertificate& c) {
    m.lambda_lo = c.lambda_lo;
    m.lambda_hi = c.lambda_hi;
    m.envC = c.certified_C;
}

/// Counts grid points violating C^{-1} p_lo <= p <= C p_hi for a given C;
/// used to re-check a certificate on a fresh (e.g. doubled) grid.
inline int count_envelope_violations(const BaseDensity& p, const EnvelopeCertificate& cert,
                                     const EnvelopeGridSpec& grid, double slack = 1.0) {
    const ModelParams& m = p.model();
    double C = cert.certified_C * slack;
    int bad = 0;
    for (double t : grid.times()) {
        for (double r : grid.radii()) {
            double pv = p(t, r);
            double lo = envelope_kernel(t, r, cert.lambda_lo, m.d, m.alpha);
            double hi = envelope_kernel(t, r, cert.lambda_hi, m.d, m.alpha);
            if (pv * C < lo || pv > C * hi) ++bad;
        }
    }
    return bad;
}

} // namespace fkheat
