#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fkheat/kernels.hpp"

using namespace fkheat;
using Catch::Approx;

TEST_CASE("gamma kernel closed values") {
    CHECK(gamma_kernel(0.25, 0.5, 1.0, 2) == Approx(4.0 * std::exp(-1.0)).epsilon(1e-14));
    CHECK(gamma_kernel(1.0, 0.0, 1.0, 2) == Approx(1.0));
    CHECK(gamma_kernel(1.0, 0.0, 0.5, 3) == Approx(1.0));
    // Log-space path: enormous exponent neither overflows nor traps.
    CHECK(gamma_kernel(1e-4, 1.0, 1.0, 2) == 0.0);
    CHECK(std::isfinite(log_gamma_kernel(1e-4, 1.0, 1.0, 2)));
    CHECK(log_gamma_kernel(1e-4, 1.0, 1.0, 2) == Approx(-0.5 * 2 * std::log(1e-4) - 1e4));
}

TEST_CASE("eta kernel closed values") {
    CHECK(eta_kernel(1.0, 1.0, 2, 1.0) == Approx(0.125).epsilon(1e-14));
    CHECK(eta_kernel(0.01, 1.0, 2, 1.0) == Approx(0.01 / std::pow(1.1, 3)).epsilon(1e-14));
    CHECK(eta_kernel(1.0, 0.0, 2, 1.0) == Approx(1.0));
}

TEST_CASE("envelope is the kernel sum") {
    double t = 1.0, r = 1.0;
    CHECK(envelope_kernel(t, r, 1.0, 2, 1.0) ==
          Approx(std::exp(-1.0) + 0.125).epsilon(1e-14));
}

TEST_CASE("kernels decrease in radius") {
    double prev_g = 1e300, prev_e = 1e300;
    for (double r = 0.0; r <= 6.0; r += 0.17) {
        double g = gamma_kernel(0.3, r, 0.7, 2);
        double e = eta_kernel(0.3, r, 2, 1.0);
        CHECK(g < prev_g + 1e-300);
        CHECK(e < prev_e);
        prev_g = g;
        prev_e = e;
    }
}

TEST_CASE("compact min-form brackets the envelope") {
    auto at_origin = equivalence_compact_form(1.0, 0.0, 1.0, 2, 1.0);
    CHECK(at_origin.compact == Approx(1.0));
    CHECK(at_origin.expanded == Approx(2.0));
    CHECK(at_origin.ratio == Approx(0.5));

    auto off = equivalence_compact_form(0.25, 2.0, 1.0, 2, 1.0);
    CHECK(off.ratio == Approx(1.953125).epsilon(1e-3));

    // Sweep t in [1e-4,1], r in {0} u [1e-3,10]; the two forms stay uniformly
    // comparable.  Bounds frozen from this grid.
    std::vector<double> ts, rs;
    for (int i = 0; i <= 60; ++i) ts.push_back(std::pow(10.0, -4.0 + 4.0 * i / 60.0));
    rs.push_back(0.0);
    for (int j = 0; j <= 90; ++j) rs.push_back(std::pow(10.0, -3.0 + 4.0 * j / 90.0));
    double lo = 1e300, hi = -1e300;
    for (double t : ts) {
        for (double r : rs) {
            double q = equivalence_compact_form(t, r, 1.0, 2, 1.0).ratio;
            lo = std::min(lo, q);
            hi = std::max(hi, q);
        }
    }
    CHECK(lo == Approx(0.5).epsilon(1e-12));
    CHECK(hi == Approx(2.6428853831977719).epsilon(1e-9)); // frozen grid sup
    // A second parameter set stays bounded as well.
    for (double t : ts) {
        for (double r : rs) {
            double q = equivalence_compact_form(t, r, 0.5, 3, 1.4).ratio;
            CHECK(q >= 0.4);
            CHECK(q <= 3.0);
        }
    }
    CHECK_THROWS_AS(equivalence_compact_form(1.5, 0.0, 1.0, 2, 1.0), config_error);
}

TEST_CASE("two-point quadratic inequality and its minimizer") {
    Point x(0.7, -0.3), y(-1.1, 0.4);
    double t = 0.8, s = 0.3;
    // Minimizer z* = (s x + (t-s) y)/t gives equality.
    Point zstar = (x * (s / t)) + (y * ((t - s) / t));
    CHECK(elementary_threepoint_gap(t, s, x, y, zstar) == Approx(0.0).margin(1e-12));
    for (double dx : {-0.9, -0.2, 0.15, 1.3}) {
        for (double dy : {-0.6, 0.33, 0.9}) {
            Point z = zstar + Point(dx, dy);
            CHECK(elementary_threepoint_gap(t, s, x, y, z) >= -1e-12);
        }
    }
    CHECK_THROWS_AS(elementary_threepoint_gap(0.5, 0.7, x, y, zstar), config_error);
}
