#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "fkheat/envelope.hpp"

using namespace fkheat;
using Catch::Approx;

TEST_CASE("mixed model admits a finite two-sided envelope") {
    ModelParams m;
    m.d = 2;
    m.alpha = 1.0;
    m.sigma2 = 1.0;
    m.a = 1.0;
    BaseDensity p(m);
    EnvelopeGridSpec g;
    g.n_t = 40;
    g.n_r = 40;
    g.t_min = 5e-3;
    g.r_max = 5.0;
    auto cert = certify_envelope(p, 0.55, 0.45, g);
    CHECK(cert.ratio_min > 0.0);
    CHECK(cert.ratio_max < std::numeric_limits<double>::infinity());
    CHECK(cert.certified_C >= 1.0);
    CHECK(cert.certified_C < 50.0);
    CHECK(count_envelope_violations(p, cert, g) == 0);

    // Refined grid does not move the constant much.
    EnvelopeGridSpec g2 = g;
    g2.n_t = 80;
    g2.n_r = 80;
    auto cert2 = certify_envelope(p, 0.55, 0.45, g2);
    CHECK(cert2.certified_C == Approx(cert.certified_C).epsilon(0.05));

    ModelParams updated = m;
    apply_certificate(updated, cert);
    CHECK(updated.envC == cert.certified_C);
    CHECK(updated.lambda_hi == 0.45);
}

TEST_CASE("pure diffusion stays comparable on a compact grid") {
    ModelParams m;
    m.d = 2;
    m.alpha = 1.0;
    m.sigma2 = 1.0;
    m.a = 0.0;
    BaseDensity p(m);
    EnvelopeGridSpec g;
    g.n_t = 30;
    g.n_r = 30;
    g.t_min = 0.05; // keeps exp(-r^2/2t) representable at the far corner
    g.r_max = 4.0;
    auto cert = certify_envelope(p, 0.55, 0.45, g);
    // Upper side: lambda_hi < 1/(2 sigma2), so p <= (2 pi)^{-1} Gamma pointwise.
    // Only that side is claimed without jumps; the polynomial eta term cannot
    // minorize a Gaussian tail, so certified_C is huge but finite.
    CHECK(cert.ratio_max <= 1.0 / (2.0 * pi) + 1e-12);
    CHECK(cert.ratio_min > 0.0);
    CHECK(std::isfinite(cert.certified_C));
}

TEST_CASE("certification validates inputs") {
    ModelParams m;
    BaseDensity p(m);
    EnvelopeGridSpec g;
    g.t_max = 2.0;
    CHECK_THROWS_AS(certify_envelope(p, 0.5, 0.5, g), config_error);
    EnvelopeGridSpec ok;
    CHECK_THROWS_AS(certify_envelope(p, 0.5, 1.5, ok), config_error);
}
