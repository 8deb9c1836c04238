#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fkheat/quadrature.hpp"
#include "fkheat/stable.hpp"

using namespace fkheat;
using Catch::Approx;

namespace {

// Euler-transformed sum of an alternating panel series: integrate f over
// consecutive panels [z_k, z_{k+1}] and average partial sums repeatedly.
template <typename F>
double alternating_panel_sum(F&& f, const std::vector<double>& z) {
    std::vector<double> partial;
    double s = 0.0;
    for (size_t k = 0; k + 1 < z.size(); ++k) {
        s += gauss_fixed(f, z[k], z[k + 1], 16);
        partial.push_back(s);
    }
    for (int level = 0; level < 14 && partial.size() > 1; ++level) {
        for (size_t i = 0; i + 1 < partial.size(); ++i)
            partial[i] = 0.5 * (partial[i] + partial[i + 1]);
        partial.pop_back();
    }
    return partial.back();
}

} // namespace

TEST_CASE("levy constant matches the characteristic exponent") {
    // The isotropic alpha-stable Levy measure A |z|^{-d-alpha} dz must satisfy
    // int (1 - cos(xi . z)) nu(dz) = |xi|^alpha.  With xi = e_1 the angular
    // average of cos(xi . z) over |z| = rho is J0(rho) (d=2) or sinc(rho) (d=3).
    for (int d : {2, 3}) {
        auto phi = [&](double rho) {
            return d == 2 ? std::cyl_bessel_j(0.0, rho) : std::sin(rho) / rho;
        };
        // series head below 1e-3 avoids cancellation and 0 * inf at rho -> 0
        auto head_of = [&](double alpha) {
            return [&, alpha](double rho) {
                if (rho < 1e-3) {
                    double q = rho * rho;
                    double c = d == 2 ? 0.25 * (1.0 - q / 16.0) : (1.0 - q / 20.0) / 6.0;
                    return c * std::pow(rho, 1.0 - alpha);
                }
                return (1.0 - phi(rho)) * std::pow(rho, -1.0 - alpha);
            };
        };
        // X sits near a zero of phi so the tail panels alternate in sign.
        double X = d == 2 ? (13.0 - 0.25) * pi : 13.0 * pi;
        std::vector<double> zeros;
        for (int k = 0; k <= 90; ++k) zeros.push_back(X + k * pi);
        for (double alpha : {0.6, 1.0, 1.4}) {
            auto head = head_of(alpha);
            double I = integrate_ts(head, 0.0, 1.0, 1e-11) + integrate_gk(head, 1.0, X, 1e-11);
            I += std::pow(X, -alpha) / alpha; // int_X^inf rho^{-1-alpha}
            auto osc = [&](double rho) { return phi(rho) * std::pow(rho, -1.0 - alpha); };
            I -= alternating_panel_sum(osc, zeros);
            double val = sphere_area(d) * stable_levy_constant(d, alpha) * I;
            CHECK(val == Approx(1.0).epsilon(2e-3));
        }
    }
    CHECK(stable_levy_constant(2, 1.0) == Approx(1.0 / (2.0 * pi)).epsilon(1e-12));
}

TEST_CASE("one-sided stable density routes agree and normalize") {
    for (double beta : {0.25, 0.4, 0.75}) {
        OneSidedStable f(beta);
        // Route agreement on the overlap region.
        for (double x : {2.0, 3.0, 4.5, 8.0}) {
            CHECK(f.series(x) == Approx(f.pollard(x)).epsilon(1e-8));
        }
        // Laplace transform reproduces exp(-u^beta).
        for (double u : {0.5, 1.0, 2.0}) {
            auto g = [&](double x) { return std::exp(-u * x) * f.density(x); };
            double lt = gauss_log_panels(g, 1e-9, 2e3, 64, 12);
            CHECK(lt == Approx(std::exp(-std::pow(u, beta))).epsilon(1e-7));
        }
        // Mass: finite part plus the tail series sum_k c_k x^{-k beta} / (k beta).
        double cut = 1e5;
        double mass = gauss_log_panels([&](double x) { return f.density(x); }, 1e-9, cut, 72, 12);
        double fact = 1.0;
        for (int k = 1; k <= 6; ++k) {
            fact *= k;
            double ck = std::tgamma(k * beta + 1.0) * std::sin(pi * beta * k) / (pi * fact);
            mass += (k % 2 ? ck : -ck) * std::pow(cut, -k * beta) / (k * beta);
        }
        CHECK(mass == Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("half-stable clock matches the Levy closed form") {
    OneSidedStable f(0.5);
    for (double x : {0.05, 0.3, 1.0, 6.0}) {
        double levy = std::pow(x, -1.5) * std::exp(-0.25 / x) / (2.0 * std::sqrt(pi));
        CHECK(f.density(x) == Approx(levy).epsilon(1e-13));
        if (x < 3.0) CHECK(f.pollard(x) == Approx(levy).epsilon(1e-9));
        if (x >= 3.0) CHECK(f.series(x) == Approx(levy).epsilon(1e-9));
    }
}

TEST_CASE("isotropic stable density: Cauchy closed form and subordination") {
    IsotropicStable s2(2, 1.0);
    CHECK(s2.density(1.0, 0.0) == Approx(1.0 / (2.0 * pi)).epsilon(1e-12));
    CHECK(s2.density(1.0, 1.0) == Approx(1.0 / (2.0 * pi) / std::pow(2.0, 1.5)).epsilon(1e-12));
    // Subordination route reproduces the closed form.
    for (double t : {0.25, 1.0}) {
        for (double r : {0.0, 0.5, 2.0, 10.0}) {
            CHECK(s2.density_via_subordination(t, r) == Approx(s2.density(t, r)).epsilon(1e-9));
        }
    }
    IsotropicStable s3(3, 1.0);
    CHECK(s3.density(2.0, 1.0) ==
          Approx(std::tgamma(2.0) / (pi * pi) * 2.0 / std::pow(4.0 + 1.0, 2.0)).epsilon(1e-12));
    CHECK(s3.density_via_subordination(2.0, 1.0) == Approx(s3.density(2.0, 1.0)).epsilon(1e-9));
}

TEST_CASE("stable density has the correct Fourier transform for general alpha") {
    // d=2 radial transform: int_0^inf p(t,rho) J0(k rho) 2 pi rho drho = exp(-t k^alpha).
    for (double alpha : {0.8, 1.5}) {
        IsotropicStable s(2, alpha);
        double t = 0.7;
        for (double k : {0.5, 1.5}) {
            auto g = [&](double rho) {
                return s.density(t, rho) * std::cyl_bessel_j(0.0, k * rho) * 2.0 * pi * rho;
            };
            double v = integrate_gk(g, 0.0, 40.0, 1e-10) + integrate_gk(g, 40.0, 400.0, 1e-10);
            CHECK(v == Approx(std::exp(-t * std::pow(k, alpha))).epsilon(5e-4));
        }
    }
}

TEST_CASE("subordinator spline cache tracks the raw density") {
    SubordinatorDensity cached(0.35);
    OneSidedStable raw(0.35);
    for (double x : {1e-3, 0.02, 0.4, 2.0, 55.0, 1e4, 1e8}) {
        CHECK(cached(x) == Approx(raw.density(x)).epsilon(1e-7));
    }
}
