#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <variant>
#include <vector>

#include "fkheat/kato.hpp"

using namespace fkheat;
using Catch::Approx;

namespace {

ModelParams model_2d() {
    ModelParams m;
    m.d = 2;
    m.alpha = 1.0;
    m.sigma2 = 1.0;
    m.a = 1.0;
    return m;
}

} // namespace

TEST_CASE("time-integrated kernel matches direct quadrature") {
    for (int d : {2, 3}) {
        for (double alpha : {0.7, 1.0, 1.6}) {
            for (double rho : {0.05, 0.4, 1.0, 3.0, 9.0}) {
                double t = 0.6, lambda = 0.8;
                auto f = [&](double s) {
                    return gamma_kernel(s, rho, lambda, d) + eta_kernel(s, rho, d, alpha);
                };
                double direct = integrate_ts(f, 0.0, t, 1e-12);
                CHECK(kernel_time_integral(t, rho, lambda, d, alpha) ==
                      Approx(direct).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("lebesgue measure norm has the closed form") {
    ModelParams m = model_2d();
    auto leb = measure_constant(1.0);
    auto r1 = kato_norm_measure(leb, 1.0, 1.0, m);
    CHECK(r1.value == Approx(5.0 * pi / 3.0).epsilon(1e-13));
    auto r2 = kato_norm_measure(leb, 0.25, 1.0, m);
    CHECK(r2.value == Approx(pi / 3.0).epsilon(1e-13));
    // Scaling in the density level.
    auto scaled = measure_constant(0.1);
    CHECK(kato_norm_measure(scaled, 1.0, 1.0, m).value == Approx(pi / 6.0).epsilon(1e-13));
    // Cross-check the closed form against direct radial quadrature in s and y,
    // with the analytic eta tail past R (eta ~ s rho^{-3} there, d=2 alpha=1).
    double R = 4e4, t = 0.25;
    auto shell = [&](double s) {
        auto K = [&](double rho) {
            return gamma_kernel(s, rho, 1.0, 2) + eta_kernel(s, rho, 2, 1.0);
        };
        return integrate_radial(K, 2, 0.0, 50.0, 1e-11) +
               integrate_radial(K, 2, 50.0, R, 1e-11);
    };
    double direct = integrate_ts(shell, 0.0, t, 1e-10) + pi * t * t / R;
    CHECK(direct == Approx(pi / 3.0).epsilon(1e-6));
}

TEST_CASE("zero specs give zero norms") {
    ModelParams m = model_2d();
    CHECK(kato_norm_measure(measure_zero(), 0.5, 1.0, m).value == 0.0);
    CHECK(kato_norm_jump(jump_zero(), 0.5, 1.0, m).value == 0.0);
    CHECK(combined_norm(measure_zero(), jump_zero(), 0.5, 1.0, m) == 0.0);
}

TEST_CASE("ball measure norm agrees with a direct oracle and peaks at the center") {
    ModelParams m = model_2d();
    auto ball = measure_uniform_ball(1.0, 1.0);
    auto res = kato_norm_measure(ball, 0.5, 1.0, m);
    // Direct oracle at the center: radial quadrature of the time-integrated kernel.
    auto K = [&](double rho) { return kernel_time_integral(0.5, rho, 1.0, 2, 1.0); };
    double at_center = integrate_radial(K, 2, 0.0, 1.0, 1e-11);
    CHECK(res.value == Approx(at_center).epsilon(1e-7));
    CHECK(res.sup_witness.norm() == Approx(0.0).margin(1e-12));
    CHECK(res.value < kato_norm_measure(measure_constant(1.0), 0.5, 1.0, m).value);
    CHECK(res.quad_error < 1e-6 * res.value);
}

TEST_CASE("norms are monotone in t and lambda and scale linearly") {
    ModelParams m = model_2d();
    auto bump = measure_gaussian_bump(0.7, 0.5);
    double n1 = kato_norm_measure(bump, 0.2, 1.0, m).value;
    double n2 = kato_norm_measure(bump, 0.6, 1.0, m).value;
    double n3 = kato_norm_measure(bump, 1.0, 1.0, m).value;
    CHECK(n1 < n2);
    CHECK(n2 < n3);
    double l_small = kato_norm_measure(bump, 0.6, 0.4, m).value;
    CHECK(n2 < l_small); // Gamma_lambda grows as lambda shrinks
    auto bump2 = measure_gaussian_bump(1.4, 0.5);
    CHECK(kato_norm_measure(bump2, 0.6, 1.0, m).value == Approx(2.0 * n2).epsilon(1e-8));
}

TEST_CASE("annulus jump norm reduces to the Lebesgue norm") {
    ModelParams m = model_2d();
    double theta = 0.3, delta = 0.1, range = 1.0;
    auto F = jump_annulus(theta, delta, range);
    auto res = kato_norm_jump(F, 1.0, 1.0, m);
    double inner = 2.0 * theta * sphere_area(2) *
                   (std::pow(delta, -1.0) - std::pow(range, -1.0)) / 1.0;
    CHECK(res.value == Approx(inner * 5.0 * pi / 3.0).epsilon(1e-9));
    // Direct w-space oracle for the inner constant at a fixed z, exercising the
    // declared F rather than its radial profile.
    Point z(0.3, -0.2);
    auto wrad = [&](double r) -> double {
        Point w = z;
        w[0] += r;
        double both = std::abs(F(z, w)) + std::abs(F(w, z));
        return both * std::pow(r, -3.0) * r; // d=2 shell: 2 pi r dr
    };
    double direct = 2.0 * pi * integrate_gk(wrad, delta, range, 1e-12);
    CHECK(direct == Approx(inner).epsilon(1e-10));
}

TEST_CASE("smooth annulus norm is below its sharp envelope") {
    ModelParams m = model_2d();
    auto sharp = jump_annulus(0.3, 0.1, 1.0);
    auto smooth = jump_smooth_annulus(0.3, 0.1, 1.0);
    double ns = kato_norm_jump(sharp, 0.5, 1.0, m).value;
    double nm = kato_norm_jump(smooth, 0.5, 1.0, m).value;
    CHECK(nm > 0.0);
    CHECK(nm < ns);
}

TEST_CASE("combined norm is additive") {
    ModelParams m = model_2d();
    auto mu = measure_constant(0.2);
    auto F = jump_annulus(0.3, 0.1, 1.0);
    double lhs = combined_norm(mu, F, 0.5, 1.0, m);
    double rhs = kato_norm_measure(mu, 0.5, 1.0, m).value + kato_norm_jump(F, 0.5, 1.0, m).value;
    CHECK(lhs == Approx(rhs).epsilon(1e-15));
}

TEST_CASE("exponential moment bound for derived jump functions") {
    // F1 = e^F - 1 obeys |F1| <= e^{||F||} |F|, hence the norm inequality.
    ModelParams m = model_2d();
    double theta = 0.3;
    auto F = jump_annulus(theta, 0.1, 1.0);
    JumpFunctionSpec F1 = F;
    F1.name = "annulus_exp";
    F1.F = [F](const Point& z, const Point& w) { return std::expm1(F(z, w)); };
    F1.radial_profile = [theta, F](double r) {
        return std::abs(std::expm1((*F.radial_profile)(r) > 0.0 ? theta : 0.0));
    };
    F1.sup_norm = std::expm1(theta);
    double nf = kato_norm_jump(F, 0.5, 1.0, m).value;
    double nf1 = kato_norm_jump(F1, 0.5, 1.0, m).value;
    CHECK(nf1 <= std::exp(theta) * nf * (1.0 + 1e-12));
    CHECK(nf1 >= nf); // e^x - 1 >= x for x >= 0
}

TEST_CASE("membership probe separates decaying from plateauing norms") {
    ModelParams m = model_2d();
    std::vector<double> ts;
    for (int k = 0; k <= 6; ++k) ts.push_back(std::pow(0.5, k));
    auto leb = kato_membership_probe(measure_constant(1.0), 1.0, ts, m);
    CHECK(leb.consistent);
    // N(t) = pi t + (2 pi / 3) t^{3/2}: log-log slope sits between 1 and 3/2.
    CHECK(leb.fitted_exponent == Approx(1.1017872116472154).epsilon(1e-10));
    CHECK(leb.fitted_exponent > 1.0);
    CHECK(leb.fitted_exponent < 1.5);
    for (size_t i = 0; i + 1 < leb.values.size(); ++i) CHECK(leb.values[i + 1] < leb.values[i]);
    CHECK(leb.values[0] == Approx(5.0 * pi / 3.0).epsilon(1e-12));

    auto zero = kato_membership_probe(measure_zero(), 1.0, ts, m);
    CHECK(zero.consistent);
    for (double v : zero.values) CHECK(v == 0.0);

    // |y|^{-2} in d=2 sits outside the class: values plateau instead of vanishing.
    auto sing = kato_membership_probe(measure_radial_power(2.0, 1.0), 1.0, ts, m);
    CHECK_FALSE(sing.consistent);
    CHECK(sing.fitted_exponent < kKatoDecayThreshold);
    CHECK(sing.values.back() > 0.2 * sing.values.front());
}

TEST_CASE("norms split exactly by kernel part") {
    ModelParams m = model_2d();
    auto leb = measure_constant(1.0);
    for (double t : {0.25, 1.0}) {
        for (double lambda : {0.15, 1.0}) {
            double g = kato_norm_measure(leb, t, lambda, m, KernelPart::gamma).value;
            double e = kato_norm_measure(leb, t, lambda, m, KernelPart::eta).value;
            double both = kato_norm_measure(leb, t, lambda, m, KernelPart::both).value;
            CHECK(g + e == Approx(both).epsilon(1e-13));
            CHECK(g == Approx(pi / lambda * t).epsilon(1e-13));
        }
    }
    auto ball = measure_uniform_ball(1.0, 2.0);
    double g = kato_norm_measure(ball, 0.5, 1.0, m, KernelPart::gamma).value;
    double e = kato_norm_measure(ball, 0.5, 1.0, m, KernelPart::eta).value;
    CHECK(g + e == Approx(kato_norm_measure(ball, 0.5, 1.0, m).value).epsilon(1e-11));
}

TEST_CASE("kato input validation") {
    ModelParams m = model_2d();
    CHECK_THROWS_AS(kato_norm_measure(measure_constant(1.0), 1.5, 1.0, m), config_error);
    CHECK_THROWS_AS(kato_norm_measure(measure_constant(1.0), 0.0, 1.0, m), config_error);
    auto nogap = jump_annulus(0.3, 0.1, 1.0);
    nogap.diagonal_gap = 0.0;
    CHECK_THROWS_AS(kato_norm_jump(nogap, 0.5, 1.0, m), numeric_error);
    std::vector<double> bad = {0.5, 0.5};
    CHECK_THROWS_AS(kato_membership_probe(measure_zero(), 1.0, bad, m), config_error);
}
