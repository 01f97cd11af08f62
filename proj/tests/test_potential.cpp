#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "pbef/potential.hpp"
#include "pbef/simulate.hpp"

using namespace pbef;

namespace {

PredictorSpec identity_spec(int q) {
    PredictorSpec s;
    s.f = SmoothFunction::identity();
    s.q = q;
    s.label = "x";
    return s;
}

PotentialMCConfig grid_cfg(int k, double t_max, double substeps = 32.0, std::uint64_t seed = 1111) {
    PotentialMCConfig cfg;
    cfg.estimator = PotentialEstimator::grid_quadrature;
    cfg.K = k;
    cfg.t_max = t_max;
    cfg.substeps_per_unit = substeps;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("closed-form OU potential solves the Poisson equation") {
    auto [ou, th] = build_ou(2.0, 1.0, 0.7);
    const SmoothFunction f_star = SmoothFunction::polynomial({-1.0, 1.0});  // x - eta
    const auto u = potential_closed_form_ou(ou, th, f_star);
    CHECK(u.eval(3.0) == doctest::Approx(1.0).epsilon(1e-14));  // (x - eta)/kappa
    CHECK(u.d1(-2.0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(u.d2(0.3) == doctest::Approx(0.0));

    // L(U f*) + f* = 0 pointwise
    for (int i = 0; i <= 100; ++i) {
        const double x = -3.0 + 6.0 * i / 100.0;
        const double resid = generator_apply(ou, th, u, x) + f_star.eval(x);
        CHECK(std::abs(resid) < 1e-12);
    }

    // independent numeric potential oracle agrees
    oracle::Ou ref{2.0, 1.0, 0.7};
    const double u_num = ref.potential([](double y) { return y - 1.0; }, 1.8);
    CHECK(u.eval(1.8) == doctest::Approx(u_num).epsilon(1e-6));

    CHECK_THROWS_AS(potential_closed_form_ou(ou, th, SmoothFunction::identity()), NotAvailableError);
    CHECK_THROWS_AS(potential_closed_form_ou(ou, th, SmoothFunction::polynomial({0.0, 0.0, 1.0})),
                    NotAvailableError);
    auto [cir, thc] = build_cir(2.0, 1.0, 0.5);
    CHECK_THROWS_AS(potential_closed_form_ou(cir, thc, f_star), NotAvailableError);
}

TEST_CASE("potential norm obeys the spectral-gap bound (equality for linear f)") {
    auto [ou, th] = build_ou(1.6, -0.2, 0.9);
    const SmoothFunction f_star = SmoothFunction::polynomial({0.2, 1.0});
    const auto u = potential_closed_form_ou(ou, th, f_star);
    const double lhs = invariant_l2_norm(ou, th, u, MomentMode::quadrature_only);
    const double rhs = invariant_l2_norm(ou, th, f_star, MomentMode::quadrature_only) / 1.6;
    CHECK(lhs <= rhs * (1.0 + 1e-9));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
}

TEST_CASE("transition operator decays at the spectral gap rate") {
    auto [ou, th] = build_ou(1.3, 0.4, 0.8);
    oracle::Ou ref{1.3, 0.4, 0.8};
    const double norm_f = std::sqrt(ref.sigma2());
    const std::size_t R = 150000;
    double prev = 1e9;
    for (double t : {0.25, 0.5, 1.0}) {
        // ||P_t f||_2^2 = E[f(X'_t) f(X''_t)] with two conditionally
        // independent transitions from a shared stationary start
        RngStream rng(606, static_cast<std::uint64_t>(t * 1000));
        std::vector<double> prod(R);
        for (std::size_t r = 0; r < R; ++r) {
            const double x0 = draw_stationary(ou, th, rng);
            const double xa = transition_step(ou, th, x0, t, 1, rng);
            const double xb = transition_step(ou, th, x0, t, 1, rng);
            prod[r] = (xa - 0.4) * (xb - 0.4);
        }
        const double est = oracle::sample_mean(prod);
        const double se = std::sqrt(oracle::sample_var(prod) / static_cast<double>(R));
        const double bound = std::exp(-1.3 * t) * norm_f;
        CHECK(est <= bound * bound + 3.0 * se);
        CHECK(est < prev + 3.0 * se);
        prev = est;
    }
}

TEST_CASE("pairing estimates mu0(f* U0(f*)) for the OU example") {
    auto [ou, th] = build_ou(1.0, 0.0, 1.0);
    const SmoothFunction f_star = SmoothFunction::identity();  // centered at eta = 0

    SUBCASE("grid quadrature") {
        const auto est = potential_pairing_mc(ou, th, f_star, f_star, grid_cfg(40000, 12.0, 20.0));
        CHECK(est.stderr_reliable);
        CHECK(est.centering_shift == doctest::Approx(0.0));
        CHECK(std::abs(est.value - 0.5) < 4.0 * est.stderr_);
        CHECK(est.bias_bound.has_value());
        CHECK(*est.bias_bound < 1e-4);
    }

    SUBCASE("exponential-time sampling") {
        PotentialMCConfig cfg = grid_cfg(40000, 12.0, 20.0);
        cfg.estimator = PotentialEstimator::exp_time;
        cfg.gamma = 1.0 / 12.0;
        const auto est = potential_pairing_mc(ou, th, f_star, f_star, cfg);
        CHECK(!est.stderr_reliable);
        CHECK(std::abs(est.value - 0.5) < 0.1);
    }

    SUBCASE("the two estimators agree within combined error") {
        const auto a = potential_pairing_mc(ou, th, f_star, f_star, grid_cfg(20000, 12.0, 20.0));
        PotentialMCConfig cfg = grid_cfg(20000, 12.0, 20.0, 2222);
        cfg.estimator = PotentialEstimator::exp_time;
        cfg.gamma = 1.0 / 12.0;
        const auto b = potential_pairing_mc(ou, th, f_star, f_star, cfg);
        const double se = std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_);
        CHECK(std::abs(a.value - b.value) < 3.0 * se);
    }
}

TEST_CASE("grid pairing reproduces the truncated autocovariance integral") {
    auto [ou, th] = build_ou(1.4, 0.6, 0.9);
    oracle::Ou ref{1.4, 0.6, 0.9};
    const double t_max = 4.0;  // deliberately short; compare against the truncated integral
    const SmoothFunction g = SmoothFunction::polynomial({-0.6, 1.0});
    const auto est = potential_pairing_mc(ou, th, g, g, grid_cfg(30000, t_max, 64.0));
    const double want = ref.sigma2() / 1.4 * (1.0 - std::exp(-1.4 * t_max));
    CHECK(std::abs(est.value - want) < 4.0 * est.stderr_);
}

TEST_CASE("grid pairing on the CIR family (Euler path)") {
    // affine conditional mean: Cov(X_0, X_t) = Var e^{-kappa t}, so the
    // truncated pairing has the same closed form as for OU
    auto [cir, th] = build_cir(2.0, 1.0, 0.5);
    const double var = 0.0625, t_max = 4.0;
    const SmoothFunction g = SmoothFunction::polynomial({-1.0, 1.0});
    PotentialMCConfig cfg = grid_cfg(20000, t_max, 256.0, 4242);
    const auto est = potential_pairing_mc(cir, th, g, g, cfg);
    const double want = var / 2.0 * (1.0 - std::exp(-2.0 * t_max));
    // 4 sigma plus a small Euler discretization allowance
    CHECK(std::abs(est.value - want) < 4.0 * est.stderr_ + 0.01 * want);
}

TEST_CASE("pairing edge cases") {
    auto [ou, th] = build_ou(1.0, 0.0, 1.0);
    const SmoothFunction zero = SmoothFunction::constant(0.0);
    const auto est = potential_pairing_mc(ou, th, zero, SmoothFunction::identity(),
                                          grid_cfg(200, 5.0));
    CHECK(est.value == doctest::Approx(0.0));
    CHECK(est.stderr_ == doctest::Approx(0.0));

    const auto tiny = potential_pairing_mc(ou, th, SmoothFunction::identity(),
                                           SmoothFunction::identity(), grid_cfg(5, 5.0));
    CHECK(tiny.diagnostics_only);
}

TEST_CASE("pairing scales exactly with a power-of-two factor under shared seeds") {
    auto [ou, th] = build_ou(1.0, 0.0, 1.0);
    const SmoothFunction f = SmoothFunction::identity();
    const auto base = potential_pairing_mc(ou, th, f, f, grid_cfg(4000, 8.0));
    const auto doubled = potential_pairing_mc(ou, th, f.scaled(2.0), f, grid_cfg(4000, 8.0));
    CHECK(doubled.value == 2.0 * base.value);
}

TEST_CASE("auto-centering of the second pairing function") {
    auto [ou, th] = build_ou(2.0, 1.0, 1.0);
    const SmoothFunction f = SmoothFunction::identity();  // mu = 1: not centered
    const auto est = potential_pairing_mc(ou, th, f, f, grid_cfg(30000, 6.0, 64.0));
    CHECK(est.centering_shift == doctest::Approx(1.0).epsilon(1e-10));
    // g1 stays un-centered, but mu(x U(y)) = mu(y U(y)) = sigma^2/kappa
    const double want = 0.25 / 2.0;
    CHECK(std::abs(est.value - want) < 4.0 * est.stderr_);
}

TEST_CASE("dx potential term via integration by parts") {
    auto [ou, th] = build_ou(2.0, 1.0, 1.0);
    // f1 = f f' b^2 = x for f(x) = x, xi = 1; g2 = f1-star direction x - eta0
    const SmoothFunction f1 = SmoothFunction::identity();
    const SmoothFunction g2 = SmoothFunction::polynomial({-1.0, 1.0});
    const auto est = dx_potential_term(ou, th, f1, g2, grid_cfg(30000, 6.0, 64.0));
    // mu0(f1 dx U0(g2)) = mu0(f1)/kappa = eta0/kappa = 0.5
    CHECK(std::abs(est.value - 0.5) < 4.0 * est.stderr_);

    const auto zero = dx_potential_term(ou, th, SmoothFunction::constant(0.0), g2, grid_cfg(500, 4.0));
    CHECK(zero.value == doctest::Approx(0.0));

    // Gaussian log-density slope used in h: (log nu)'(x) = -(x - eta)/sigma^2
    for (double x : {0.2, 1.0, 1.7})
        CHECK(ou.invariant_logdensity_dx(x, th) == doctest::Approx(-(x - 1.0) / 0.25).epsilon(1e-12));

    // a pairing weight that does not vanish at the density tails
    CHECK_THROWS_AS(dx_potential_term(ou, th, SmoothFunction::constant(1e6), g2, grid_cfg(100, 4.0)),
                    BoundaryTermError);
}

TEST_CASE("avar_simple for the OU mean attains the spectral-gap bound") {
    auto built = build_ou(2.0, 1.0, 1.0, {"eta"});
    const auto spec = identity_spec(0);

    const auto closed =
        avar_simple(built.model, built.theta, spec, grid_cfg(100, 6.0), AvarMethod::closed_form);
    CHECK(closed.scalar == doctest::Approx(0.25).epsilon(1e-10));  // (xi/kappa)^2
    REQUIRE(closed.bound.has_value());
    CHECK(*closed.bound == doctest::Approx(closed.scalar).epsilon(1e-10));

    const auto mc = avar_simple(built.model, built.theta, spec, grid_cfg(30000, 6.0, 64.0));
    CHECK(mc.scalar == doctest::Approx(0.25).epsilon(0.05));

    // rescaling f by 2 leaves the ratio unchanged (closed form is exact)
    PredictorSpec scaled;
    scaled.f = SmoothFunction::polynomial({0.0, 2.0});
    scaled.q = 0;
    const auto closed2 =
        avar_simple(built.model, built.theta, scaled, grid_cfg(100, 6.0), AvarMethod::closed_form);
    CHECK(closed2.scalar == doctest::Approx(closed.scalar).epsilon(1e-12));
}

TEST_CASE("avar_simple rejects flat sensitivities") {
    auto built = build_ou(2.0, 1.0, 1.0, {"xi"});  // mu_theta(x) does not depend on xi
    CHECK_THROWS_AS(avar_simple(built.model, built.theta, identity_spec(0), grid_cfg(100, 6.0)),
                    IdentifiabilityError);
}

TEST_CASE("f2* is centered analytically") {
    // mu0(f [L0 f + K_f (mu0(f) - f)]) = 0 for any predictor
    for (const auto& coeffs :
         {std::vector<double>{0.0, 1.0}, std::vector<double>{0.0, 0.0, 1.0},
          std::vector<double>{0.3, -1.0, 0.0, 0.2}}) {
        auto [ou, th] = build_ou(1.7, 0.8, 1.1);
        const auto f = SmoothFunction::polynomial(coeffs);
        const double kf = kf_coefficient(ou, th, f);
        const double mu = invariant_moment(ou, th, f).value;
        const auto lf = generator_function(ou, th, f);
        const auto f1s = f.scaled(-kf).shifted(kf * mu);
        std::vector<double> sum(std::max(lf.poly.size(), f1s.poly.size()), 0.0);
        for (std::size_t k = 0; k < lf.poly.size(); ++k) sum[k] += lf.poly[k];
        for (std::size_t k = 0; k < f1s.poly.size(); ++k) sum[k] += f1s.poly[k];
        const auto f2 = SmoothFunction::polynomial(poly_multiply(f.poly, sum));
        CHECK(std::abs(invariant_moment(ou, th, f2).value) < 1e-10);
    }
}

TEST_CASE("avar_onelag assembles the OU sandwich") {
    auto built = build_ou(2.0, 1.0, 1.0, {"eta", "kappa"});
    const auto spec = identity_spec(1);
    // the sandwich amplifies component noise ~16x; short horizon + large K
    const auto report =
        avar_onelag(built.model, built.theta, spec, grid_cfg(100000, 3.0, 40.0, 3434));

    REQUIRE(report.dim == 2);
    REQUIRE(report.w_matrix.has_value());
    CHECK((*report.w_matrix)(0, 0) == doctest::Approx(-2.0).epsilon(1e-6));

    // derived closed form: diag(xi^2/kappa0^2, 2 kappa0)
    CHECK(report.matrix(0, 0) == doctest::Approx(0.25).epsilon(0.10));
    CHECK(report.matrix(1, 1) == doctest::Approx(4.0).epsilon(0.15));
    CHECK(std::abs(report.matrix(0, 1)) < 0.15 * std::sqrt(0.25 * 4.0));

    // V components: f2* vanishes identically for the linear OU predictor
    double v11 = 0.0, v12_dx = 0.0, ffb = 0.0;
    for (const auto& [name, est] : report.components) {
        if (name == "V11_pair_f1_f1") v11 = est.value;
        if (name == "V12_dx_ffb2_f1") v12_dx = est.value;
        if (name == "mu0_ffb_squared") ffb = est.value;
        if (name == "V12_pair_f1_f2" || name == "V12_pair_f2_f1" || name == "V22_pair_f2_f2")
            CHECK(est.value == doctest::Approx(0.0));
    }
    CHECK(v11 == doctest::Approx(0.5).epsilon(0.08));       // mu0(f1* U0 f1*) = xi^2/2
    CHECK(v12_dx == doctest::Approx(1.0).epsilon(0.08));    // xi^2 eta0
    CHECK(ffb == doctest::Approx(1.25).epsilon(1e-10));     // xi^2 (eta0^2 + sigma0^2)
}

TEST_CASE("avar_onelag cross-term symmetry for a quadratic predictor") {
    auto built = build_ou(1.5, 0.5, 0.8, {"eta", "kappa"});
    PredictorSpec spec;
    spec.f = SmoothFunction::polynomial({0.0, 0.0, 1.0});
    spec.q = 1;
    const auto report =
        avar_onelag(built.model, built.theta, spec, grid_cfg(60000, 5.0, 40.0, 777));

    double pa = 0.0, pb = 0.0, se_a = 0.0, se_b = 0.0;
    for (const auto& [name, est] : report.components) {
        if (name == "V12_pair_f1_f2") { pa = est.value; se_a = est.stderr_; }
        if (name == "V12_pair_f2_f1") { pb = est.value; se_b = est.stderr_; }
    }
    CHECK(pa != 0.0);
    CHECK(pb != 0.0);
    // reversibility: mu0(f1* U(f2*)) = mu0(f2* U(f1*))
    CHECK(std::abs(pa - pb) < 3.0 * std::sqrt(se_a * se_a + se_b * se_b));

    // PSD sandwich
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(report.matrix);
    CHECK(eig.eigenvalues().minCoeff() > -1e-10 * report.matrix.trace());
}

TEST_CASE("clt_variance equates its two representations") {
    auto [ou, th] = build_ou(1.0, 0.0, 1.0);
    const SmoothFunction g = SmoothFunction::identity();
    const auto res = clt_variance(ou, th, g, grid_cfg(30000, 12.0, 32.0));
    REQUIRE(res.quadratic_form.has_value());
    CHECK(*res.quadratic_form == doctest::Approx(1.0).epsilon(1e-12));  // (xi/kappa)^2
    CHECK(std::abs(res.pairing_form.value - *res.quadratic_form) < 3.0 * res.pairing_form.stderr_);
    CHECK(res.pairing_form.value > 0.0);

    const auto zero = clt_variance(ou, th, SmoothFunction::constant(0.0), grid_cfg(100, 4.0));
    CHECK(zero.pairing_form.value == doctest::Approx(0.0));
    CHECK(!zero.quadratic_form.has_value());
}

TEST_CASE("default gamma rules") {
    auto [ou, th] = build_ou(2.1, 0.0, 1.0);
    CHECK(default_gamma(ou, th, SmoothFunction::identity()) == doctest::Approx(1.05));

    DiffusionModel blind = ou;
    blind.closed_form.reset();
    const double g = default_gamma(blind, th, SmoothFunction::identity());
    // pilot-path autocorrelation time of OU(kappa = 2.1) is ~1/2.1
    CHECK(g > 0.4);
    CHECK(g < 8.0);
}

TEST_CASE("avar report serialization") {
    auto built = build_ou(2.0, 1.0, 1.0, {"eta"});
    const auto report = avar_simple(built.model, built.theta, identity_spec(0),
                                    grid_cfg(2000, 6.0), AvarMethod::monte_carlo);
    std::ostringstream csv;
    write_components_csv(report, csv);
    CHECK(csv.str().rfind("component,value,stderr,method\n", 0) == 0);
    CHECK(csv.str().find("mu0_fstar_U_fstar") != std::string::npos);
    const std::string json = report_to_json(report);
    CHECK(json.find("\"bound\"") != std::string::npos);
    CHECK(json.find("\"components\"") != std::string::npos);
}
