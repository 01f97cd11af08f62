#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "pbef/simulate.hpp"

using namespace pbef;

TEST_CASE("stationary draws match the invariant law") {
    auto [ou, th] = build_ou(1.5, 0.7, 0.9);
    oracle::Ou ref{1.5, 0.7, 0.9};
    RngStream rng(42, 0);
    const std::size_t R = 200000;
    std::vector<double> x(R);
    for (auto& v : x) v = draw_stationary(ou, th, rng);
    const double se_mean = std::sqrt(ref.sigma2() / R);
    CHECK(std::abs(oracle::sample_mean(x) - 0.7) < 4.0 * se_mean);
    CHECK(oracle::sample_var(x) == doctest::Approx(ref.sigma2()).epsilon(0.03));

    auto [cir, thc] = build_cir(2.0, 1.0, 0.5);
    // Gamma(alpha = 16, rate beta = 16): mean 1, var 1/16
    for (auto& v : x) v = draw_stationary(cir, thc, rng);
    CHECK(std::abs(oracle::sample_mean(x) - 1.0) < 4.0 * std::sqrt(0.0625 / R));
    CHECK(oracle::sample_var(x) == doctest::Approx(0.0625).epsilon(0.03));
}

TEST_CASE("inverse-CDF fallback sampler reproduces the OU invariant law") {
    auto [ou, th] = build_ou(1.5, 0.7, 0.9);
    DiffusionModel no_sampler = ou;
    no_sampler.stationary_sampler = nullptr;
    oracle::Ou ref{1.5, 0.7, 0.9};
    RngStream rng(7, 3);
    InverseCdfSampler sampler(no_sampler, th);
    const std::size_t R = 100000;
    std::vector<double> x(R);
    for (auto& v : x) v = sampler.draw(rng);
    CHECK(std::abs(oracle::sample_mean(x) - 0.7) < 4.0 * std::sqrt(ref.sigma2() / R));
    CHECK(oracle::sample_var(x) == doctest::Approx(ref.sigma2()).epsilon(0.05));
}

TEST_CASE("paths are reproducible and streams are independent") {
    auto [ou, th] = build_ou(1.0, 0.0, 1.0);
    SamplingScheme scheme{50, 0.1, 1, 1234, 9};
    const auto a = simulate_path(ou, th, scheme);
    const auto b = simulate_path(ou, th, scheme);
    CHECK(a.values == b.values);  // bit identical

    scheme.stream_id = 10;
    const auto c = simulate_path(ou, th, scheme);
    CHECK(a.values != c.values);

    const std::size_t R = 20000;
    std::vector<double> x0(R), x1(R);
    for (std::size_t r = 0; r < R; ++r) {
        RngStream ra(555, r), rb(555, r + R);
        x0[r] = draw_stationary(ou, th, ra);
        x1[r] = draw_stationary(ou, th, rb);
    }
    const double corr = oracle::sample_cov(x0, x1) /
                        std::sqrt(oracle::sample_var(x0) * oracle::sample_var(x1));
    CHECK(std::abs(corr) < 3.0 / std::sqrt(static_cast<double>(R)));
}

TEST_CASE("empty grid returns only the stationary draw") {
    auto [ou, th] = build_ou(1.0, 0.0, 1.0);
    SamplingScheme scheme{0, 0.1, 1, 77, 0};
    const auto path = simulate_path(ou, th, scheme);
    CHECK(path.values.size() == 1);
    CHECK(path.method == SamplePath::Method::exact);
}

TEST_CASE("ensemble conditional mean follows the exact OU transition") {
    auto [ou, th] = build_ou(1.2, 0.5, 0.8);
    oracle::Ou ref{1.2, 0.5, 0.8};
    RngStream rng(2024, 0);
    const double x0 = 1.4, t = 0.25;
    const auto est = conditional_expectation_mc(ou, th, SmoothFunction::identity(), x0, t, 50000, rng);
    CHECK(std::abs(est.mean - ref.cond_mean(x0, t)) < 3.0 * est.stderr_);

    // long horizon: mixing towards the invariant mean
    const auto far = conditional_expectation_mc(ou, th, SmoothFunction::identity(), x0, 25.0, 20000, rng);
    CHECK(std::abs(far.mean - 0.5) < 3.0 * far.stderr_ + 1e-9);

    // constants are fixed points of P_t
    const auto cst = conditional_expectation_mc(ou, th, SmoothFunction::constant(3.25), x0, 0.5, 100, rng);
    CHECK(cst.mean == doctest::Approx(3.25));
    CHECK(cst.stderr_ == doctest::Approx(0.0));
}

TEST_CASE("ensemble autocovariance at lag delta matches the OU law") {
    auto [ou, th] = build_ou(1.3, 0.4, 0.8);
    oracle::Ou ref{1.3, 0.4, 0.8};
    const double delta = 0.3;
    const std::size_t R = 150000;
    std::vector<double> x0(R), x1(R);
    for (std::size_t r = 0; r < R; ++r) {
        SamplingScheme scheme{1, delta, 1, 909, r};
        const auto p = simulate_path(ou, th, scheme);
        x0[r] = p.values[0];
        x1[r] = p.values[1];
    }
    const double want = ref.autocov(delta);
    const double got = oracle::sample_cov(x0, x1);
    // stderr of the covariance of a bivariate Gaussian sample
    const double rho = std::exp(-1.3 * delta);
    const double se = ref.sigma2() * std::sqrt((1.0 + rho * rho) / static_cast<double>(R));
    CHECK(std::abs(got - want) < 4.0 * se);
    CHECK(ou.closed_form->autocov_identity(delta, th) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("increment moments scale like delta^(k/2)") {
    auto [ou, th] = build_ou(1.0, 0.3, 1.0);
    const std::vector<double> deltas{0.1, 0.05, 0.025, 0.0125};
    std::vector<double> logd, logm;
    const std::size_t R = 50000;
    for (double d : deltas) {
        double acc = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            SamplingScheme scheme{1, d, 1, 31337, r};
            const auto p = simulate_path(ou, th, scheme);
            acc += (p.values[1] - p.values[0]) * (p.values[1] - p.values[0]);
        }
        logd.push_back(std::log(d));
        logm.push_back(std::log(acc / static_cast<double>(R)));
    }
    const double slope = oracle::sample_cov(logd, logm) / oracle::sample_var(logd);
    CHECK(slope >= 1.0 - 0.15);
}

TEST_CASE("euler weak error shrinks as substeps double") {
    auto built = build_ou(1.0, 0.0, 1.0);
    DiffusionModel euler_ou = built.model;
    euler_ou.exact_transition.reset();  // force the Euler path
    const auto& th = built.theta;
    const double delta = 0.5;
    const double exact_m2 = oracle::Ou{1.0, 0.0, 1.0}.sigma2();  // stationary second moment

    const std::size_t R = 400000;
    std::vector<double> err;
    for (int m : {1, 2, 4}) {
        double acc = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            SamplingScheme scheme{1, delta, m, static_cast<std::uint64_t>(4242 + m), r};
            const auto p = simulate_path(euler_ou, th, scheme);
            acc += p.values[1] * p.values[1];
        }
        err.push_back(std::abs(acc / static_cast<double>(R) - exact_m2));
    }
    // analytic euler bias at these substeps: 0.125, 0.049, 0.022; MC noise ~ 1.6e-3
    CHECK(err[0] > err[1] + 0.02);
    CHECK(err[1] > err[2] + 0.01);
}

TEST_CASE("cir paths stay in the state space under full truncation") {
    auto [cir, th] = build_cir(2.0, 1.0, 0.5);
    SamplingScheme scheme{2000, 0.05, 8, 99, 0};
    const auto p = simulate_path(cir, th, scheme);
    CHECK(p.method == SamplePath::Method::euler);
    for (double v : p.values) CHECK(v > 0.0);
}

TEST_CASE("path CSV round trip") {
    auto [ou, th] = build_ou(1.0, 0.0, 1.0);
    SamplingScheme scheme{25, 0.07, 1, 5150, 2};
    const auto p = simulate_path(ou, th, scheme);
    std::stringstream buf;
    write_path_csv(p, buf);
    const auto q = read_path_csv(buf);
    REQUIRE(q.values.size() == p.values.size());
    for (std::size_t i = 0; i < p.values.size(); ++i) CHECK(q.values[i] == p.values[i]);
    CHECK(q.scheme.delta == doctest::Approx(0.07).epsilon(1e-12));

    std::stringstream bad("not,a,header\n");
    CHECK_THROWS_AS(read_path_csv(bad), ConfigError);
}

TEST_CASE("burn-in start converges to the stationary law") {
    auto [ou, th] = build_ou(1.5, 0.7, 0.9);
    oracle::Ou ref{1.5, 0.7, 0.9};
    const std::size_t R = 40000;
    std::vector<double> ends(R);
    for (std::size_t r = 0; r < R; ++r) {
        SamplingScheme scheme{1, 0.05, 1, 808, r};
        // start far from the mean; ~13 relaxation times of burn-in
        const auto p = simulate_path_burnin(ou, th, scheme, 6.0, 9.0);
        ends[r] = p.values[0];
    }
    CHECK(std::abs(oracle::sample_mean(ends) - 0.7) < 4.0 * std::sqrt(ref.sigma2() / R) + 1e-4);
    CHECK(oracle::sample_var(ends) == doctest::Approx(ref.sigma2()).epsilon(0.05));

    CHECK_THROWS_AS(simulate_path_burnin(ou, th, SamplingScheme{1, 0.05, 1, 0, 0}, 6.0, -1.0),
                    DomainError);
}

TEST_CASE("paths that leave the state space raise with the failing index") {
    // strong constant downward drift on (0, inf) exits quickly
    auto base = build_cir(2.0, 1.0, 0.5);
    DiffusionModel runaway = base.model;
    runaway.drift = [](double, const ParamVector&) { return -50.0; };
    runaway.drift_poly = nullptr;
    runaway.stationary_sampler = [](RngStream&, const ParamVector&) { return 0.5; };
    SamplingScheme scheme{100, 0.1, 1, 13, 0};
    CHECK_THROWS_AS(simulate_path(runaway, base.theta, scheme), SimulationError);
    try {
        simulate_path(runaway, base.theta, scheme);
    } catch (const SimulationError& e) {
        CHECK(e.failing_index >= 1);
        CHECK(e.failing_index <= 2);
    }
}

TEST_CASE("scheme validation and regime diagnostics") {
    SamplingScheme s{100, 0.01, 1, 0, 0};
    CHECK(s.n_delta() == doctest::Approx(1.0));
    CHECK(s.n_delta3() == doctest::Approx(1e-4));
    s.delta = -1.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.delta = 0.1;
    s.substeps = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}
