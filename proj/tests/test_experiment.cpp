#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pbef/experiment.hpp"

using namespace pbef;

namespace {

ExperimentConfig base_config() {
    ExperimentConfig cfg;
    cfg.model.family = "ou";
    cfg.model.params = {{"kappa", 2.0}, {"eta", 1.0}, {"xi", 1.0}};
    cfg.model.free = {"eta"};
    cfg.predictor_poly = {0.0, 1.0};
    cfg.predictor_q = 0;
    cfg.kind = EstimatorKind::simple;
    cfg.schedule = {{2000, 0.02}};
    cfg.replications = 50;
    cfg.seed = 99;
    cfg.avar.K = 4000;
    cfg.avar.t_max = 4.0;
    cfg.avar.gamma = 1.0;
    cfg.avar.substeps_per_unit = 24.0;
    cfg.theta_init = {0.0};
    cfg.theta_star = {0.0};
    return cfg;
}

} // namespace

TEST_CASE("sample statistics helpers") {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const auto s = sample_stats(v);
    CHECK(s.mean == doctest::Approx(2.5));
    CHECK(s.variance == doctest::Approx(5.0 / 3.0));
    CHECK(s.skewness == doctest::Approx(0.0));

    // KS distance of a perfectly centered two-point sample vs N(0,1)
    const double d = ks_distance_normal({-0.5, 0.5}, 1.0);
    CHECK(d > 0.0);
    CHECK(d < 0.5);
    CHECK(ks_distance_normal({}, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("lln check rows") {
    ExperimentConfig cfg = base_config();
    cfg.replications = 150;
    cfg.schedule = {{5000, 0.01}};

    SUBCASE("constant predictor is exact") {
        cfg.predictor_poly = {1.0};
        const auto rows = run_lln_check(cfg);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].pass);
        CHECK(rows[0].mean == doctest::Approx(1.0));
        CHECK(rows[0].stderr_ == doctest::Approx(0.0));
    }

    SUBCASE("identity predictor concentrates at the invariant mean") {
        const auto rows = run_lln_check(cfg);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].target == doctest::Approx(1.0));
        CHECK(rows[0].pass);
        CHECK(std::abs(rows[0].mean - 1.0) <= 4.0 * rows[0].stderr_ + 1e-14);
    }

    SUBCASE("second moment of the standardized OU") {
        cfg.model.params = {{"kappa", 1.0}, {"eta", 0.0}, {"xi", std::sqrt(2.0)}};
        cfg.predictor_poly = {0.0, 0.0, 1.0};
        const auto rows = run_lln_check(cfg);
        CHECK(rows[0].target == doctest::Approx(1.0));
        CHECK(rows[0].pass);
    }
}

TEST_CASE("clt check rows") {
    ExperimentConfig cfg = base_config();
    cfg.model.params = {{"kappa", 1.0}, {"eta", 0.0}, {"xi", 1.0}};
    cfg.avar.t_max = 12.0;
    cfg.avar.K = 20000;
    cfg.avar.gamma = 0.5;
    cfg.replications = 600;
    cfg.schedule = {{20000, 0.015}, {100, 0.5}};  // second entry violates n delta^3 < 1

    const auto rows = run_clt_check(cfg, SmoothFunction::identity());
    REQUIRE(rows.size() == 2);
    CHECK(!rows[0].regime_flag);
    CHECK(rows[0].predicted_variance == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(rows[0].pass);  // empirical variance within 15% of prediction
    CHECK(std::abs(rows[0].emp_variance - 1.0) < 0.15);
    CHECK(rows[0].ks_distance < 0.1);
    CHECK(std::abs(rows[0].skewness) < 0.4);

    CHECK(rows[1].regime_flag);
    CHECK(rows[1].pass);  // no assertion outside the regime

    // g = 0: every standardized value vanishes
    ExperimentConfig zero_cfg = cfg;
    zero_cfg.schedule = {{100, 0.05}};
    zero_cfg.replications = 10;
    const auto zrows = run_clt_check(zero_cfg, SmoothFunction::constant(0.0));
    CHECK(zrows[0].emp_variance == doctest::Approx(0.0));
    CHECK(zrows[0].mean == doctest::Approx(0.0));
}

TEST_CASE("estimation study: smoke run with a single replication") {
    ExperimentConfig cfg = base_config();
    cfg.replications = 1;
    const auto report = run_estimation_study(cfg);
    REQUIRE(report.replications.size() == 1);
    REQUIRE(report.summaries.size() == 1);
    CHECK(report.replications[0].converged);
    CHECK(report.summaries[0].n_converged == 1);
    CHECK(report.summaries[0].n_total == 1);
}

TEST_CASE("estimation study: summaries, coverage and fallback trend") {
    ExperimentConfig cfg = base_config();
    cfg.model.bounds = {{"eta", Interval{0.9, 1.1}}};  // tight: early entries overflow the range
    cfg.theta_init = {1.0};
    cfg.theta_star = {1.0};
    cfg.replications = 300;
    cfg.schedule = {{100, 0.05}, {400, 0.05}, {1600, 0.05}};

    const auto report = run_estimation_study(cfg);
    REQUIRE(report.summaries.size() == 3);
    CHECK(report.replications.size() == 900);

    // fallback rate decreases along the schedule as n delta grows
    const auto& s = report.summaries;
    CHECK(s[0].fallback_rate > s[1].fallback_rate);
    CHECK(s[1].fallback_rate > s[2].fallback_rate);
    CHECK(s[2].fallback_rate < 0.2);

    // |bias| non-increasing beyond Monte Carlo noise
    const double se0 = std::sqrt(s[0].emp_cov(0, 0) / s[0].n_delta / s[0].n_converged);
    const double se2 = std::sqrt(s[2].emp_cov(0, 0) / s[2].n_delta / s[2].n_converged);
    CHECK(std::abs(s[2].mean_bias[0]) <= std::abs(s[0].mean_bias[0]) + 3.0 * (se0 + se2));

    // oracle coverage should be near nominal on the last (least truncated) entry
    CHECK(s[2].coverage_oracle[0] > 0.85);
    CHECK(s[2].coverage_oracle[0] <= 1.0);
    CHECK(s[2].predicted_avar(0, 0) == doctest::Approx(0.25).epsilon(0.05));
    // empirical covariance is PSD (scalar case: non-negative)
    CHECK(s[2].emp_cov(0, 0) >= 0.0);
}

TEST_CASE("study reports are deterministic and round-trip through CSV") {
    ExperimentConfig cfg = base_config();
    cfg.replications = 40;
    cfg.jobs = 2;
    const auto a = run_estimation_study(cfg);
    cfg.jobs = 1;
    const auto b = run_estimation_study(cfg);

    std::ostringstream csv_a, csv_b;
    write_replications_csv(a, csv_a);
    write_replications_csv(b, csv_b);
    CHECK(csv_a.str() == csv_b.str());  // byte identical across thread counts

    std::ostringstream sum_a, sum_b;
    write_summary_csv(a, sum_a);
    write_summary_csv(b, sum_b);
    CHECK(sum_a.str() == sum_b.str());

    std::istringstream back(csv_a.str());
    const auto reps = read_replications_csv(back);
    REQUIRE(reps.size() == a.replications.size());
    for (std::size_t i = 0; i < reps.size(); ++i) {
        CHECK(reps[i].schedule_idx == a.replications[i].schedule_idx);
        CHECK(reps[i].rep_idx == a.replications[i].rep_idx);
        CHECK(reps[i].converged == a.replications[i].converged);
        CHECK(reps[i].fallback_used == a.replications[i].fallback_used);
        REQUIRE(reps[i].theta_hat.size() == a.replications[i].theta_hat.size());
        for (std::size_t j = 0; j < reps[i].theta_hat.size(); ++j) {
            CHECK(reps[i].theta_hat[j] == a.replications[i].theta_hat[j]);
            CHECK(reps[i].std_error[j] == a.replications[i].std_error[j]);
        }
    }
}

TEST_CASE("empty study emits header-only tables") {
    StudyReport empty;
    empty.config = base_config();
    empty.theta0 = {1.0};
    std::ostringstream reps, sums;
    write_replications_csv(empty, reps);
    write_summary_csv(empty, sums);
    CHECK(reps.str() ==
          "schedule_idx,rep_idx,n,delta,converged,fallback_used,theta_hat_0,std_error_0\n");
    CHECK(sums.str().find('\n') == sums.str().size() - 1);  // single header line
}

TEST_CASE("emit_report writes the three artifacts") {
    ExperimentConfig cfg = base_config();
    cfg.replications = 5;
    const auto report = run_estimation_study(cfg);
    const std::string dir = "exp_out_test";
    const auto files = emit_report(report, "csv", dir);
    REQUIRE(files.size() == 3);
    for (const auto& f : files) CHECK(std::filesystem::exists(f));
    // summary row count equals schedule length
    std::ifstream sum(std::filesystem::path(dir) / "summary.csv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(sum, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 1 + cfg.schedule.size());
    std::filesystem::remove_all(dir);
}

TEST_CASE("config parsing and validation") {
    const std::string text = R"({
      "model": {"family": "ou", "params": {"kappa": 2.0, "eta": 1.0, "xi": 1.0},
                "free": ["eta", "kappa"], "bounds": {"eta": [-5, 5], "kappa": [0.05, 50]}},
      "predictor": {"f": "x", "q": 1},
      "estimator": "onelag",
      "coefficients": "exact_moments",
      "schedule": [{"n": 1000, "delta": 0.02}, {"n": 4000, "delta": 0.01}],
      "replications": 7,
      "seed": 31415,
      "avar": {"estimator": "exp_time", "K": 500, "gamma": 0.25, "t_max": 8.0},
      "theta_init": [0.5, 1.0]
    })";
    const auto cfg = parse_experiment_config(text);
    CHECK(cfg.kind == EstimatorKind::onelag);
    CHECK(cfg.model.free.size() == 2);
    CHECK(cfg.schedule.size() == 2);
    CHECK(cfg.schedule[1].n == 4000);
    CHECK(cfg.replications == 7);
    CHECK(cfg.avar.estimator == PotentialEstimator::exp_time);
    CHECK(cfg.avar.gamma == doctest::Approx(0.25));
    CHECK(cfg.model.bounds.at("kappa").lo == doctest::Approx(0.05));

    // echo back to JSON and reparse
    const auto echo = parse_experiment_config(experiment_config_to_json(cfg));
    CHECK(echo.schedule.size() == cfg.schedule.size());
    CHECK(echo.seed == cfg.seed);
    CHECK(echo.predictor_q == cfg.predictor_q);

    CHECK_THROWS_AS(parse_experiment_config("{"), ConfigError);
    CHECK_THROWS_AS(parse_experiment_config(R"({"model": {"family": "ou",
        "params": {"kappa": 1, "eta": 0, "xi": 1}}, "schedule": []})"),
                    ConfigError);
    // simple estimator requires q = 0
    std::string bad = text;
    bad.replace(bad.find("onelag"), 6, "simple");
    CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);
}

TEST_CASE("regime diagnostics on schedule entries") {
    ScheduleEntry ok{100000, 0.01};
    CHECK(ok.n_delta() == doctest::Approx(1000.0));
    CHECK(ok.n_delta3() == doctest::Approx(0.1));
    CHECK(!ok.regime_violation());
    ScheduleEntry bad{100, 0.5};
    CHECK(bad.regime_violation());
}
