#include "pbef/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "pbef/parallel.hpp"

namespace pbef {

namespace {

constexpr std::uint64_t kScheduleStreamStride = 1ULL << 40;

double v_n(const SamplePath& path, const SmoothFunction& f) {
    // V_n(f) = n^{-1} sum_{i=1}^{n} f(X_{t_{i-1}})
    const std::size_t n = path.scheme.n;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += f.eval(path.values[i]);
    return s / static_cast<double>(n);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

} // namespace

SampleStats sample_stats(const std::vector<double>& v) {
    SampleStats s;
    const double n = static_cast<double>(v.size());
    if (v.empty()) return s;
    for (double x : v) s.mean += x;
    s.mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double x : v) {
        const double d = x - s.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    s.variance = v.size() > 1 ? m2 * n / (n - 1.0) : 0.0;
    if (m2 > 0.0) {
        s.skewness = m3 / std::pow(m2, 1.5);
        s.excess_kurtosis = m4 / (m2 * m2) - 3.0;
    }
    return s;
}

double ks_distance_normal(std::vector<double> v, double variance) {
    if (v.empty() || !(variance > 0.0)) return 0.0;
    std::sort(v.begin(), v.end());
    const double sd = std::sqrt(variance);
    double d = 0.0;
    const double n = static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double phi = normal_cdf(v[i] / sd);
        d = std::max(d, std::abs(phi - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - phi));
    }
    return d;
}

std::vector<CheckRow> run_lln_check(const ExperimentConfig& config) {
    config.validate();
    const DiffusionModel model = make_model(config.model);
    const ParamVector theta0 = initial_theta(config.model);
    const PredictorSpec spec = config.predictor();
    const double target = invariant_moment(model, theta0, spec.f).value;

    std::vector<CheckRow> rows;
    for (std::size_t s = 0; s < config.schedule.size(); ++s) {
        const auto& entry = config.schedule[s];
        const std::size_t R = config.replications;
        std::vector<double> vals(R, 0.0);
        std::vector<char> ok(R, 1);
        parallel_for(
            R,
            [&](std::size_t r) {
                try {
                    SamplingScheme scheme{entry.n, entry.delta, config.substeps, config.seed,
                                          s * kScheduleStreamStride + r};
                    vals[r] = v_n(simulate_path(model, theta0, scheme), spec.f);
                } catch (const Error&) {
                    ok[r] = 0;
                }
            },
            config.jobs);
        std::vector<double> good;
        for (std::size_t r = 0; r < R; ++r)
            if (ok[r]) good.push_back(vals[r]);
        const SampleStats st = sample_stats(good);
        CheckRow row;
        row.schedule_idx = s;
        row.n = entry.n;
        row.delta = entry.delta;
        row.n_delta3 = entry.n_delta3();
        row.regime_flag = entry.regime_violation();
        row.replications = good.size();
        row.mean = st.mean;
        row.stderr_ = good.size() > 1 ? std::sqrt(st.variance / static_cast<double>(good.size())) : 0.0;
        row.target = target;
        row.pass = std::abs(st.mean - target) <= 4.0 * row.stderr_ + 1e-14;
        rows.push_back(row);
    }
    return rows;
}

std::vector<CheckRow> run_clt_check(const ExperimentConfig& config, const SmoothFunction& g) {
    config.validate();
    const DiffusionModel model = make_model(config.model);
    const ParamVector theta0 = initial_theta(config.model);

    const double mu = invariant_moment(model, theta0, g).value;
    const SmoothFunction gc = g.shifted(-mu);

    const CltVarianceResult clt = clt_variance(model, theta0, gc, config.avar);
    const double predicted = clt.quadratic_form ? *clt.quadratic_form : clt.pairing_form.value;

    std::vector<CheckRow> rows;
    for (std::size_t s = 0; s < config.schedule.size(); ++s) {
        const auto& entry = config.schedule[s];
        const std::size_t R = config.replications;
        const double scale = std::sqrt(entry.n_delta());
        std::vector<double> vals(R, 0.0);
        std::vector<char> ok(R, 1);
        parallel_for(
            R,
            [&](std::size_t r) {
                try {
                    SamplingScheme scheme{entry.n, entry.delta, config.substeps, config.seed,
                                          s * kScheduleStreamStride + r};
                    vals[r] = scale * v_n(simulate_path(model, theta0, scheme), gc);
                } catch (const Error&) {
                    ok[r] = 0;
                }
            },
            config.jobs);
        std::vector<double> good;
        for (std::size_t r = 0; r < R; ++r)
            if (ok[r]) good.push_back(vals[r]);
        const SampleStats st = sample_stats(good);
        CheckRow row;
        row.schedule_idx = s;
        row.n = entry.n;
        row.delta = entry.delta;
        row.n_delta3 = entry.n_delta3();
        row.regime_flag = entry.regime_violation();
        row.replications = good.size();
        row.mean = st.mean;
        row.stderr_ = good.size() > 1 ? std::sqrt(st.variance / static_cast<double>(good.size())) : 0.0;
        row.target = 0.0;
        row.emp_variance = st.variance;
        row.predicted_variance = predicted;
        row.skewness = st.skewness;
        row.excess_kurtosis = st.excess_kurtosis;
        row.ks_distance = ks_distance_normal(good, predicted);
        // no assertion outside the CLT regime; inside it, 15% on the variance
        row.pass = row.regime_flag || std::abs(st.variance - predicted) <= 0.15 * predicted + 1e-14;
        rows.push_back(row);
    }
    return rows;
}

StudyReport run_estimation_study(const ExperimentConfig& config) {
    config.validate();
    const DiffusionModel model = make_model(config.model);
    const ParamVector theta0 = initial_theta(config.model);
    model.validate(theta0);
    const PredictorSpec spec = config.predictor();
    const std::size_t d = theta0.dim();
    if (config.kind == EstimatorKind::simple && d != 1)
        throw ConfigError("simple estimator requires one free parameter");
    if (config.kind == EstimatorKind::onelag && d != 2)
        throw ConfigError("1-lag estimator requires two free parameters");

    const ParamVector theta_init =
        config.theta_init.empty() ? theta0 : theta0.with_values(config.theta_init);
    const ParamVector theta_star =
        config.theta_star.empty() ? theta_init : theta0.with_values(config.theta_star);

    SolveOptions solve_opts;
    solve_opts.coeff_method = config.coeff_method;
    solve_opts.theta_star = theta_star.values;

    // oracle AVAR at theta0 (one evaluation; the limit does not depend on the schedule)
    AvarReport oracle = config.kind == EstimatorKind::simple
                            ? avar_simple(model, theta0, spec, config.avar)
                            : avar_onelag(model, theta0, spec, config.avar);
    Eigen::MatrixXd oracle_avar(d, d);
    if (config.kind == EstimatorKind::simple) oracle_avar(0, 0) = oracle.scalar;
    else oracle_avar = oracle.matrix;

    StudyReport report;
    report.config = config;
    report.theta0 = theta0.values;
    report.method_notes =
        "coverage: oracle intervals use AVAR(theta0); feasible intervals use AVAR at the "
        "cross-replication mean estimate (one evaluation per schedule entry)";

    for (std::size_t s = 0; s < config.schedule.size(); ++s) {
        const auto& entry = config.schedule[s];
        const std::size_t R = config.replications;
        std::vector<ReplicationResult> reps(R);
        parallel_for(
            R,
            [&](std::size_t r) {
                ReplicationResult& out = reps[r];
                out.schedule_idx = s;
                out.rep_idx = r;
                const auto t_start = std::chrono::steady_clock::now();
                try {
                    SamplingScheme scheme{entry.n, entry.delta, config.substeps, config.seed,
                                          s * kScheduleStreamStride + r};
                    const SamplePath path = simulate_path(model, theta0, scheme);
                    EstimateResult est;
                    if (config.kind == EstimatorKind::simple)
                        est = solve_simple(model, path, spec, theta_init, theta_star, solve_opts);
                    else
                        est = solve_onelag(model, path, spec, theta_init, solve_opts);
                    out.theta_hat = est.theta_hat.values;
                    out.converged = est.converged;
                    out.fallback_used = est.fallback_used;
                    const double scale = std::sqrt(entry.n_delta());
                    out.std_error.resize(d);
                    for (std::size_t j = 0; j < d; ++j)
                        out.std_error[j] = scale * (out.theta_hat[j] - theta0[j]);
                } catch (const Error&) {
                    out.theta_hat.clear();  // failed replication
                    out.converged = false;
                }
                out.runtime_sec =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            },
            config.jobs);

        std::vector<const ReplicationResult*> usable;
        std::size_t n_failed = 0, n_fallback = 0;
        for (const auto& r : reps) {
            if (r.failed()) { ++n_failed; continue; }
            if (r.fallback_used) ++n_fallback;
            if (r.converged) usable.push_back(&r);
        }
        if (usable.empty() && n_failed == R)
            throw NumericalError("all replications failed for schedule entry " + std::to_string(s));

        ScheduleSummary sum;
        sum.schedule_idx = s;
        sum.n = entry.n;
        sum.delta = entry.delta;
        sum.n_delta = entry.n_delta();
        sum.n_delta3 = entry.n_delta3();
        sum.regime_flag = entry.regime_violation();
        sum.n_total = R;
        sum.n_converged = usable.size();
        sum.n_failed = n_failed;
        sum.fallback_rate = static_cast<double>(n_fallback) / static_cast<double>(R);
        sum.predicted_avar = oracle_avar;

        const std::size_t m = usable.size();
        sum.mean_bias.assign(d, 0.0);
        sum.mean_std_error.assign(d, 0.0);
        sum.emp_cov = Eigen::MatrixXd::Zero(d, d);
        sum.coverage_oracle.assign(d, 0.0);
        sum.coverage_feasible.assign(d, 0.0);
        sum.skewness.assign(d, 0.0);
        sum.excess_kurtosis.assign(d, 0.0);
        sum.ks_distance.assign(d, 0.0);
        if (m > 0) {
            for (std::size_t j = 0; j < d; ++j) {
                std::vector<double> z(m), th(m);
                for (std::size_t i = 0; i < m; ++i) {
                    z[i] = usable[i]->std_error[j];
                    th[i] = usable[i]->theta_hat[j];
                }
                const SampleStats st = sample_stats(z);
                sum.mean_std_error[j] = st.mean;
                sum.mean_bias[j] = sample_stats(th).mean - theta0[j];
                sum.skewness[j] = st.skewness;
                sum.excess_kurtosis[j] = st.excess_kurtosis;
                sum.ks_distance[j] = ks_distance_normal(z, oracle_avar(static_cast<Eigen::Index>(j),
                                                                       static_cast<Eigen::Index>(j)));
            }
            if (m > 1) {
                for (std::size_t j = 0; j < d; ++j)
                    for (std::size_t k = 0; k < d; ++k) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += (usable[i]->std_error[j] - sum.mean_std_error[j]) *
                                   (usable[i]->std_error[k] - sum.mean_std_error[k]);
                        sum.emp_cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) =
                            acc / static_cast<double>(m - 1);
                    }
            } else {
                sum.emp_cov = Eigen::MatrixXd::Zero(d, d);
            }

            // feasible AVAR at the mean estimate
            Eigen::MatrixXd feasible_avar = oracle_avar;
            bool have_feasible = true;
            try {
                std::vector<double> mean_theta(d, 0.0);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < d; ++j) mean_theta[j] += usable[i]->theta_hat[j];
                for (std::size_t j = 0; j < d; ++j) mean_theta[j] /= static_cast<double>(m);
                const ParamVector theta_bar = theta0.with_values(mean_theta).projected();
                AvarReport fr = config.kind == EstimatorKind::simple
                                    ? avar_simple(model, theta_bar, spec, config.avar)
                                    : avar_onelag(model, theta_bar, spec, config.avar);
                if (config.kind == EstimatorKind::simple) feasible_avar(0, 0) = fr.scalar;
                else feasible_avar = fr.matrix;
            } catch (const Error& e) {
                have_feasible = false;
                std::cerr << "[pbef] feasible AVAR failed for schedule entry " << s << ": " << e.what()
                          << "\n";
            }

            const double width = 1.95996398454005423;  // 97.5% normal quantile
            for (std::size_t j = 0; j < d; ++j) {
                const double half_oracle =
                    width * std::sqrt(oracle_avar(static_cast<Eigen::Index>(j),
                                                  static_cast<Eigen::Index>(j)) /
                                      entry.n_delta());
                const double half_feasible =
                    have_feasible ? width * std::sqrt(feasible_avar(static_cast<Eigen::Index>(j),
                                                                    static_cast<Eigen::Index>(j)) /
                                                      entry.n_delta())
                                  : std::numeric_limits<double>::quiet_NaN();
                std::size_t cov_o = 0, cov_f = 0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double diff = std::abs(usable[i]->theta_hat[j] - theta0[j]);
                    if (diff <= half_oracle) ++cov_o;
                    if (have_feasible && diff <= half_feasible) ++cov_f;
                }
                sum.coverage_oracle[j] = static_cast<double>(cov_o) / static_cast<double>(m);
                sum.coverage_feasible[j] = have_feasible
                                               ? static_cast<double>(cov_f) / static_cast<double>(m)
                                               : std::numeric_limits<double>::quiet_NaN();
            }
        }

        report.summaries.push_back(std::move(sum));
        for (auto& r : reps) report.replications.push_back(std::move(r));
    }
    return report;
}

void write_replications_csv(const StudyReport& report, std::ostream& os) {
    const std::size_t d = report.theta0.size();
    os << "schedule_idx,rep_idx,n,delta,converged,fallback_used";
    for (std::size_t j = 0; j < d; ++j) os << ",theta_hat_" << j;
    for (std::size_t j = 0; j < d; ++j) os << ",std_error_" << j;
    os << '\n';
    for (const auto& r : report.replications) {
        const auto& entry = report.config.schedule[r.schedule_idx];
        os << r.schedule_idx << ',' << r.rep_idx << ',' << entry.n << ',' << format_double(entry.delta)
           << ',' << (r.converged ? 1 : 0) << ',' << (r.fallback_used ? 1 : 0);
        for (std::size_t j = 0; j < d; ++j)
            os << ',' << (r.failed() ? "nan" : format_double(r.theta_hat[j]));
        for (std::size_t j = 0; j < d; ++j)
            os << ',' << (r.failed() ? "nan" : format_double(r.std_error[j]));
        os << '\n';
    }
}

void write_summary_csv(const StudyReport& report, std::ostream& os) {
    const std::size_t d = report.theta0.size();
    os << "schedule_idx,n,delta,n_delta,n_delta3,regime_flag,n_total,n_converged,n_failed,fallback_rate";
    for (std::size_t j = 0; j < d; ++j) os << ",mean_bias_" << j;
    for (std::size_t j = 0; j < d; ++j) os << ",mean_std_error_" << j;
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) os << ",emp_cov_" << j << k;
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) os << ",predicted_avar_" << j << k;
    for (std::size_t j = 0; j < d; ++j) os << ",coverage_oracle_" << j;
    for (std::size_t j = 0; j < d; ++j) os << ",coverage_feasible_" << j;
    for (std::size_t j = 0; j < d; ++j) os << ",skewness_" << j;
    for (std::size_t j = 0; j < d; ++j) os << ",excess_kurtosis_" << j;
    for (std::size_t j = 0; j < d; ++j) os << ",ks_" << j;
    os << '\n';
    for (const auto& s : report.summaries) {
        os << s.schedule_idx << ',' << s.n << ',' << format_double(s.delta) << ','
           << format_double(s.n_delta) << ',' << format_double(s.n_delta3) << ','
           << (s.regime_flag ? 1 : 0) << ',' << s.n_total << ',' << s.n_converged << ',' << s.n_failed
           << ',' << format_double(s.fallback_rate);
        auto emit_vec = [&](const std::vector<double>& v) {
            for (double x : v) os << ',' << format_double(x);
        };
        emit_vec(s.mean_bias);
        emit_vec(s.mean_std_error);
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d; ++k)
                os << ',' << format_double(s.emp_cov(static_cast<Eigen::Index>(j),
                                                     static_cast<Eigen::Index>(k)));
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < d; ++k)
                os << ',' << format_double(s.predicted_avar(static_cast<Eigen::Index>(j),
                                                            static_cast<Eigen::Index>(k)));
        emit_vec(s.coverage_oracle);
        emit_vec(s.coverage_feasible);
        emit_vec(s.skewness);
        emit_vec(s.excess_kurtosis);
        emit_vec(s.ks_distance);
        os << '\n';
    }
}

std::vector<ReplicationResult> read_replications_csv(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw ConfigError("replications CSV: missing header");
    std::size_t d = 0;
    {
        std::istringstream hs(header);
        std::string col;
        while (std::getline(hs, col, ','))
            if (col.rfind("theta_hat_", 0) == 0) ++d;
    }
    std::vector<ReplicationResult> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string tok;
        ReplicationResult r;
        auto next = [&]() {
            if (!std::getline(row, tok, ',')) throw ConfigError("replications CSV: short row");
            return tok;
        };
        r.schedule_idx = std::stoull(next());
        r.rep_idx = std::stoull(next());
        next();  // n
        next();  // delta
        r.converged = next() == "1";
        r.fallback_used = next() == "1";
        std::vector<double> th(d), se(d);
        bool failed = false;
        for (std::size_t j = 0; j < d; ++j) {
            th[j] = std::stod(next());
            if (std::isnan(th[j])) failed = true;
        }
        for (std::size_t j = 0; j < d; ++j) se[j] = std::stod(next());
        if (!failed) {
            r.theta_hat = std::move(th);
            r.std_error = std::move(se);
        }
        out.push_back(std::move(r));
    }
    return out;
}

void write_check_rows_csv(const std::vector<CheckRow>& rows, std::ostream& os) {
    os << "schedule_idx,n,delta,n_delta3,regime_flag,replications,mean,stderr,target,pass,"
          "emp_variance,predicted_variance,skewness,excess_kurtosis,ks_distance\n";
    for (const auto& r : rows) {
        os << r.schedule_idx << ',' << r.n << ',' << format_double(r.delta) << ','
           << format_double(r.n_delta3) << ',' << (r.regime_flag ? 1 : 0) << ',' << r.replications
           << ',' << format_double(r.mean) << ',' << format_double(r.stderr_) << ','
           << format_double(r.target) << ',' << (r.pass ? 1 : 0) << ','
           << format_double(r.emp_variance) << ',' << format_double(r.predicted_variance) << ','
           << format_double(r.skewness) << ',' << format_double(r.excess_kurtosis) << ','
           << format_double(r.ks_distance) << '\n';
    }
}

std::vector<std::string> emit_report(const StudyReport& report, const std::string& format,
                                     const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + out_dir + "': " + ec.message());

    std::vector<std::string> written;
    auto open = [&](const std::string& name) {
        const std::string path = (fs::path(out_dir) / name).string();
        std::ofstream os(path);
        if (!os) throw ConfigError("cannot open '" + path + "' for writing");
        written.push_back(path);
        return os;
    };
    {
        auto os = open("replications.csv");
        write_replications_csv(report, os);
    }
    {
        auto os = open("summary.csv");
        write_summary_csv(report, os);
    }
    {
        auto os = open("study.json");
        nlohmann::json j;
        j["config"] = nlohmann::json::parse(experiment_config_to_json(report.config));
        j["theta0"] = report.theta0;
        j["method_notes"] = report.method_notes;
        nlohmann::json sums = nlohmann::json::array();
        for (const auto& s : report.summaries) {
            nlohmann::json js;
            js["schedule_idx"] = s.schedule_idx;
            js["n"] = s.n;
            js["delta"] = s.delta;
            js["n_delta"] = s.n_delta;
            js["n_delta3"] = s.n_delta3;
            js["regime_flag"] = s.regime_flag;
            js["n_total"] = s.n_total;
            js["n_converged"] = s.n_converged;
            js["n_failed"] = s.n_failed;
            js["fallback_rate"] = s.fallback_rate;
            js["mean_bias"] = s.mean_bias;
            js["mean_std_error"] = s.mean_std_error;
            const std::size_t d = report.theta0.size();
            std::vector<std::vector<double>> cov(d, std::vector<double>(d)), pred = cov;
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b) {
                    cov[a][b] = s.emp_cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
                    pred[a][b] =
                        s.predicted_avar(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
                }
            js["emp_cov"] = cov;
            js["predicted_avar"] = pred;
            js["coverage_oracle"] = s.coverage_oracle;
            js["coverage_feasible"] = s.coverage_feasible;
            js["skewness"] = s.skewness;
            js["excess_kurtosis"] = s.excess_kurtosis;
            js["ks_distance"] = s.ks_distance;
            sums.push_back(js);
        }
        j["summaries"] = sums;
        os << j.dump(2) << '\n';
    }
    (void)format;
    return written;
}

} // namespace pbef
