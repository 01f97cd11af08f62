#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>
#include <vector>

#include "pbef/config.hpp"

namespace pbef {

struct ReplicationResult {
    std::size_t schedule_idx = 0;
    std::size_t rep_idx = 0;
    std::vector<double> theta_hat;
    bool converged = false;
    bool fallback_used = false;
    std::vector<double> std_error;  // sqrt(n delta) (theta_hat - theta0)
    double runtime_sec = 0.0;       // diagnostics only; never serialized

    bool failed() const { return theta_hat.empty(); }
};

struct ScheduleSummary {
    std::size_t schedule_idx = 0;
    std::size_t n = 0;
    double delta = 0.0;
    double n_delta = 0.0;
    double n_delta3 = 0.0;
    bool regime_flag = false;  // n delta^3 >= 1: outside the CLT regime
    std::size_t n_total = 0;
    std::size_t n_converged = 0;
    std::size_t n_failed = 0;
    double fallback_rate = 0.0;
    std::vector<double> mean_bias;           // mean(theta_hat) - theta0, converged reps
    std::vector<double> mean_std_error;      // mean standardized error
    Eigen::MatrixXd emp_cov;                 // covariance of standardized errors
    Eigen::MatrixXd predicted_avar;          // oracle AVAR at theta0
    std::vector<double> coverage_oracle;     // per coordinate
    std::vector<double> coverage_feasible;   // AVAR at the mean estimate
    std::vector<double> skewness;
    std::vector<double> excess_kurtosis;
    std::vector<double> ks_distance;         // vs N(0, predicted AVAR)
};

struct StudyReport {
    ExperimentConfig config;
    std::vector<double> theta0;
    std::vector<ReplicationResult> replications;
    std::vector<ScheduleSummary> summaries;
    std::string method_notes;
};

// One row per schedule entry of an LLN or CLT verification run.
struct CheckRow {
    std::size_t schedule_idx = 0;
    std::size_t n = 0;
    double delta = 0.0;
    double n_delta3 = 0.0;
    bool regime_flag = false;
    std::size_t replications = 0;
    double mean = 0.0;
    double stderr_ = 0.0;
    double target = 0.0;     // mu_0(f) for LLN, 0 for CLT
    bool pass = false;       // LLN: |mean - target| <= 4 stderr; CLT rows outside the
                             // regime carry no assertion and report pass = true
    double emp_variance = 0.0;
    double predicted_variance = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
    double ks_distance = 0.0;
};

// V_n(f) across replications per schedule entry vs mu_0(f).
std::vector<CheckRow> run_lln_check(const ExperimentConfig& config);

// sqrt(n delta) V_n(g) across replications vs the clt_variance prediction;
// g is auto-centered under theta0.
std::vector<CheckRow> run_clt_check(const ExperimentConfig& config, const SmoothFunction& g);

StudyReport run_estimation_study(const ExperimentConfig& config);

// Writes replications.csv, summary.csv and study.json under out_dir.
// format: "csv" or "json" selects what emit_report returns as its primary
// artifact list; all files are written either way.
std::vector<std::string> emit_report(const StudyReport& report, const std::string& format,
                                     const std::string& out_dir);

void write_replications_csv(const StudyReport& report, std::ostream& os);
void write_summary_csv(const StudyReport& report, std::ostream& os);
std::vector<ReplicationResult> read_replications_csv(std::istream& is);
void write_check_rows_csv(const std::vector<CheckRow>& rows, std::ostream& os);

// Sample moments of a vector (helper shared with the test suites).
struct SampleStats {
    double mean = 0.0;
    double variance = 0.0;  // unbiased
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
};
SampleStats sample_stats(const std::vector<double>& v);

// Kolmogorov-Smirnov distance of v against N(0, variance).
double ks_distance_normal(std::vector<double> v, double variance);

} // namespace pbef
