#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pbef/estimator.hpp"
#include "pbef/model.hpp"
#include "pbef/potential.hpp"

namespace pbef {

struct ScheduleEntry {
    std::size_t n = 0;
    double delta = 0.0;

    double n_delta() const { return static_cast<double>(n) * delta; }
    double n_delta3() const { return static_cast<double>(n) * delta * delta * delta; }
    bool regime_violation() const { return !(n_delta3() < 1.0); }  // CLT regime wants n delta^3 -> 0
};

enum class EstimatorKind { simple, onelag };

// Mirrors the structured-text experiment file: model + theta0, predictor,
// estimator kind, high-frequency schedule, replication count, seeds, the
// AVAR Monte Carlo configuration and output paths.
struct ExperimentConfig {
    FamilyConfig model;
    std::vector<double> predictor_poly{0.0, 1.0};
    int predictor_q = 0;
    std::string predictor_label = "x";
    EstimatorKind kind = EstimatorKind::simple;
    CoeffMethod coeff_method = CoeffMethod::exact_moments;
    std::vector<ScheduleEntry> schedule;
    std::size_t replications = 1;
    std::uint64_t seed = 0;
    int substeps = 1;
    PotentialMCConfig avar;
    std::vector<double> theta_init;  // empty: use theta0
    std::vector<double> theta_star;  // empty: use theta_init
    std::string out_dir = ".";
    int jobs = 0;

    void validate() const;
    PredictorSpec predictor() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

} // namespace pbef
