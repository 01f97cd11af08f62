#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pbef/estimator.hpp"
#include "pbef/model.hpp"

namespace pbef {

enum class PotentialEstimator { exp_time, grid_quadrature };

// Configuration of the Monte Carlo potential pairings. gamma <= 0 or
// t_max <= 0 select the defaults (spectral-gap/2 or a pilot-path
// autocorrelation rule for gamma; 10/gamma for t_max).
struct PotentialMCConfig {
    double gamma = 0.0;
    int K = 20000;
    double t_max = 0.0;
    PotentialEstimator estimator = PotentialEstimator::grid_quadrature;
    double substeps_per_unit = 32.0;
    std::uint64_t seed = 0;
    int jobs = 0;
};

struct PotentialEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    PotentialEstimator method = PotentialEstimator::grid_quadrature;
    std::optional<double> bias_bound;  // lambda^{-1} ||g1||_2 ||g2||_2 e^{-lambda t_max}
    int K_used = 0;
    bool stderr_reliable = true;       // false for exp_time (heavy-tailed weights)
    bool diagnostics_only = false;     // K < 10
    double centering_shift = 0.0;      // mean subtracted from g2 when it was not centered
};

// gamma = lambda/2 when the spectral gap is known, otherwise the inverse
// integrated autocorrelation time of f on a pilot path.
double default_gamma(const DiffusionModel& model, const ParamVector& theta, const SmoothFunction& f,
                     std::uint64_t seed = 17);

// U_theta(f*) for the OU family and centered linear f*; the Poisson-equation
// solution f*/kappa. Throws NotAvailableError otherwise.
SmoothFunction potential_closed_form_ou(const DiffusionModel& model, const ParamVector& theta,
                                        const SmoothFunction& f_star);

// mu_theta(g1 U_theta(g2)) by Monte Carlo.
//   exp_time: draws T ~ Exp(gamma) conditioned on T <= t_max and averages
//     (1 - e^{-gamma t_max}) gamma^{-1} e^{gamma T} g1(X_0) g2(X_T).
//   grid_quadrature: per stationary path, the trapezoidal time integral of
//     g1(X_0) g2(X_t) over [0, t_max].
// g2 must be centered; off-center g2 is re-centered with a warning.
PotentialEstimate potential_pairing_mc(const DiffusionModel& model, const ParamVector& theta,
                                       const SmoothFunction& g1, const SmoothFunction& g2,
                                       const PotentialMCConfig& cfg);

// mu_theta(f1 dx U_theta(g2)) via integration by parts:
// -mu_theta(U_theta(g2) h) with h = f1' + f1 (log nu)'. The vanishing of the
// boundary terms is probed at the 1e-10 density quantiles.
PotentialEstimate dx_potential_term(const DiffusionModel& model, const ParamVector& theta,
                                    const SmoothFunction& f1, const SmoothFunction& g2_centered,
                                    const PotentialMCConfig& cfg);

struct AvarReport {
    int dim = 1;
    double scalar = 0.0;                    // dim == 1
    Eigen::Matrix2d matrix;                 // dim == 2
    std::vector<std::pair<std::string, PotentialEstimate>> components;
    std::optional<Eigen::Matrix2d> w_matrix;
    std::optional<double> bound;            // spectral-gap upper bound
    std::string method_notes;
    std::uint64_t seed = 0;
};

void write_components_csv(const AvarReport& report, std::ostream& os);
std::string report_to_json(const AvarReport& report);

enum class AvarMethod { monte_carlo, closed_form };

// AVAR of the simple (q=0) estimator: 2 mu_0(f* U_0(f*)) / (d_theta mu_0(f))^2
// with f* = f - mu_0(f); also the spectral-gap bound when lambda is known.
AvarReport avar_simple(const DiffusionModel& model, const ParamVector& theta0, const PredictorSpec& spec,
                       const PotentialMCConfig& cfg, AvarMethod method = AvarMethod::monte_carlo,
                       MomentMode mode = MomentMode::prefer_closed_form);

// Sandwich W^{-1} V0 W^{-T} of the 1-lag estimator, V0 assembled from the
// potential pairings with common random numbers across components.
AvarReport avar_onelag(const DiffusionModel& model, const ParamVector& theta0, const PredictorSpec& spec,
                       const PotentialMCConfig& cfg, MomentMode mode = MomentMode::prefer_closed_form);

struct CltVarianceResult {
    PotentialEstimate pairing_form;          // 2 mu_0(g U_0(g)), Monte Carlo
    std::optional<double> quadratic_form;    // mu_0([dx U_0(g) b]^2) when U_0 is closed form
    std::optional<double> discrepancy;
    double centering_shift = 0.0;
};

// Asymptotic variance of sqrt(n delta) V_n(g) for centered g.
CltVarianceResult clt_variance(const DiffusionModel& model, const ParamVector& theta0,
                               const SmoothFunction& g, const PotentialMCConfig& cfg,
                               MomentMode mode = MomentMode::prefer_closed_form);

} // namespace pbef
