#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pbef/model.hpp"
#include "pbef/simulate.hpp"

namespace pbef {

// Predictor function f with the lag order q of its predictor space
// span{1, f(X_{t_{i-1}}), ..., f(X_{t_{i-q}})}.
struct PredictorSpec {
    SmoothFunction f;
    int q = 0;  // 0 or 1 carry full asymptotics; >= 2 is scaffold-only
    std::string label = "f";
};

enum class CoeffMethod { exact_moments, expansion_order1 };

struct ProjectionCoefficients {
    Eigen::VectorXd a;  // length q+1; for q=1: (a0, a1)
    CoeffMethod method = CoeffMethod::exact_moments;
    double delta = 0.0;
};

// How the lag-Delta moment E[f(X_0) f(X_delta)] is obtained when no closed
// form applies (Monte Carlo over stationary pairs).
struct LagMomentOptions {
    std::size_t mc_reps = 200000;
    std::uint64_t seed = 977;
    double substeps_per_unit = 128.0;
};

double lag_moment(const DiffusionModel& model, const ParamVector& theta, const SmoothFunction& f,
                  double lag, MomentMode mode = MomentMode::prefer_closed_form,
                  const LagMomentOptions& opts = {});

ProjectionCoefficients projection_coefficients(const DiffusionModel& model, const ParamVector& theta,
                                               const PredictorSpec& spec, double delta, CoeffMethod method,
                                               MomentMode mode = MomentMode::prefer_closed_form,
                                               const LagMomentOptions& opts = {});

enum class Normalization { raw, per_nDelta };

struct EstimatingFunctionValue {
    Eigen::VectorXd value;
    Eigen::MatrixXd jacobian;  // d x d, derivative in theta^T
    std::size_t n_terms = 0;
    Normalization normalization = Normalization::raw;
    bool scaffold = false;  // set when lag order / predictor count has no asymptotic guarantees
};

// G_n(theta) = sum_{i=1}^n [f(X_{t_i}) - mu_theta(f)]; d = 1.
EstimatingFunctionValue gfun_simple(const DiffusionModel& model, const ParamVector& theta,
                                    const SamplePath& path, const PredictorSpec& spec,
                                    Normalization norm = Normalization::raw,
                                    MomentMode mode = MomentMode::prefer_closed_form);

// G_n(theta) = sum_{i=1}^n (1, f(X_{t_{i-1}}))^T [f(X_{t_i}) - a0 - a1 f(X_{t_{i-1}})]; d = 2.
EstimatingFunctionValue gfun_onelag(const DiffusionModel& model, const ParamVector& theta,
                                    const SamplePath& path, const PredictorSpec& spec,
                                    CoeffMethod coeff_method,
                                    Normalization norm = Normalization::raw,
                                    MomentMode mode = MomentMode::prefer_closed_form,
                                    const LagMomentOptions& opts = {});

struct SolveOptions {
    int max_iterations = 50;
    double residual_tol = 1e-10;   // scaled by max(1, initial residual)
    double step_tol = 1e-12;
    double cond_limit = 1e12;
    double bounds_margin = 1e-8;
    CoeffMethod coeff_method = CoeffMethod::exact_moments;
    MomentMode moment_mode = MomentMode::prefer_closed_form;
    LagMomentOptions lag_opts{};
    int probe_grid = 41;  // monotonicity probe for the scalar solver
    bool multistart = false;
    std::vector<std::vector<double>> extra_starts;
    std::optional<std::vector<double>> theta_star;  // fallback point
};

struct EstimateResult {
    ParamVector theta_hat;
    bool converged = false;
    int n_iterations = 0;
    bool fallback_used = false;
    double residual_norm = 0.0;
    double jacobian_cond = 0.0;
};

// Scalar estimator: theta_hat = kappa^{-1}(mean of f over i = 1..n) with
// kappa(theta) = mu_theta(f); theta_star is returned when the sample mean
// falls outside kappa(Theta).
EstimateResult solve_simple(const DiffusionModel& model, const SamplePath& path, const PredictorSpec& spec,
                            const ParamVector& theta_init, const ParamVector& theta_star,
                            const SolveOptions& options = {});

// Damped Newton on the per-(n delta)-normalized 1-lag estimating function.
EstimateResult solve_onelag(const DiffusionModel& model, const SamplePath& path, const PredictorSpec& spec,
                            const ParamVector& theta_init, const SolveOptions& options = {});

// Newton root finder over a user-supplied estimating function (exposed so
// equivalent estimating functions M * G_n can be solved with the same code).
EstimateResult newton_solve(const std::function<EstimatingFunctionValue(const ParamVector&)>& gfun,
                            const ParamVector& theta_init, const SolveOptions& options = {});

// Probability limit of (n delta)^{-1} G_n(theta) under theta_0 (1-lag case).
Eigen::Vector2d gamma_limit(const DiffusionModel& model, const ParamVector& theta0, const ParamVector& theta,
                            const PredictorSpec& spec, MomentMode mode = MomentMode::prefer_closed_form);

// Limit W(theta) = Z(f) A(theta) of the normalized Jacobian (1-lag case).
Eigen::Matrix2d w_limit(const DiffusionModel& model, const ParamVector& theta0, const ParamVector& theta,
                        const PredictorSpec& spec, MomentMode mode = MomentMode::prefer_closed_form);

// Stacked estimating function over several predictors with coefficient
// matrix A (d x dbar, dbar = N + sum q_j). No asymptotic guarantees beyond
// q <= 1, N = 1; such assemblies are flagged scaffold-only.
EstimatingFunctionValue assemble_multi(const DiffusionModel& model, const ParamVector& theta,
                                       const SamplePath& path, const std::vector<PredictorSpec>& specs,
                                       const Eigen::MatrixXd& A,
                                       CoeffMethod coeff_method = CoeffMethod::exact_moments,
                                       Normalization norm = Normalization::raw,
                                       MomentMode mode = MomentMode::prefer_closed_form,
                                       const LagMomentOptions& opts = {});

} // namespace pbef
