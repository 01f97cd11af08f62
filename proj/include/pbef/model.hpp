#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pbef/params.hpp"
#include "pbef/rng.hpp"
#include "pbef/smooth_function.hpp"

namespace pbef {

class RngStream;

// Analytic oracles carried by built-in families. All are functions of the
// free parameter vector theta.
struct ClosedFormOracles {
    std::function<double(const ParamVector&)> invariant_mean;
    std::function<double(const ParamVector&)> invariant_variance;
    std::function<double(int, const ParamVector&)> monomial_moment;        // E[X^k]
    std::function<double(const ParamVector&)> spectral_gap;                 // lambda
    std::function<double(double, const ParamVector&)> autocov_identity;     // Cov(X_0, X_t)
    std::function<double(double, const ParamVector&)> lag_moment_identity;  // E[X_0 X_delta]
};

// Exact one-step transition law X_t | X_0 = x when it is Gaussian (OU).
struct GaussianTransition {
    std::function<double(double, double, const ParamVector&)> mean;  // (x, t, theta)
    std::function<double(double, double, const ParamVector&)> sd;
};

// Parametric scalar diffusion dX = a(X;theta) dt + b(X;theta) dB on an open
// interval, with its invariant density and optional analytic extras.
// Immutable after construction; operations are pure functions of inputs.
struct DiffusionModel {
    std::string family;
    int dim_theta = 0;
    Interval state_space;

    std::function<double(double, const ParamVector&)> drift;          // a(x;theta)
    std::function<double(double, const ParamVector&)> drift_dx;
    std::function<double(double, const ParamVector&)> drift_dxx;
    std::function<double(double, const ParamVector&)> diffusion;      // b(x;theta) > 0
    std::function<double(double, const ParamVector&)> diffusion_dx;
    std::function<double(double, const ParamVector&)> diffusion_dxx;

    std::function<double(double, const ParamVector&)> invariant_logdensity;     // log nu_theta
    std::function<double(double, const ParamVector&)> invariant_logdensity_dx;  // (log nu)'

    // Polynomial coefficient vectors for a(.;theta) and b^2(.;theta) when the
    // family is polynomial in x; enables exact generator composition.
    std::function<std::vector<double>(const ParamVector&)> drift_poly;
    std::function<std::vector<double>(const ParamVector&)> diffusion_sq_poly;

    std::function<double(const ParamVector&)> mode_hint;  // starting point for tail search

    std::optional<ClosedFormOracles> closed_form;
    std::optional<GaussianTransition> exact_transition;
    std::function<double(RngStream&, const ParamVector&)> stationary_sampler;

    std::function<void(const ParamVector&)> validate_theta;  // family constraints

    // Recorded, non-checkable assumptions (rho-mixing, linear growth).
    std::string mixing_note;
    std::string growth_note;

    void validate(const ParamVector& theta) const;
};

// Structured-text description of a built-in model: family name, full
// parameter map, which parameters form theta (in order) and their bounds.
struct FamilyConfig {
    std::string family;                        // "ou" or "cir"
    std::map<std::string, double> params;      // kappa, eta, xi
    std::vector<std::string> free;             // theta coordinates; empty = all
    std::map<std::string, Interval> bounds;    // optional overrides for free coords
};

DiffusionModel make_model(const FamilyConfig& cfg);
ParamVector initial_theta(const FamilyConfig& cfg);

// Model plus the parameter point it was configured at.
struct BuiltModel {
    DiffusionModel model;
    ParamVector theta;
};

BuiltModel build_ou(double kappa, double eta, double xi,
                    const std::vector<std::string>& free = {});
BuiltModel build_cir(double kappa, double eta, double xi,
                     const std::vector<std::string>& free = {});

enum class MomentMode { prefer_closed_form, quadrature_only };

struct MomentResult {
    double value = 0.0;
    double error_estimate = 0.0;
    bool used_closed_form = false;
};

// Truncated integration domain for the invariant density: tails cut where
// the density falls below 1e-16 of its mode.
struct InvariantQuadrature {
    double lo = 0.0;
    double hi = 0.0;
    double normalization = 1.0;  // integral of the density over [lo, hi]

    // integrate g(x) nu(x) dx / normalization
    std::function<MomentResult(const std::function<double(double)>&)> integrate;
};

InvariantQuadrature build_invariant_quadrature(const DiffusionModel& model, const ParamVector& theta);

// Points left/right of the mode where the invariant density has fallen to
// ratio * its peak value (or the state-space boundary if reached first).
std::pair<double, double> density_ratio_points(const DiffusionModel& model, const ParamVector& theta,
                                               double ratio);

// L_theta f(x) = a f' + (1/2) b^2 f''
double generator_apply(const DiffusionModel& model, const ParamVector& theta,
                       const SmoothFunction& f, double x);

// L_theta f as a SmoothFunction; exact polynomial composition when the family
// and f are polynomial, finite-difference derivatives otherwise.
SmoothFunction generator_function(const DiffusionModel& model, const ParamVector& theta,
                                  const SmoothFunction& f);

// L^i f(x) for i in {0, 1, 2}.
double generator_iterate(const DiffusionModel& model, const ParamVector& theta,
                         const SmoothFunction& f, double x, int i);

// mu_theta(g); closed form when available, else adaptive quadrature.
MomentResult invariant_moment(const DiffusionModel& model, const ParamVector& theta,
                              const SmoothFunction& g,
                              MomentMode mode = MomentMode::prefer_closed_form);

// Var_theta f(X_0)
double invariant_variance_of(const DiffusionModel& model, const ParamVector& theta,
                             const SmoothFunction& f,
                             MomentMode mode = MomentMode::prefer_closed_form);

// K_f(theta) = mu(f L f) / Var f
double kf_coefficient(const DiffusionModel& model, const ParamVector& theta,
                      const SmoothFunction& f,
                      MomentMode mode = MomentMode::prefer_closed_form);

// ||g||_2 = sqrt(mu_theta(g^2))
double invariant_l2_norm(const DiffusionModel& model, const ParamVector& theta,
                         const SmoothFunction& g,
                         MomentMode mode = MomentMode::prefer_closed_form);

} // namespace pbef
