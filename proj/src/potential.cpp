#include "pbef/potential.hpp"

#include <cmath>
#include <iostream>
#include <ostream>
#include <sstream>

#include "pbef/parallel.hpp"
#include "pbef/simulate.hpp"

#include <json.hpp>

namespace pbef {

namespace {

struct ResolvedConfig {
    double gamma;
    double t_max;
    int K;
    PotentialEstimator estimator;
    double substeps_per_unit;
    std::uint64_t seed;
    int jobs;
};

ResolvedConfig resolve(const DiffusionModel& model, const ParamVector& theta, const SmoothFunction& g,
                       const PotentialMCConfig& cfg) {
    ResolvedConfig r;
    // the grid estimator only needs gamma to default t_max
    const bool need_gamma =
        cfg.estimator == PotentialEstimator::exp_time || !(cfg.t_max > 0.0);
    r.gamma = cfg.gamma > 0.0 ? cfg.gamma
              : need_gamma    ? default_gamma(model, theta, g, cfg.seed ^ 0x5bd1e995ULL)
                              : 1.0;
    r.t_max = cfg.t_max > 0.0 ? cfg.t_max : 10.0 / r.gamma;
    if (cfg.K < 1) throw ConfigError("PotentialMCConfig: K must be >= 1");
    r.K = cfg.K;
    r.estimator = cfg.estimator;
    r.substeps_per_unit = cfg.substeps_per_unit;
    r.seed = cfg.seed;
    r.jobs = cfg.jobs;
    return r;
}

// Centers g against mu_theta when needed; returns the shift that was applied.
SmoothFunction center_g2(const DiffusionModel& model, const ParamVector& theta, const SmoothFunction& g,
                         MomentMode mode, double* shift_out) {
    const double mu = invariant_moment(model, theta, g, mode).value;
    const double scale = 1.0 + invariant_l2_norm(model, theta, g, mode);
    if (std::abs(mu) <= 1e-6 * scale) {
        *shift_out = 0.0;
        return g;
    }
    std::cerr << "[pbef] warning: pairing function not centered (mu = " << mu
              << "); auto-centering\n";
    *shift_out = mu;
    return g.shifted(-mu);
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / (static_cast<double>(v.size()) - 1.0) / static_cast<double>(v.size()));
}

std::optional<double> truncation_bias_bound(const DiffusionModel& model, const ParamVector& theta,
                                            const SmoothFunction& g1, const SmoothFunction& g2,
                                            double t_max, MomentMode mode) {
    if (!model.closed_form || !model.closed_form->spectral_gap) return std::nullopt;
    const double lambda = model.closed_form->spectral_gap(theta);
    const double n1 = invariant_l2_norm(model, theta, g1, mode);
    const double n2 = invariant_l2_norm(model, theta, g2, mode);
    return n1 * n2 * std::exp(-lambda * t_max) / lambda;
}

} // namespace

double default_gamma(const DiffusionModel& model, const ParamVector& theta, const SmoothFunction& f,
                     std::uint64_t seed) {
    if (model.closed_form && model.closed_form->spectral_gap)
        return 0.5 * model.closed_form->spectral_gap(theta);

    // pilot path; integrated autocorrelation time of f
    SamplingScheme scheme;
    scheme.n = 5000;
    scheme.delta = 0.1;
    scheme.substeps = 8;
    scheme.seed = seed;
    const SamplePath pilot = simulate_path(model, theta, scheme);
    std::vector<double> y(pilot.values.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f.eval(pilot.values[i]);
    const double m = mean_of(y);
    double c0 = 0.0;
    for (double v : y) c0 += (v - m) * (v - m);
    c0 /= static_cast<double>(y.size());
    if (!(c0 > 0.0)) throw NumericalError("default_gamma: pilot path has zero variance");
    double tau = 1.0;
    for (std::size_t k = 1; k < y.size() / 4; ++k) {
        double ck = 0.0;
        for (std::size_t i = 0; i + k < y.size(); ++i) ck += (y[i] - m) * (y[i + k] - m);
        ck /= static_cast<double>(y.size() - k);
        const double rho = ck / c0;
        if (rho < 0.05) break;
        tau += 2.0 * rho;
    }
    return 1.0 / (tau * scheme.delta);
}

SmoothFunction potential_closed_form_ou(const DiffusionModel& model, const ParamVector& theta,
                                        const SmoothFunction& f_star) {
    if (model.family != "ou" || !model.closed_form || !model.closed_form->spectral_gap)
        throw NotAvailableError("closed-form potential: only the OU family is supported");
    if (f_star.poly.size() != 2 || f_star.poly[1] == 0.0)
        throw NotAvailableError("closed-form potential: f* must be linear");
    const double mu = model.closed_form->invariant_mean(theta);
    if (std::abs(f_star.poly[0] + f_star.poly[1] * mu) >
        1e-10 * (1.0 + std::abs(f_star.poly[0]) + std::abs(f_star.poly[1])))
        throw NotAvailableError("closed-form potential: f* must be centered under mu_theta");
    const double kappa = model.closed_form->spectral_gap(theta);
    return f_star.scaled(1.0 / kappa);
}

PotentialEstimate potential_pairing_mc(const DiffusionModel& model, const ParamVector& theta,
                                       const SmoothFunction& g1, const SmoothFunction& g2,
                                       const PotentialMCConfig& cfg) {
    const MomentMode mode = MomentMode::prefer_closed_form;
    PotentialEstimate out;
    SmoothFunction g2c = center_g2(model, theta, g2, mode, &out.centering_shift);
    const ResolvedConfig rc = resolve(model, theta, g2c, cfg);

    out.method = rc.estimator;
    out.K_used = rc.K;
    out.diagnostics_only = rc.K < 10;

    std::vector<double> draws(static_cast<std::size_t>(rc.K));
    if (rc.estimator == PotentialEstimator::exp_time) {
        const double z_trunc = 1.0 - std::exp(-rc.gamma * rc.t_max);
        parallel_for(
            static_cast<std::size_t>(rc.K),
            [&](std::size_t i) {
                RngStream rng(rc.seed, i);
                const double u = rng.uniform();
                const double t = -std::log1p(-u * z_trunc) / rc.gamma;
                const double x0 = draw_stationary(model, theta, rng);
                const double xt = t > 0.0
                                      ? simulate_to_time(model, theta, x0, t, rc.substeps_per_unit, rng)
                                      : x0;
                draws[i] = z_trunc / rc.gamma * std::exp(rc.gamma * t) * g1.eval(x0) * g2c.eval(xt);
            },
            rc.jobs);
        out.stderr_reliable = false;  // e^{gamma T} weights are heavy-tailed
    } else {
        const std::size_t m =
            static_cast<std::size_t>(std::max(2.0, std::ceil(rc.t_max * rc.substeps_per_unit)));
        const double h = rc.t_max / static_cast<double>(m);
        const int euler_sub = 1;  // grid spacing is the Euler step
        parallel_for(
            static_cast<std::size_t>(rc.K),
            [&](std::size_t i) {
                RngStream rng(rc.seed, i);
                double x = draw_stationary(model, theta, rng);
                const double w1 = g1.eval(x);
                double integral = 0.5 * g2c.eval(x);
                for (std::size_t j = 1; j < m; ++j) {
                    x = transition_step(model, theta, x, h, euler_sub, rng);
                    integral += g2c.eval(x);
                }
                x = transition_step(model, theta, x, h, euler_sub, rng);
                integral += 0.5 * g2c.eval(x);
                draws[i] = w1 * integral * h;
            },
            rc.jobs);
    }
    out.value = mean_of(draws);
    out.stderr_ = stderr_of(draws, out.value);
    out.bias_bound = truncation_bias_bound(model, theta, g1, g2c, rc.t_max, mode);
    return out;
}

PotentialEstimate dx_potential_term(const DiffusionModel& model, const ParamVector& theta,
                                    const SmoothFunction& f1, const SmoothFunction& g2_centered,
                                    const PotentialMCConfig& cfg) {
    // boundary probe at the quadrature truncation depth (density ratio 1e-16)
    const auto probes = density_ratio_points(model, theta, 1e-16);
    for (double x : {probes.first, probes.second}) {
        if (!model.state_space.contains(x)) continue;  // boundary itself: density mass 0 there
        const double nu = std::exp(model.invariant_logdensity(x, theta));
        if (std::abs(nu * f1.eval(x)) > 1e-12) {
            std::ostringstream msg;
            msg << "dx_potential_term: boundary term not negligible at x = " << x
                << " (|nu f1| = " << std::abs(nu * f1.eval(x)) << ")";
            throw BoundaryTermError(msg.str());
        }
    }

    auto h_eval = [&model, theta, f1](double x) {
        return f1.d1(x) + f1.eval(x) * model.invariant_logdensity_dx(x, theta);
    };
    SmoothFunction h = SmoothFunction::from_eval(h_eval, f1.growth_note);

    PotentialEstimate est = potential_pairing_mc(model, theta, h, g2_centered, cfg);
    est.value = -est.value;
    return est;
}

namespace {

// mu_theta(g) for a possibly non-polynomial product of SmoothFunctions.
double product_moment(const DiffusionModel& model, const ParamVector& theta, const SmoothFunction& u,
                      const SmoothFunction& v, MomentMode mode) {
    if (u.is_polynomial() && v.is_polynomial())
        return invariant_moment(model, theta, SmoothFunction::polynomial(poly_multiply(u.poly, v.poly)),
                                mode)
            .value;
    auto prod = SmoothFunction::from_eval([u, v](double x) { return u.eval(x) * v.eval(x); });
    return invariant_moment(model, theta, prod, mode).value;
}

SmoothFunction centered_copy(const DiffusionModel& model, const ParamVector& theta,
                             const SmoothFunction& g, MomentMode mode, double* shift) {
    const double mu = invariant_moment(model, theta, g, mode).value;
    *shift = mu;
    return g.shifted(-mu);
}

// f(x) f'(x) b^2(x): polynomial when the pieces are.
SmoothFunction ffprime_bsq(const DiffusionModel& model, const ParamVector& theta,
                           const SmoothFunction& f) {
    if (f.is_polynomial() && model.diffusion_sq_poly) {
        std::vector<double> dpoly;
        for (std::size_t k = 1; k < f.poly.size(); ++k)
            dpoly.push_back(static_cast<double>(k) * f.poly[k]);
        if (dpoly.empty()) dpoly.push_back(0.0);
        return SmoothFunction::polynomial(
            poly_multiply(poly_multiply(f.poly, dpoly), model.diffusion_sq_poly(theta)));
    }
    return SmoothFunction::from_eval([&model, theta, f](double x) {
        const double b = model.diffusion(x, theta);
        return f.eval(x) * f.d1(x) * b * b;
    });
}

} // namespace

AvarReport avar_simple(const DiffusionModel& model, const ParamVector& theta0, const PredictorSpec& spec,
                       const PotentialMCConfig& cfg, AvarMethod method, MomentMode mode) {
    const SmoothFunction& f = spec.f;
    const double mu0 = invariant_moment(model, theta0, f, mode).value;
    const SmoothFunction f_star = f.shifted(-mu0);

    auto mu_of = [&](const ParamVector& th) { return invariant_moment(model, th, f, mode).value; };
    double dmu;
    {
        // 4th-order stencil in theta
        std::vector<double> v = theta0.values;
        const double h = 1e-3 * (1.0 + std::abs(theta0[0]));
        auto at = [&](double dx) {
            v[0] = theta0[0] + dx;
            return mu_of(theta0.with_values(v));
        };
        dmu = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
    }
    if (std::abs(dmu) < 1e-10)
        throw IdentifiabilityError("avar_simple: d_theta mu_theta(f) vanishes at theta0");

    AvarReport report;
    report.dim = 1;
    report.seed = cfg.seed;

    PotentialEstimate pairing;
    if (method == AvarMethod::closed_form) {
        const SmoothFunction u = potential_closed_form_ou(model, theta0, f_star);
        pairing.value = product_moment(model, theta0, f_star, u, mode);
        pairing.stderr_ = 0.0;
        pairing.K_used = 0;
        report.method_notes = "closed-form potential pairing";
    } else {
        pairing = potential_pairing_mc(model, theta0, f_star, f_star, cfg);
        report.method_notes = "Monte Carlo potential pairing";
    }
    report.components.emplace_back("mu0_fstar_U_fstar", pairing);
    report.scalar = 2.0 * pairing.value / (dmu * dmu);

    if (model.closed_form && model.closed_form->spectral_gap) {
        const double lambda = model.closed_form->spectral_gap(theta0);
        const double var0 = invariant_variance_of(model, theta0, f, mode);
        report.bound = 2.0 * var0 / (lambda * dmu * dmu);
        const double rel = pairing.value != 0.0 ? std::abs(pairing.stderr_ / pairing.value) : 0.0;
        if (report.scalar > *report.bound * (1.0 + 3.0 * rel) + 1e-12) {
            std::ostringstream msg;
            msg << "avar_simple: AVAR " << report.scalar << " exceeds the spectral-gap bound "
                << *report.bound;
            throw AssemblyError(msg.str());
        }
    }
    if (!(report.scalar > 0.0))
        throw AssemblyError("avar_simple: assembled variance is not positive");
    return report;
}

AvarReport avar_onelag(const DiffusionModel& model, const ParamVector& theta0, const PredictorSpec& spec,
                       const PotentialMCConfig& cfg, MomentMode mode) {
    if (spec.q != 1) throw ConfigError("avar_onelag requires q = 1");
    const SmoothFunction& f = spec.f;

    const double mu0 = invariant_moment(model, theta0, f, mode).value;
    const double kf0 = kf_coefficient(model, theta0, f, mode);
    // f1* = K_f(theta0) [mu0(f) - f]; centered by construction
    const SmoothFunction f1_star = f.scaled(-kf0).shifted(kf0 * mu0);

    // f2* = f [L0 f + f1*], the delta-coefficient of the compensator of the
    // second estimating-function coordinate; mu0(f2*) = 0 analytically since
    // mu0(f f1*) = -mu0(f L0 f). The centering below only removes numerical
    // residue.
    const SmoothFunction lf = generator_function(model, theta0, f);
    SmoothFunction f2_raw;
    if (f.is_polynomial() && lf.is_polynomial() && f1_star.is_polynomial()) {
        std::vector<double> sum_poly(std::max(lf.poly.size(), f1_star.poly.size()), 0.0);
        for (std::size_t k = 0; k < lf.poly.size(); ++k) sum_poly[k] += lf.poly[k];
        for (std::size_t k = 0; k < f1_star.poly.size(); ++k) sum_poly[k] += f1_star.poly[k];
        f2_raw = SmoothFunction::polynomial(poly_multiply(f.poly, sum_poly));
    } else {
        f2_raw = SmoothFunction::from_eval(
            [f, lf, f1_star](double x) { return f.eval(x) * (lf.eval(x) + f1_star.eval(x)); });
    }
    double f2_shift = 0.0;
    const SmoothFunction f2_star = centered_copy(model, theta0, f2_raw, mode, &f2_shift);
    if (std::abs(f2_shift) > 1e-6)
        std::cerr << "[pbef] avar_onelag: f2* centered by subtracting " << f2_shift << "\n";

    // all pairings share cfg.seed (common random numbers)
    const PotentialEstimate v11_pair = potential_pairing_mc(model, theta0, f1_star, f1_star, cfg);
    const PotentialEstimate v12_a = potential_pairing_mc(model, theta0, f1_star, f2_star, cfg);
    const PotentialEstimate v12_b = potential_pairing_mc(model, theta0, f2_star, f1_star, cfg);
    const SmoothFunction ffb2 = ffprime_bsq(model, theta0, f);
    const PotentialEstimate v12_dx = dx_potential_term(model, theta0, ffb2, f1_star, cfg);
    const PotentialEstimate v22_pair = potential_pairing_mc(model, theta0, f2_star, f2_star, cfg);
    const PotentialEstimate v22_dx = dx_potential_term(model, theta0, ffb2, f2_star, cfg);
    const double ffb_sq = [&] {
        if (f.is_polynomial() && model.diffusion_sq_poly) {
            std::vector<double> dpoly;
            for (std::size_t k = 1; k < f.poly.size(); ++k)
                dpoly.push_back(static_cast<double>(k) * f.poly[k]);
            if (dpoly.empty()) dpoly.push_back(0.0);
            auto ffp = poly_multiply(f.poly, dpoly);
            auto sq = poly_multiply(ffp, ffp);
            return invariant_moment(model, theta0,
                                    SmoothFunction::polynomial(
                                        poly_multiply(sq, model.diffusion_sq_poly(theta0))),
                                    mode)
                .value;
        }
        auto fn = SmoothFunction::from_eval([&model, theta0, f](double x) {
            const double b = model.diffusion(x, theta0);
            const double v = f.eval(x) * f.d1(x) * b;
            return v * v;
        });
        return invariant_moment(model, theta0, fn, mode).value;
    }();

    Eigen::Matrix2d v;
    v(0, 0) = 2.0 * v11_pair.value;
    v(0, 1) = v(1, 0) = v12_a.value + v12_b.value + v12_dx.value;
    v(1, 1) = 2.0 * v22_pair.value + ffb_sq + 2.0 * v22_dx.value;

    const Eigen::Matrix2d w = w_limit(model, theta0, theta0, spec, mode);
    const double wdet = w.determinant();
    if (std::abs(wdet) < 1e-12 * (1.0 + w.norm() * w.norm()))
        throw NearSingularError("avar_onelag: W(theta0) is numerically singular");
    const Eigen::Matrix2d winv = w.inverse();
    Eigen::Matrix2d sandwich = winv * v * winv.transpose();
    sandwich = 0.5 * (sandwich + sandwich.transpose());

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(sandwich);
    if (eig.eigenvalues().minCoeff() < -1e-10 * sandwich.trace()) {
        std::ostringstream msg;
        msg << "avar_onelag: sandwich not PSD (eigenvalues " << eig.eigenvalues().transpose()
            << "); components: V11_pair = " << v11_pair.value << ", V12 = " << v(0, 1)
            << ", V22_pair = " << v22_pair.value << ", mu0([ff'b]^2) = " << ffb_sq
            << ", V22_dx = " << v22_dx.value;
        throw AssemblyError(msg.str());
    }

    AvarReport report;
    report.dim = 2;
    report.matrix = sandwich;
    report.w_matrix = w;
    report.seed = cfg.seed;
    report.components.emplace_back("V11_pair_f1_f1", v11_pair);
    report.components.emplace_back("V12_pair_f1_f2", v12_a);
    report.components.emplace_back("V12_pair_f2_f1", v12_b);
    report.components.emplace_back("V12_dx_ffb2_f1", v12_dx);
    report.components.emplace_back("V22_pair_f2_f2", v22_pair);
    report.components.emplace_back("V22_dx_ffb2_f2", v22_dx);
    PotentialEstimate ffb_est;
    ffb_est.value = ffb_sq;
    report.components.emplace_back("mu0_ffb_squared", ffb_est);
    std::ostringstream notes;
    notes << "common random numbers across pairings (seed " << cfg.seed << "); f2* centering shift "
          << f2_shift;
    report.method_notes = notes.str();
    return report;
}

CltVarianceResult clt_variance(const DiffusionModel& model, const ParamVector& theta0,
                               const SmoothFunction& g, const PotentialMCConfig& cfg, MomentMode mode) {
    CltVarianceResult out;
    const SmoothFunction gc = centered_copy(model, theta0, g, mode, &out.centering_shift);
    if (std::abs(out.centering_shift) > 1e-6 * (1.0 + invariant_l2_norm(model, theta0, g, mode)))
        std::cerr << "[pbef] clt_variance: g centered by subtracting " << out.centering_shift << "\n";

    out.pairing_form = potential_pairing_mc(model, theta0, gc, gc, cfg);
    out.pairing_form.value *= 2.0;
    out.pairing_form.stderr_ *= 2.0;

    try {
        const SmoothFunction u = potential_closed_form_ou(model, theta0, gc);
        auto integrand = SmoothFunction::from_eval([&model, theta0, u](double x) {
            const double b = model.diffusion(x, theta0);
            const double v = u.d1(x) * b;
            return v * v;
        });
        if (u.is_polynomial() && model.diffusion_sq_poly) {
            std::vector<double> du;
            for (std::size_t k = 1; k < u.poly.size(); ++k)
                du.push_back(static_cast<double>(k) * u.poly[k]);
            if (du.empty()) du.push_back(0.0);
            out.quadratic_form =
                invariant_moment(model, theta0,
                                 SmoothFunction::polynomial(poly_multiply(
                                     poly_multiply(du, du), model.diffusion_sq_poly(theta0))),
                                 mode)
                    .value;
        } else {
            out.quadratic_form = invariant_moment(model, theta0, integrand, mode).value;
        }
        out.discrepancy = std::abs(*out.quadratic_form - out.pairing_form.value);
    } catch (const NotAvailableError&) {
        // no closed-form potential for this g; pairing form only
    }
    return out;
}

void write_components_csv(const AvarReport& report, std::ostream& os) {
    os << "component,value,stderr,method\n";
    for (const auto& [name, est] : report.components) {
        const char* method = est.K_used == 0 ? "closed_form"
                             : est.method == PotentialEstimator::exp_time ? "exp_time"
                                                                          : "grid_quadrature";
        os << name << ',' << format_double(est.value) << ',' << format_double(est.stderr_) << ','
           << method << '\n';
    }
}

std::string report_to_json(const AvarReport& report) {
    nlohmann::json j;
    j["dim"] = report.dim;
    if (report.dim == 1) {
        j["avar"] = report.scalar;
    } else {
        j["avar"] = {{report.matrix(0, 0), report.matrix(0, 1)},
                     {report.matrix(1, 0), report.matrix(1, 1)}};
    }
    if (report.w_matrix) {
        const auto& w = *report.w_matrix;
        j["w_matrix"] = {{w(0, 0), w(0, 1)}, {w(1, 0), w(1, 1)}};
    }
    if (report.bound) j["bound"] = *report.bound;
    j["method_notes"] = report.method_notes;
    j["seed"] = report.seed;
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& [name, est] : report.components) {
        nlohmann::json c;
        c["name"] = name;
        c["value"] = est.value;
        c["stderr"] = est.stderr_;
        c["method"] = est.K_used == 0 ? "closed_form"
                      : est.method == PotentialEstimator::exp_time ? "exp_time"
                                                                   : "grid_quadrature";
        c["K"] = est.K_used;
        c["stderr_reliable"] = est.stderr_reliable;
        if (est.bias_bound) c["bias_bound"] = *est.bias_bound;
        if (est.centering_shift != 0.0) c["centering_shift"] = est.centering_shift;
        comps.push_back(c);
    }
    j["components"] = comps;
    return j.dump(2);
}

} // namespace pbef
