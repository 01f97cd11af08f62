#include "pbef/estimator.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/toms748_solve.hpp>
#include <cmath>
#include <sstream>

namespace pbef {

namespace {

// Partial derivative in theta_j of a scalar function of theta; central
// stencil of the requested order, step clipped so probes stay in bounds.
double theta_partial(const std::function<double(const ParamVector&)>& s, const ParamVector& theta,
                     std::size_t j, double rel_h, int order) {
    double h = rel_h * (1.0 + std::abs(theta[j]));
    const Interval b = theta.bounds[j];
    const double reach = (order == 4) ? 2.0 : 1.0;
    if (std::isfinite(b.lo)) h = std::min(h, 0.4 * (theta[j] - b.lo) / reach);
    if (std::isfinite(b.hi)) h = std::min(h, 0.4 * (b.hi - theta[j]) / reach);
    if (!(h > 0.0)) throw DomainError("theta too close to its bound for a finite-difference probe");

    auto at = [&](double dx) {
        std::vector<double> v = theta.values;
        v[j] += dx;
        return s(theta.with_values(std::move(v)));
    };
    if (order == 4)
        return (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
    return (at(h) - at(-h)) / (2.0 * h);
}

double mu_f_Lf(const DiffusionModel& model, const ParamVector& theta, const SmoothFunction& f,
               MomentMode mode) {
    const SmoothFunction lf = generator_function(model, theta, f);
    if (f.is_polynomial() && lf.is_polynomial())
        return invariant_moment(model, theta, SmoothFunction::polynomial(poly_multiply(f.poly, lf.poly)),
                                mode)
            .value;
    auto prod = SmoothFunction::from_eval([f, lf](double x) { return f.eval(x) * lf.eval(x); });
    return invariant_moment(model, theta, prod, mode).value;
}

bool is_identity_poly(const SmoothFunction& f) {
    return f.poly.size() == 2 && f.poly[0] == 0.0 && f.poly[1] == 1.0;
}

} // namespace

double lag_moment(const DiffusionModel& model, const ParamVector& theta, const SmoothFunction& f,
                  double lag, MomentMode mode, const LagMomentOptions& opts) {
    if (!(lag > 0.0)) throw DomainError("lag_moment: lag must be positive");
    if (mode == MomentMode::prefer_closed_form && is_identity_poly(f) && model.closed_form &&
        model.closed_form->lag_moment_identity)
        return model.closed_form->lag_moment_identity(lag, theta);

    if (model.exact_transition) {
        // E[f(X_0) f(X_lag)] = mu_theta( f(x) * P_lag f(x) ), inner integral
        // against the Gaussian transition kernel.
        const auto quad = build_invariant_quadrature(model, theta);
        auto inner = [&](double x) {
            const double m = model.exact_transition->mean(x, lag, theta);
            const double s = model.exact_transition->sd(x, lag, theta);
            if (!(s > 0.0)) return f.eval(m);
            auto integrand = [&](double y) {
                const double z = (y - m) / s;
                return f.eval(y) * std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI));
            };
            double err = 0.0;
            return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                integrand, m - 10.0 * s, m + 10.0 * s, 8, 1e-12, &err);
        };
        return quad.integrate([&](double x) { return f.eval(x) * inner(x); }).value;
    }

    // Monte Carlo over stationary pairs.
    RngStream rng(opts.seed, 0);
    double sum = 0.0;
    for (std::size_t r = 0; r < opts.mc_reps; ++r) {
        const double x0 = draw_stationary(model, theta, rng);
        const double x1 = simulate_to_time(model, theta, x0, lag, opts.substeps_per_unit, rng);
        sum += f.eval(x0) * f.eval(x1);
    }
    return sum / static_cast<double>(opts.mc_reps);
}

ProjectionCoefficients projection_coefficients(const DiffusionModel& model, const ParamVector& theta,
                                               const PredictorSpec& spec, double delta, CoeffMethod method,
                                               MomentMode mode, const LagMomentOptions& opts) {
    if (!(delta > 0.0)) throw DomainError("projection_coefficients: delta must be positive");
    if (spec.q < 0) throw ConfigError("projection_coefficients: q must be >= 0");

    ProjectionCoefficients out;
    out.method = method;
    out.delta = delta;

    if (spec.q == 0) {
        out.a = Eigen::VectorXd::Constant(1, invariant_moment(model, theta, spec.f, mode).value);
        return out;
    }

    if (method == CoeffMethod::expansion_order1) {
        if (spec.q != 1)
            throw NotAvailableError("expansion_order1 coefficients are defined for q = 1 only");
        const double kf = kf_coefficient(model, theta, spec.f, mode);
        const double mu = invariant_moment(model, theta, spec.f, mode).value;
        out.a = Eigen::VectorXd(2);
        out.a << -delta * kf * mu, 1.0 + delta * kf;
        return out;
    }

    const double mu = invariant_moment(model, theta, spec.f, mode).value;
    if (spec.q == 1) {
        const double var = invariant_variance_of(model, theta, spec.f, mode);
        if (!(var > 1e-12 * (1.0 + mu * mu)))
            throw DegeneratePredictorError("projection_coefficients: Var f(X_0) is numerically zero");
        const double r1 = lag_moment(model, theta, spec.f, delta, mode, opts);
        const double a1 = (r1 - mu * mu) / var;
        out.a = Eigen::VectorXd(2);
        out.a << mu * (1.0 - a1), a1;
        return out;
    }

    // q >= 2: solve the full normal equations from the lag moments (scaffold).
    const int q = spec.q;
    const double r0 = invariant_moment(
                          model, theta,
                          spec.f.is_polynomial()
                              ? SmoothFunction::polynomial(poly_multiply(spec.f.poly, spec.f.poly))
                              : SmoothFunction::from_eval([spec](double x) {
                                    const double v = spec.f.eval(x);
                                    return v * v;
                                }),
                          mode)
                          .value;
    std::vector<double> r(static_cast<std::size_t>(q) + 1);
    r[0] = r0;
    for (int k = 1; k <= q; ++k)
        r[static_cast<std::size_t>(k)] = lag_moment(model, theta, spec.f, k * delta, mode, opts);

    Eigen::MatrixXd gram(q + 1, q + 1);
    Eigen::VectorXd rhs(q + 1);
    gram(0, 0) = 1.0;
    rhs(0) = mu;
    for (int j = 1; j <= q; ++j) {
        gram(0, j) = gram(j, 0) = mu;
        rhs(j) = r[static_cast<std::size_t>(j)];
        for (int k = 1; k <= q; ++k) gram(j, k) = r[static_cast<std::size_t>(std::abs(j - k))];
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success)
        throw NumericalError("projection_coefficients: normal equations are singular");
    out.a = ldlt.solve(rhs);
    return out;
}

EstimatingFunctionValue gfun_simple(const DiffusionModel& model, const ParamVector& theta,
                                    const SamplePath& path, const PredictorSpec& spec, Normalization norm,
                                    MomentMode mode) {
    if (model.dim_theta != 1) throw ConfigError("gfun_simple requires a one-dimensional parameter");
    if (spec.q != 0) throw ConfigError("gfun_simple requires q = 0");
    const std::size_t n = path.scheme.n;
    if (n < 1) throw DomainError("gfun_simple: need at least one observation interval");

    const double mu = invariant_moment(model, theta, spec.f, mode).value;
    double sum = 0.0;
    for (std::size_t i = 1; i <= n; ++i) sum += spec.f.eval(path.values[i]) - mu;

    auto mu_of = [&](const ParamVector& th) { return invariant_moment(model, th, spec.f, mode).value; };
    const double dmu = theta_partial(mu_of, theta, 0, 1e-5, 2);

    EstimatingFunctionValue out;
    out.value = Eigen::VectorXd::Constant(1, sum);
    out.jacobian = Eigen::MatrixXd::Constant(1, 1, -static_cast<double>(n) * dmu);
    out.n_terms = n;
    out.normalization = norm;
    if (norm == Normalization::per_nDelta) {
        const double c = 1.0 / (static_cast<double>(n) * path.scheme.delta);
        out.value *= c;
        out.jacobian *= c;
    }
    return out;
}

EstimatingFunctionValue gfun_onelag(const DiffusionModel& model, const ParamVector& theta,
                                    const SamplePath& path, const PredictorSpec& spec,
                                    CoeffMethod coeff_method, Normalization norm, MomentMode mode,
                                    const LagMomentOptions& opts) {
    if (model.dim_theta != 2) throw ConfigError("gfun_onelag requires a two-dimensional parameter");
    if (spec.q != 1) throw ConfigError("gfun_onelag requires q = 1");
    const std::size_t n = path.scheme.n;
    if (n < 2) throw DomainError("gfun_onelag: need n >= 2");
    const double delta = path.scheme.delta;

    const auto coeff = projection_coefficients(model, theta, spec, delta, coeff_method, mode, opts);
    const double a0 = coeff.a(0), a1 = coeff.a(1);

    double g0 = 0.0, g1 = 0.0;        // the two coordinates of G_n
    double sum_f = 0.0, sum_f2 = 0.0; // over f(X_{t_{i-1}}), i = 1..n
    double f_prev = spec.f.eval(path.values[0]);
    for (std::size_t i = 1; i <= n; ++i) {
        const double f_cur = spec.f.eval(path.values[i]);
        const double resid = f_cur - a0 - a1 * f_prev;
        g0 += resid;
        g1 += f_prev * resid;
        sum_f += f_prev;
        sum_f2 += f_prev * f_prev;
        f_prev = f_cur;
    }

    // d_theta G = -(sum Z Z^T) d_theta a
    Eigen::Matrix2d zz;
    zz << static_cast<double>(n), sum_f, sum_f, sum_f2;
    Eigen::Matrix2d da;  // rows: (a0, a1), cols: theta_j
    for (std::size_t j = 0; j < 2; ++j) {
        auto a_of = [&](const ParamVector& th) {
            return projection_coefficients(model, th, spec, delta, coeff_method, mode, opts);
        };
        auto a0_of = [&](const ParamVector& th) { return a_of(th).a(0); };
        auto a1_of = [&](const ParamVector& th) { return a_of(th).a(1); };
        da(0, static_cast<Eigen::Index>(j)) = theta_partial(a0_of, theta, j, 1e-5, 2);
        da(1, static_cast<Eigen::Index>(j)) = theta_partial(a1_of, theta, j, 1e-5, 2);
    }

    EstimatingFunctionValue out;
    out.value = Eigen::Vector2d(g0, g1);
    out.jacobian = -zz * da;
    out.n_terms = n;
    out.normalization = norm;
    if (norm == Normalization::per_nDelta) {
        const double c = 1.0 / (static_cast<double>(n) * delta);
        out.value *= c;
        out.jacobian *= c;
    }
    return out;
}

EstimateResult newton_solve(const std::function<EstimatingFunctionValue(const ParamVector&)>& gfun,
                            const ParamVector& theta_init, const SolveOptions& options) {
    ParamVector theta = theta_init.projected(options.bounds_margin);
    EstimatingFunctionValue g = gfun(theta);
    double res = g.value.norm();
    const double scale = std::max(1.0, res);

    EstimateResult result;
    result.theta_hat = theta;
    result.residual_norm = res;

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(g.jacobian, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const double smin = svd.singularValues().minCoeff();
        const double smax = svd.singularValues().maxCoeff();
        result.jacobian_cond = (smin > 0.0) ? smax / smin : std::numeric_limits<double>::infinity();
        if (!(smin > 0.0) || result.jacobian_cond > options.cond_limit) {
            std::ostringstream msg;
            msg << "newton_solve: Jacobian near singular (condition number " << result.jacobian_cond
                << ") at iteration " << iter;
            throw NearSingularError(msg.str());
        }
        if (res < options.residual_tol * scale) {
            result.converged = true;
            break;
        }

        const Eigen::VectorXd step = svd.solve(g.value);
        double s = 1.0;
        bool accepted = false;
        ParamVector theta_try = theta;
        EstimatingFunctionValue g_try;
        double res_try = res;
        for (int halving = 0; halving < 40; ++halving) {
            std::vector<double> v = theta.values;
            for (std::size_t j = 0; j < v.size(); ++j) v[j] -= s * step(static_cast<Eigen::Index>(j));
            ParamVector cand;
            cand.values = std::move(v);
            cand.bounds = theta.bounds;
            cand = cand.projected(options.bounds_margin);
            bool evaluated = true;
            try {
                g_try = gfun(cand);
                res_try = g_try.value.norm();
            } catch (const Error&) {
                evaluated = false;  // candidate not evaluable; backtrack
            }
            if (evaluated && std::isfinite(res_try) && res_try < res * (1.0 - 1e-4 * s)) {
                theta_try = cand;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        result.n_iterations = iter + 1;
        if (!accepted) break;  // stalled; report diagnostics below

        const double step_norm = (s * step).norm();
        theta = theta_try;
        g = g_try;
        res = res_try;
        result.theta_hat = theta;
        result.residual_norm = res;
        double theta_norm = 0.0;
        for (double v : theta.values) theta_norm += v * v;
        if (step_norm < options.step_tol * (1.0 + std::sqrt(theta_norm))) {
            result.converged = true;
            break;
        }
    }
    if (res < options.residual_tol * scale) result.converged = true;
    result.theta_hat = theta;
    result.residual_norm = res;
    return result;
}

EstimateResult solve_simple(const DiffusionModel& model, const SamplePath& path, const PredictorSpec& spec,
                            const ParamVector& theta_init, const ParamVector& theta_star,
                            const SolveOptions& options) {
    if (model.dim_theta != 1) throw ConfigError("solve_simple requires a one-dimensional parameter");
    const std::size_t n = path.scheme.n;
    if (n < 1) throw DomainError("solve_simple: need at least one observation interval");

    double target = 0.0;
    for (std::size_t i = 1; i <= n; ++i) target += spec.f.eval(path.values[i]);
    target /= static_cast<double>(n);

    auto kappa = [&](double v) {
        return invariant_moment(model, theta_init.with_values({v}), spec.f, options.moment_mode).value;
    };

    // probe window: the bounds, cut to a finite span around theta_init
    const Interval b = theta_init.bounds[0];
    double lo = b.lo, hi = b.hi;
    const double window = 50.0 * (1.0 + std::abs(theta_init[0]));
    if (!std::isfinite(lo)) lo = theta_init[0] - window;
    if (!std::isfinite(hi)) hi = theta_init[0] + window;
    const double margin = 1e-8 * (1.0 + hi - lo);
    lo += margin;
    hi -= margin;

    const int grid_n = std::max(5, options.probe_grid);
    std::vector<double> grid(static_cast<std::size_t>(grid_n)), kv(static_cast<std::size_t>(grid_n));
    for (int k = 0; k < grid_n; ++k) {
        grid[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / (grid_n - 1);
        kv[static_cast<std::size_t>(k)] = kappa(grid[static_cast<std::size_t>(k)]);
    }
    int sign = 0;
    for (int k = 1; k < grid_n; ++k) {
        const double d = kv[static_cast<std::size_t>(k)] - kv[static_cast<std::size_t>(k - 1)];
        const int s = (d > 0.0) ? 1 : (d < 0.0 ? -1 : 0);
        if (s == 0 || (sign != 0 && s != sign))
            throw IdentifiabilityError("solve_simple: theta -> mu_theta(f) is not strictly monotone "
                                       "on the probe grid");
        sign = s;
    }

    EstimateResult result;
    const double kmin = std::min(kv.front(), kv.back());
    const double kmax = std::max(kv.front(), kv.back());
    if (target < kmin || target > kmax) {
        result.theta_hat = theta_star;
        result.fallback_used = true;
        result.converged = false;
        result.residual_norm = std::abs(kappa(theta_star[0]) - target);
        result.jacobian_cond = 1.0;
        return result;
    }

    // bracket on the grid, then refine
    std::size_t cell = 0;
    for (int k = 1; k < grid_n; ++k) {
        const double f0 = kv[static_cast<std::size_t>(k - 1)] - target;
        const double f1 = kv[static_cast<std::size_t>(k)] - target;
        if (f0 == 0.0 || f0 * f1 <= 0.0) {
            cell = static_cast<std::size_t>(k - 1);
            break;
        }
    }
    auto fn = [&](double v) { return kappa(v) - target; };
    boost::math::tools::eps_tolerance<double> tol(50);
    std::uintmax_t max_iter = 200;
    auto bracket =
        boost::math::tools::toms748_solve(fn, grid[cell], grid[cell + 1], fn(grid[cell]),
                                          fn(grid[cell + 1]), tol, max_iter);
    const double root = 0.5 * (bracket.first + bracket.second);

    result.theta_hat = theta_init.with_values({root});
    result.converged = true;
    result.n_iterations = static_cast<int>(max_iter);
    result.residual_norm = std::abs(fn(root));
    result.jacobian_cond = 1.0;
    return result;
}

EstimateResult solve_onelag(const DiffusionModel& model, const SamplePath& path, const PredictorSpec& spec,
                            const ParamVector& theta_init, const SolveOptions& options) {
    if (model.dim_theta != 2) throw ConfigError("solve_onelag requires a two-dimensional parameter");
    auto gfun = [&](const ParamVector& th) {
        return gfun_onelag(model, th, path, spec, options.coeff_method, Normalization::per_nDelta,
                           options.moment_mode, options.lag_opts);
    };

    std::vector<ParamVector> starts{theta_init};
    if (options.multistart)
        for (const auto& v : options.extra_starts) starts.push_back(theta_init.with_values(v));

    EstimateResult best;
    bool have_best = false;
    std::exception_ptr last_error;
    for (const auto& start : starts) {
        EstimateResult r;
        try {
            r = newton_solve(gfun, start, options);
        } catch (const Error&) {
            if (starts.size() == 1) throw;  // single start: surface the failure
            last_error = std::current_exception();
            continue;
        }
        if (r.converged) return r;
        if (!have_best || r.residual_norm < best.residual_norm) {
            best = r;
            have_best = true;
        }
    }
    if (!have_best && last_error && !options.theta_star) std::rethrow_exception(last_error);
    if (options.theta_star) {
        best.theta_hat = theta_init.with_values(*options.theta_star);
        best.fallback_used = true;
        best.converged = false;
    }
    return best;
}

Eigen::Vector2d gamma_limit(const DiffusionModel& model, const ParamVector& theta0, const ParamVector& theta,
                            const PredictorSpec& spec, MomentMode mode) {
    if (spec.q != 1) throw ConfigError("gamma_limit is defined for q = 1");
    const SmoothFunction& f = spec.f;
    const double kf = kf_coefficient(model, theta, f, mode);
    const double mu_theta_f = invariant_moment(model, theta, f, mode).value;
    const double mu0_f = invariant_moment(model, theta0, f, mode).value;
    const double mu0_f2 =
        f.is_polynomial()
            ? invariant_moment(model, theta0, SmoothFunction::polynomial(poly_multiply(f.poly, f.poly)),
                               mode)
                  .value
            : invariant_moment(model, theta0, SmoothFunction::from_eval([f](double x) {
                                   const double v = f.eval(x);
                                   return v * v;
                               }),
                               mode)
                  .value;
    const double mu0_flf = mu_f_Lf(model, theta0, f, mode);
    Eigen::Vector2d out;
    out << kf * (mu_theta_f - mu0_f), mu0_flf - kf * (mu0_f2 - mu0_f * mu_theta_f);
    return out;
}

Eigen::Matrix2d w_limit(const DiffusionModel& model, const ParamVector& theta0, const ParamVector& theta,
                        const PredictorSpec& spec, MomentMode mode) {
    if (spec.q != 1) throw ConfigError("w_limit is defined for q = 1");
    const SmoothFunction& f = spec.f;
    const double mu0_f = invariant_moment(model, theta0, f, mode).value;
    const double mu0_f2 =
        f.is_polynomial()
            ? invariant_moment(model, theta0, SmoothFunction::polynomial(poly_multiply(f.poly, f.poly)),
                               mode)
                  .value
            : invariant_moment(model, theta0, SmoothFunction::from_eval([f](double x) {
                                   const double v = f.eval(x);
                                   return v * v;
                               }),
                               mode)
                  .value;
    Eigen::Matrix2d z;
    z << 1.0, mu0_f, mu0_f, mu0_f2;

    auto s1 = [&](const ParamVector& th) {
        return kf_coefficient(model, th, f, mode) * invariant_moment(model, th, f, mode).value;
    };
    auto s2 = [&](const ParamVector& th) { return kf_coefficient(model, th, f, mode); };
    Eigen::Matrix2d a;
    for (std::size_t j = 0; j < 2; ++j) {
        a(0, static_cast<Eigen::Index>(j)) = theta_partial(s1, theta, j, 1e-3, 4);
        a(1, static_cast<Eigen::Index>(j)) = -theta_partial(s2, theta, j, 1e-3, 4);
    }
    return z * a;
}

EstimatingFunctionValue assemble_multi(const DiffusionModel& model, const ParamVector& theta,
                                       const SamplePath& path, const std::vector<PredictorSpec>& specs,
                                       const Eigen::MatrixXd& A, CoeffMethod coeff_method,
                                       Normalization norm, MomentMode mode, const LagMomentOptions& opts) {
    if (specs.empty()) throw ConfigError("assemble_multi: need at least one predictor");
    Eigen::Index dbar = 0;
    int qmax = 0;
    for (const auto& s : specs) {
        if (s.q < 0) throw ConfigError("assemble_multi: q must be >= 0");
        dbar += s.q + 1;
        qmax = std::max(qmax, s.q);
    }
    if (A.cols() != dbar || A.rows() != model.dim_theta) {
        std::ostringstream msg;
        msg << "assemble_multi: coefficient matrix must be " << model.dim_theta << " x " << dbar
            << ", got " << A.rows() << " x " << A.cols();
        throw ConfigError(msg.str());
    }
    const std::size_t n = path.scheme.n;
    const std::size_t first = std::max<std::size_t>(static_cast<std::size_t>(qmax), 1);
    if (n < first) throw DomainError("assemble_multi: path too short for the requested lags");
    const double delta = path.scheme.delta;

    std::vector<ProjectionCoefficients> coeffs;
    coeffs.reserve(specs.size());
    for (const auto& s : specs)
        coeffs.push_back(projection_coefficients(model, theta, s, delta, coeff_method, mode, opts));

    Eigen::VectorXd h = Eigen::VectorXd::Zero(dbar);
    std::vector<Eigen::MatrixXd> gram;  // per predictor, (q_j+1) x (q_j+1)
    for (const auto& s : specs) gram.emplace_back(Eigen::MatrixXd::Zero(s.q + 1, s.q + 1));

    for (std::size_t i = first; i <= n; ++i) {
        Eigen::Index offset = 0;
        for (std::size_t j = 0; j < specs.size(); ++j) {
            const auto& s = specs[j];
            Eigen::VectorXd z(s.q + 1);
            z(0) = 1.0;
            for (int k = 1; k <= s.q; ++k)
                z(k) = s.f.eval(path.values[i - static_cast<std::size_t>(k)]);
            const double resid = s.f.eval(path.values[i]) - coeffs[j].a.dot(z);
            h.segment(offset, s.q + 1) += z * resid;
            gram[j] += z * z.transpose();
            offset += s.q + 1;
        }
    }

    // d_theta of the stacked sum: per predictor, -(sum Z Z^T) d_theta a_j
    Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(dbar, model.dim_theta);
    Eigen::Index offset = 0;
    for (std::size_t j = 0; j < specs.size(); ++j) {
        const auto& s = specs[j];
        Eigen::MatrixXd da(s.q + 1, model.dim_theta);
        for (int c = 0; c < model.dim_theta; ++c) {
            for (int rrow = 0; rrow <= s.q; ++rrow) {
                auto a_of = [&](const ParamVector& th) {
                    return projection_coefficients(model, th, s, delta, coeff_method, mode, opts)
                        .a(rrow);
                };
                da(rrow, c) = theta_partial(a_of, theta, static_cast<std::size_t>(c), 1e-5, 2);
            }
        }
        dh.block(offset, 0, s.q + 1, model.dim_theta) = -gram[j] * da;
        offset += s.q + 1;
    }

    EstimatingFunctionValue out;
    out.value = A * h;
    out.jacobian = A * dh;
    out.n_terms = n - first + 1;
    out.normalization = norm;
    out.scaffold = (specs.size() > 1) || (qmax >= 2);
    if (norm == Normalization::per_nDelta) {
        const double c = 1.0 / (static_cast<double>(n) * delta);
        out.value *= c;
        out.jacobian *= c;
    }
    return out;
}

} // namespace pbef
