#include "pbef/model.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <sstream>

namespace pbef {

namespace {

constexpr double kTailDensityRatio = 1e-16;  // truncate where nu < 1e-16 * nu(mode)

struct OuCirAccess {
    std::array<double, 3> base{};  // kappa, eta, xi
    std::array<int, 3> free_slot{-1, -1, -1};

    std::array<double, 3> resolve(const ParamVector& theta) const {
        std::array<double, 3> p = base;
        for (int i = 0; i < 3; ++i)
            if (free_slot[i] >= 0) p[static_cast<std::size_t>(i)] = theta[static_cast<std::size_t>(free_slot[i])];
        return p;
    }
};

const std::array<std::string, 3> kParamNames = {"kappa", "eta", "xi"};

OuCirAccess build_access(const FamilyConfig& cfg) {
    OuCirAccess acc;
    for (int i = 0; i < 3; ++i) {
        auto it = cfg.params.find(kParamNames[static_cast<std::size_t>(i)]);
        if (it == cfg.params.end())
            throw ConfigError("model family '" + cfg.family + "' requires parameter '" +
                              kParamNames[static_cast<std::size_t>(i)] + "'");
        acc.base[static_cast<std::size_t>(i)] = it->second;
    }
    std::vector<std::string> free = cfg.free;
    if (free.empty()) free = {kParamNames.begin(), kParamNames.end()};
    for (std::size_t j = 0; j < free.size(); ++j) {
        auto it = std::find(kParamNames.begin(), kParamNames.end(), free[j]);
        if (it == kParamNames.end()) throw ConfigError("unknown free parameter '" + free[j] + "'");
        acc.free_slot[static_cast<std::size_t>(it - kParamNames.begin())] = static_cast<int>(j);
    }
    return acc;
}

std::vector<Interval> resolve_bounds(const FamilyConfig& cfg, const std::map<std::string, Interval>& defaults) {
    std::vector<std::string> free = cfg.free;
    if (free.empty()) free = {kParamNames.begin(), kParamNames.end()};
    std::vector<Interval> out;
    for (const auto& name : free) {
        auto user = cfg.bounds.find(name);
        if (user != cfg.bounds.end()) out.push_back(user->second);
        else out.push_back(defaults.at(name));
    }
    return out;
}

double golden_maximize(const std::function<double(double)>& f, double a, double b, int iters = 200) {
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int k = 0; k < iters && (b - a) > 1e-13 * (1.0 + std::abs(a) + std::abs(b)); ++k) {
        if (f1 < f2) {
            a = x1; x1 = x2; f1 = f2;
            x2 = a + phi * (b - a); f2 = f(x2);
        } else {
            b = x2; x2 = x1; f2 = f1;
            x1 = b - phi * (b - a); f1 = f(x1);
        }
    }
    return 0.5 * (a + b);
}

} // namespace

void DiffusionModel::validate(const ParamVector& theta) const {
    if (static_cast<int>(theta.dim()) != dim_theta)
        throw DomainError("theta dimension " + std::to_string(theta.dim()) + " != model dim_theta " +
                          std::to_string(dim_theta));
    if (!theta.in_bounds()) throw DomainError("theta outside its bounds");
    if (validate_theta) validate_theta(theta);

    // positivity probe for b on a crude interior grid
    const auto quad = build_invariant_quadrature(*this, theta);
    for (int i = 1; i < 64; ++i) {
        const double x = quad.lo + (quad.hi - quad.lo) * i / 64.0;
        if (!(diffusion(x, theta) > 0.0))
            throw DomainError("diffusion coefficient not positive at x = " + std::to_string(x));
    }
    const double z = quad.normalization;
    if (std::abs(z - 1.0) > 1e-6)
        throw NumericalError("invariant density does not integrate to 1 (got " + std::to_string(z) + ")");
}

std::pair<double, double> density_ratio_points(const DiffusionModel& model, const ParamVector& theta,
                                               double ratio) {
    const Interval S = model.state_space;
    auto logn = [&](double x) { return model.invariant_logdensity(x, theta); };

    double x0 = model.mode_hint ? model.mode_hint(theta) : 0.0;
    x0 = S.project(x0, 1e-6);

    // bracket the mode by doubling steps inside the state space
    double step = 0.5 * std::max(1.0, std::abs(x0));
    double a = x0, b = x0;
    for (int k = 0; k < 200; ++k) {
        double cand = a - step;
        if (std::isfinite(S.lo)) cand = std::max(cand, S.lo + 1e-300);
        if (logn(cand) > logn(a)) { a = cand; step *= 2.0; } else { a = cand; break; }
    }
    step = 0.5 * std::max(1.0, std::abs(x0));
    for (int k = 0; k < 200; ++k) {
        double cand = b + step;
        if (std::isfinite(S.hi)) cand = std::min(cand, S.hi - 1e-300);
        if (logn(cand) > logn(b)) { b = cand; step *= 2.0; } else { b = cand; break; }
    }
    const double mode = golden_maximize(logn, a, b);
    const double log_cut = logn(mode) + std::log(ratio);

    // walk outward until the log-density crosses the cut, then bisect
    auto find_tail = [&](int dir) {
        double inside = mode;
        double out = mode;
        double h = std::max(1.0, std::abs(mode)) * 0.25;
        for (int k = 0; k < 400; ++k) {
            double cand = out + dir * h;
            if (dir < 0 && std::isfinite(S.lo)) {
                if (cand <= S.lo) return S.lo;  // boundary reached before the cut
                cand = std::max(cand, S.lo + 1e-300);
            }
            if (dir > 0 && std::isfinite(S.hi)) {
                if (cand >= S.hi) return S.hi;
                cand = std::min(cand, S.hi - 1e-300);
            }
            out = cand;
            if (logn(out) < log_cut) break;
            inside = out;
            h *= 2.0;
            if (k == 399)
                throw NumericalError("invariant density tail search did not terminate");
        }
        for (int k = 0; k < 200; ++k) {
            double mid = 0.5 * (inside + out);
            if (logn(mid) < log_cut) out = mid; else inside = mid;
        }
        return out;
    };
    return {find_tail(-1), find_tail(+1)};
}

InvariantQuadrature build_invariant_quadrature(const DiffusionModel& model, const ParamVector& theta) {
    InvariantQuadrature q;
    const auto tails = density_ratio_points(model, theta, kTailDensityRatio);
    q.lo = tails.first;
    q.hi = tails.second;

    const double lo = q.lo, hi = q.hi;
    auto raw_integrate = [&model, theta, lo, hi](const std::function<double(double)>& g) {
        double err = 0.0;
        auto integrand = [&](double x) { return g(x) * std::exp(model.invariant_logdensity(x, theta)); };
        const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
            integrand, lo, hi, 15, 1e-12, &err);
        return std::pair<double, double>(v, err);
    };

    auto [z, zerr] = raw_integrate([](double) { return 1.0; });
    if (!(z > 0.0) || !std::isfinite(z))
        throw NumericalError("invariant density normalization failed on [" + std::to_string(lo) + ", " +
                             std::to_string(hi) + "]");
    q.normalization = z;

    q.integrate = [raw_integrate, z](const std::function<double(double)>& g) {
        auto [v, err] = raw_integrate(g);
        MomentResult r;
        r.value = v / z;
        r.error_estimate = err / z;
        if (!std::isfinite(r.value) || err > 1e-8 * std::max(1.0, std::abs(v))) {
            std::ostringstream msg;
            msg << "invariant-measure quadrature did not converge: value = " << r.value
                << ", error estimate = " << r.error_estimate;
            throw NumericalError(msg.str());
        }
        return r;
    };
    return q;
}

double generator_apply(const DiffusionModel& model, const ParamVector& theta,
                       const SmoothFunction& f, double x) {
    if (!model.state_space.contains(x))
        throw DomainError("generator_apply: x = " + std::to_string(x) + " outside state space");
    const double b = model.diffusion(x, theta);
    return model.drift(x, theta) * f.d1(x) + 0.5 * b * b * f.d2(x);
}

SmoothFunction generator_function(const DiffusionModel& model, const ParamVector& theta,
                                  const SmoothFunction& f) {
    if (f.is_polynomial() && model.drift_poly && model.diffusion_sq_poly) {
        const auto a = model.drift_poly(theta);
        const auto b2 = model.diffusion_sq_poly(theta);
        std::vector<double> d1(std::max<std::size_t>(f.poly.size(), 2) - 1, 0.0);
        for (std::size_t k = 1; k < f.poly.size(); ++k) d1[k - 1] = static_cast<double>(k) * f.poly[k];
        std::vector<double> d2(std::max<std::size_t>(d1.size(), 2) - 1, 0.0);
        for (std::size_t k = 1; k < d1.size(); ++k) d2[k - 1] = static_cast<double>(k) * d1[k];
        if (d1.empty()) d1.push_back(0.0);
        if (d2.empty()) d2.push_back(0.0);
        auto term1 = poly_multiply(a, d1);
        auto term2 = poly_multiply(b2, d2);
        std::vector<double> out(std::max(term1.size(), term2.size()), 0.0);
        for (std::size_t k = 0; k < term1.size(); ++k) out[k] += term1[k];
        for (std::size_t k = 0; k < term2.size(); ++k) out[k] += 0.5 * term2[k];
        return SmoothFunction::polynomial(out);
    }
    auto eval = [&model, theta, f](double x) {
        const double b = model.diffusion(x, theta);
        return model.drift(x, theta) * f.d1(x) + 0.5 * b * b * f.d2(x);
    };
    return SmoothFunction::from_eval(eval, f.growth_note);
}

double generator_iterate(const DiffusionModel& model, const ParamVector& theta,
                         const SmoothFunction& f, double x, int i) {
    if (i < 0) throw DomainError("generator_iterate: order must be >= 0");
    if (i > 2) throw NotAvailableError("generator_iterate: orders above 2 are not supported");
    if (i == 0) {
        if (!model.state_space.contains(x)) throw DomainError("generator_iterate: x outside state space");
        return f.eval(x);
    }
    if (i == 1) return generator_apply(model, theta, f, x);
    return generator_apply(model, theta, generator_function(model, theta, f), x);
}

MomentResult invariant_moment(const DiffusionModel& model, const ParamVector& theta,
                              const SmoothFunction& g, MomentMode mode) {
    if (mode == MomentMode::prefer_closed_form && g.is_polynomial() && model.closed_form &&
        model.closed_form->monomial_moment) {
        MomentResult r;
        r.used_closed_form = true;
        for (std::size_t k = 0; k < g.poly.size(); ++k)
            if (g.poly[k] != 0.0)
                r.value += g.poly[k] * model.closed_form->monomial_moment(static_cast<int>(k), theta);
        return r;
    }
    const auto quad = build_invariant_quadrature(model, theta);
    return quad.integrate([&g](double x) { return g.eval(x); });
}

double invariant_variance_of(const DiffusionModel& model, const ParamVector& theta,
                             const SmoothFunction& f, MomentMode mode) {
    const double m = invariant_moment(model, theta, f, mode).value;
    double m2;
    if (f.is_polynomial()) {
        m2 = invariant_moment(model, theta, SmoothFunction::polynomial(poly_multiply(f.poly, f.poly)), mode)
                 .value;
    } else {
        auto sq = SmoothFunction::from_eval([f](double x) { double v = f.eval(x); return v * v; });
        m2 = invariant_moment(model, theta, sq, mode).value;
    }
    return m2 - m * m;
}

double kf_coefficient(const DiffusionModel& model, const ParamVector& theta,
                      const SmoothFunction& f, MomentMode mode) {
    const SmoothFunction lf = generator_function(model, theta, f);
    double numer;
    if (f.is_polynomial() && lf.is_polynomial()) {
        numer = invariant_moment(model, theta, SmoothFunction::polynomial(poly_multiply(f.poly, lf.poly)),
                                 mode)
                    .value;
    } else {
        auto prod = SmoothFunction::from_eval([f, lf](double x) { return f.eval(x) * lf.eval(x); });
        numer = invariant_moment(model, theta, prod, mode).value;
    }
    const double var = invariant_variance_of(model, theta, f, mode);
    const double scale = std::abs(invariant_moment(model, theta, f, mode).value) + 1.0;
    if (!(var > 1e-12 * scale * scale))
        throw DegeneratePredictorError("predictor variance is numerically zero (Var = " +
                                       std::to_string(var) + ")");
    return numer / var;
}

double invariant_l2_norm(const DiffusionModel& model, const ParamVector& theta,
                         const SmoothFunction& g, MomentMode mode) {
    double m2;
    if (g.is_polynomial()) {
        m2 = invariant_moment(model, theta, SmoothFunction::polynomial(poly_multiply(g.poly, g.poly)), mode)
                 .value;
    } else {
        auto sq = SmoothFunction::from_eval([g](double x) { double v = g.eval(x); return v * v; });
        m2 = invariant_moment(model, theta, sq, mode).value;
    }
    return std::sqrt(std::max(0.0, m2));
}

DiffusionModel make_model(const FamilyConfig& cfg) {
    if (cfg.family != "ou" && cfg.family != "cir")
        throw ConfigError("unknown model family '" + cfg.family + "'");
    const bool is_cir = cfg.family == "cir";
    const OuCirAccess acc = build_access(cfg);

    DiffusionModel m;
    m.family = cfg.family;
    m.dim_theta = 0;
    for (int s : acc.free_slot)
        if (s >= 0) ++m.dim_theta;
    m.state_space = is_cir ? Interval{0.0, std::numeric_limits<double>::infinity()} : Interval{};
    m.mixing_note = "assumed stationary and rho-mixing (spectral gap); not machine-checked";
    m.growth_note = "coefficients of linear growth by construction";

    m.drift = [acc](double x, const ParamVector& th) {
        const auto p = acc.resolve(th);
        return p[0] * (p[1] - x);
    };
    m.drift_dx = [acc](double, const ParamVector& th) { return -acc.resolve(th)[0]; };
    m.drift_dxx = [](double, const ParamVector&) { return 0.0; };
    m.drift_poly = [acc](const ParamVector& th) {
        const auto p = acc.resolve(th);
        return std::vector<double>{p[0] * p[1], -p[0]};
    };

    if (is_cir) {
        m.diffusion = [acc](double x, const ParamVector& th) { return acc.resolve(th)[2] * std::sqrt(x); };
        m.diffusion_dx = [acc](double x, const ParamVector& th) {
            return 0.5 * acc.resolve(th)[2] / std::sqrt(x);
        };
        m.diffusion_dxx = [acc](double x, const ParamVector& th) {
            return -0.25 * acc.resolve(th)[2] / (x * std::sqrt(x));
        };
        m.diffusion_sq_poly = [acc](const ParamVector& th) {
            const auto p = acc.resolve(th);
            return std::vector<double>{0.0, p[2] * p[2]};
        };
    } else {
        m.diffusion = [acc](double, const ParamVector& th) { return acc.resolve(th)[2]; };
        m.diffusion_dx = [](double, const ParamVector&) { return 0.0; };
        m.diffusion_dxx = [](double, const ParamVector&) { return 0.0; };
        m.diffusion_sq_poly = [acc](const ParamVector& th) {
            const auto p = acc.resolve(th);
            return std::vector<double>{p[2] * p[2]};
        };
    }

    if (is_cir) {
        // Gamma(alpha, rate beta) with alpha = 2 kappa eta / xi^2, beta = 2 kappa / xi^2
        auto shape_rate = [acc](const ParamVector& th) {
            const auto p = acc.resolve(th);
            const double beta = 2.0 * p[0] / (p[2] * p[2]);
            return std::pair<double, double>(p[1] * beta, beta);
        };
        m.invariant_logdensity = [shape_rate](double x, const ParamVector& th) {
            const auto [alpha, beta] = shape_rate(th);
            return alpha * std::log(beta) - std::lgamma(alpha) + (alpha - 1.0) * std::log(x) - beta * x;
        };
        m.invariant_logdensity_dx = [shape_rate](double x, const ParamVector& th) {
            const auto [alpha, beta] = shape_rate(th);
            return (alpha - 1.0) / x - beta;
        };
        m.mode_hint = [shape_rate](const ParamVector& th) {
            const auto [alpha, beta] = shape_rate(th);
            return std::max((alpha - 1.0) / beta, 0.05 * alpha / beta);
        };
        ClosedFormOracles cf;
        cf.invariant_mean = [acc](const ParamVector& th) { return acc.resolve(th)[1]; };
        cf.invariant_variance = [shape_rate](const ParamVector& th) {
            const auto [alpha, beta] = shape_rate(th);
            return alpha / (beta * beta);
        };
        cf.monomial_moment = [shape_rate](int k, const ParamVector& th) {
            const auto [alpha, beta] = shape_rate(th);
            double v = 1.0;
            for (int j = 0; j < k; ++j) v *= (alpha + j) / beta;
            return v;
        };
        cf.spectral_gap = [acc](const ParamVector& th) { return acc.resolve(th)[0]; };
        cf.autocov_identity = [shape_rate, acc](double t, const ParamVector& th) {
            const auto [alpha, beta] = shape_rate(th);
            return alpha / (beta * beta) * std::exp(-acc.resolve(th)[0] * t);
        };
        cf.lag_moment_identity = [shape_rate, acc](double delta, const ParamVector& th) {
            const auto p = acc.resolve(th);
            const auto [alpha, beta] = shape_rate(th);
            return p[1] * p[1] + alpha / (beta * beta) * std::exp(-p[0] * delta);
        };
        m.closed_form = cf;
        m.stationary_sampler = [shape_rate](RngStream& rng, const ParamVector& th) {
            const auto [alpha, beta] = shape_rate(th);
            return rng.gamma(alpha, 1.0 / beta);
        };
        m.validate_theta = [acc](const ParamVector& th) {
            const auto p = acc.resolve(th);
            if (!(p[0] > 0.0) || !(p[1] > 0.0) || !(p[2] > 0.0))
                throw DomainError("cir: kappa, eta, xi must be positive");
            if (2.0 * p[0] * p[1] < p[2] * p[2])
                throw DomainError("cir: boundary non-attainability requires 2*kappa*eta >= xi^2");
        };
    } else {
        auto sigma2 = [acc](const ParamVector& th) {
            const auto p = acc.resolve(th);
            return p[2] * p[2] / (2.0 * p[0]);
        };
        m.invariant_logdensity = [acc, sigma2](double x, const ParamVector& th) {
            const auto p = acc.resolve(th);
            const double s2 = sigma2(th);
            const double d = x - p[1];
            return -0.5 * std::log(2.0 * M_PI * s2) - d * d / (2.0 * s2);
        };
        m.invariant_logdensity_dx = [acc, sigma2](double x, const ParamVector& th) {
            const auto p = acc.resolve(th);
            return -(x - p[1]) / sigma2(th);
        };
        m.mode_hint = [acc](const ParamVector& th) { return acc.resolve(th)[1]; };
        ClosedFormOracles cf;
        cf.invariant_mean = [acc](const ParamVector& th) { return acc.resolve(th)[1]; };
        cf.invariant_variance = [sigma2](const ParamVector& th) { return sigma2(th); };
        cf.monomial_moment = [acc, sigma2](int k, const ParamVector& th) {
            const auto p = acc.resolve(th);
            const double s2 = sigma2(th);
            // m_k = eta m_{k-1} + (k-1) s2 m_{k-2}
            double m0 = 1.0, m1 = p[1];
            if (k == 0) return m0;
            for (int j = 2; j <= k; ++j) {
                const double mj = p[1] * m1 + (j - 1) * s2 * m0;
                m0 = m1;
                m1 = mj;
            }
            return m1;
        };
        cf.spectral_gap = [acc](const ParamVector& th) { return acc.resolve(th)[0]; };
        cf.autocov_identity = [acc, sigma2](double t, const ParamVector& th) {
            return sigma2(th) * std::exp(-acc.resolve(th)[0] * t);
        };
        cf.lag_moment_identity = [acc, sigma2](double delta, const ParamVector& th) {
            const auto p = acc.resolve(th);
            return p[1] * p[1] + sigma2(th) * std::exp(-p[0] * delta);
        };
        m.closed_form = cf;
        GaussianTransition tr;
        tr.mean = [acc](double x, double t, const ParamVector& th) {
            const auto p = acc.resolve(th);
            return p[1] + (x - p[1]) * std::exp(-p[0] * t);
        };
        tr.sd = [acc, sigma2](double, double t, const ParamVector& th) {
            const auto p = acc.resolve(th);
            return std::sqrt(sigma2(th) * (1.0 - std::exp(-2.0 * p[0] * t)));
        };
        m.exact_transition = tr;
        m.stationary_sampler = [acc, sigma2](RngStream& rng, const ParamVector& th) {
            const auto p = acc.resolve(th);
            return rng.normal(p[1], std::sqrt(sigma2(th)));
        };
        m.validate_theta = [acc](const ParamVector& th) {
            const auto p = acc.resolve(th);
            if (!(p[0] > 0.0) || !(p[2] > 0.0)) throw DomainError("ou: kappa and xi must be positive");
        };
    }
    return m;
}

ParamVector initial_theta(const FamilyConfig& cfg) {
    std::vector<std::string> free = cfg.free;
    if (free.empty()) free = {kParamNames.begin(), kParamNames.end()};
    const bool is_cir = cfg.family == "cir";
    std::map<std::string, Interval> defaults = {
        {"kappa", Interval{0.0, std::numeric_limits<double>::infinity()}},
        {"eta", is_cir ? Interval{0.0, std::numeric_limits<double>::infinity()} : Interval{}},
        {"xi", Interval{0.0, std::numeric_limits<double>::infinity()}}};
    std::vector<double> values;
    for (const auto& name : free) {
        auto it = cfg.params.find(name);
        if (it == cfg.params.end()) throw ConfigError("missing value for free parameter '" + name + "'");
        values.push_back(it->second);
    }
    return ParamVector(std::move(values), resolve_bounds(cfg, defaults));
}

BuiltModel build_ou(double kappa, double eta, double xi, const std::vector<std::string>& free) {
    FamilyConfig cfg;
    cfg.family = "ou";
    cfg.params = {{"kappa", kappa}, {"eta", eta}, {"xi", xi}};
    cfg.free = free;
    return BuiltModel{make_model(cfg), initial_theta(cfg)};
}

BuiltModel build_cir(double kappa, double eta, double xi, const std::vector<std::string>& free) {
    FamilyConfig cfg;
    cfg.family = "cir";
    cfg.params = {{"kappa", kappa}, {"eta", eta}, {"xi", xi}};
    cfg.free = free;
    return BuiltModel{make_model(cfg), initial_theta(cfg)};
}

} // namespace pbef
