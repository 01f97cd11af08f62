#include "pbef/simulate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace pbef {

void SamplingScheme::validate() const {
    if (!(delta > 0.0)) throw ConfigError("SamplingScheme: delta must be positive");
    if (substeps < 1) throw ConfigError("SamplingScheme: substeps must be >= 1");
}

std::string format_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

double draw_stationary(const DiffusionModel& model, const ParamVector& theta, RngStream& rng) {
    if (model.stationary_sampler) return model.stationary_sampler(rng, theta);
    InverseCdfSampler sampler(model, theta);
    return sampler.draw(rng);
}

InverseCdfSampler::InverseCdfSampler(const DiffusionModel& model, const ParamVector& theta,
                                     std::size_t table_size) {
    const auto quad = build_invariant_quadrature(model, theta);
    grid_.resize(table_size + 1);
    cdf_.resize(table_size + 1);
    const double h = (quad.hi - quad.lo) / static_cast<double>(table_size);
    double acc = 0.0;
    double prev = std::exp(model.invariant_logdensity(quad.lo, theta));
    if (!std::isfinite(prev)) prev = 0.0;
    grid_[0] = quad.lo;
    cdf_[0] = 0.0;
    for (std::size_t i = 1; i <= table_size; ++i) {
        const double x = quad.lo + h * static_cast<double>(i);
        const double cur = std::exp(model.invariant_logdensity(x, theta));
        acc += 0.5 * (prev + cur) * h;
        grid_[i] = x;
        cdf_[i] = acc;
        prev = cur;
    }
    if (!(acc > 0.0) || !std::isfinite(acc))
        throw NumericalError("inverse-CDF table construction failed (mass " + std::to_string(acc) + ")");
    for (auto& c : cdf_) c /= acc;
}

double InverseCdfSampler::draw(RngStream& rng) const {
    const double u = rng.uniform();
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.begin()) return grid_.front();
    if (it == cdf_.end()) return grid_.back();
    const std::size_t i = static_cast<std::size_t>(it - cdf_.begin());
    const double c0 = cdf_[i - 1], c1 = cdf_[i];
    const double w = (c1 > c0) ? (u - c0) / (c1 - c0) : 0.5;
    return grid_[i - 1] + w * (grid_[i] - grid_[i - 1]);
}

namespace {

// One Euler step of size h with coefficients evaluated at the state clamped
// to the closure of the state space (full truncation).
inline double euler_step(const DiffusionModel& model, const ParamVector& theta, double x, double h,
                         double z) {
    double xe = x;
    if (std::isfinite(model.state_space.lo)) xe = std::max(xe, model.state_space.lo);
    if (std::isfinite(model.state_space.hi)) xe = std::min(xe, model.state_space.hi);
    return x + model.drift(xe, theta) * h + model.diffusion(xe, theta) * std::sqrt(h) * z;
}

} // namespace

double transition_step(const DiffusionModel& model, const ParamVector& theta, double x, double t,
                       int substeps, RngStream& rng) {
    if (model.exact_transition) {
        const double m = model.exact_transition->mean(x, t, theta);
        const double s = model.exact_transition->sd(x, t, theta);
        return m + s * rng.normal();
    }
    const double h = t / substeps;
    for (int k = 0; k < substeps; ++k) x = euler_step(model, theta, x, h, rng.normal());
    return x;
}

namespace {

SamplePath record_path(const DiffusionModel& model, const ParamVector& theta,
                       const SamplingScheme& scheme, double x, RngStream& rng) {
    SamplePath path;
    path.scheme = scheme;
    path.method = model.exact_transition ? SamplePath::Method::exact : SamplePath::Method::euler;
    path.values.reserve(scheme.n + 1);
    path.values.push_back(x);
    for (std::size_t i = 1; i <= scheme.n; ++i) {
        x = transition_step(model, theta, x, scheme.delta, scheme.substeps, rng);
        if (!std::isfinite(x) || !model.state_space.contains(x))
            throw SimulationError("simulated value left the state space", i);
        path.values.push_back(x);
    }
    return path;
}

} // namespace

SamplePath simulate_path(const DiffusionModel& model, const ParamVector& theta,
                         const SamplingScheme& scheme) {
    scheme.validate();
    RngStream rng(scheme.seed, scheme.stream_id);
    const double x0 = draw_stationary(model, theta, rng);
    return record_path(model, theta, scheme, x0, rng);
}

SamplePath simulate_path_burnin(const DiffusionModel& model, const ParamVector& theta,
                                const SamplingScheme& scheme, double x0, double burn_in) {
    scheme.validate();
    if (burn_in < 0.0) throw DomainError("simulate_path_burnin: burn_in must be >= 0");
    if (!model.state_space.contains(x0))
        throw DomainError("simulate_path_burnin: x0 outside the state space");
    RngStream rng(scheme.seed, scheme.stream_id);
    double x = x0;
    if (burn_in > 0.0) {
        const std::size_t steps = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(burn_in / scheme.delta)));
        for (std::size_t k = 0; k < steps; ++k)
            x = transition_step(model, theta, x, burn_in / static_cast<double>(steps),
                                scheme.substeps, rng);
    }
    return record_path(model, theta, scheme, x, rng);
}

double simulate_to_time(const DiffusionModel& model, const ParamVector& theta, double x0, double t,
                        double substeps_per_unit, RngStream& rng) {
    if (t <= 0.0) return x0;
    if (model.exact_transition) return transition_step(model, theta, x0, t, 1, rng);
    const int m = std::max(1, static_cast<int>(std::ceil(t * substeps_per_unit)));
    return transition_step(model, theta, x0, t, m, rng);
}

std::vector<double> simulate_grid(const DiffusionModel& model, const ParamVector& theta, double x0,
                                  double t_max, std::size_t m, RngStream& rng) {
    std::vector<double> out;
    out.reserve(m + 1);
    out.push_back(x0);
    const double h = t_max / static_cast<double>(m);
    double x = x0;
    for (std::size_t j = 1; j <= m; ++j) {
        x = transition_step(model, theta, x, h, 1, rng);
        out.push_back(x);
    }
    return out;
}

MeanStderr conditional_expectation_mc(const DiffusionModel& model, const ParamVector& theta,
                                      const SmoothFunction& f, double x, double t, std::size_t n_rep,
                                      RngStream& rng, double substeps_per_unit) {
    if (!(t > 0.0)) throw DomainError("conditional_expectation_mc: t must be positive");
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t r = 0; r < n_rep; ++r) {
        const double v = f.eval(simulate_to_time(model, theta, x, t, substeps_per_unit, rng));
        sum += v;
        sumsq += v * v;
    }
    MeanStderr out;
    out.mean = sum / static_cast<double>(n_rep);
    const double var = std::max(0.0, sumsq / static_cast<double>(n_rep) - out.mean * out.mean);
    out.stderr_ = std::sqrt(var / static_cast<double>(n_rep));
    return out;
}

void write_path_csv(const SamplePath& path, std::ostream& os) {
    os << "index,time,value\n";
    for (std::size_t i = 0; i < path.values.size(); ++i) {
        os << i << ',' << format_double(static_cast<double>(i) * path.scheme.delta) << ','
           << format_double(path.values[i]) << '\n';
    }
}

void write_path_csv(const SamplePath& path, const std::string& filename) {
    std::ofstream os(filename);
    if (!os) throw ConfigError("cannot open '" + filename + "' for writing");
    write_path_csv(path, os);
}

SamplePath read_path_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("index,time,value", 0) != 0)
        throw ConfigError("path CSV: missing 'index,time,value' header");
    SamplePath path;
    double first_time = 0.0, second_time = 0.0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string tok;
        std::getline(row, tok, ',');
        std::getline(row, tok, ',');
        const double t = std::stod(tok);
        std::getline(row, tok, ',');
        path.values.push_back(std::stod(tok));
        if (path.values.size() == 1) first_time = t;
        if (path.values.size() == 2) second_time = t;
    }
    if (path.values.empty()) throw ConfigError("path CSV: no rows");
    path.scheme.n = path.values.size() - 1;
    path.scheme.delta = path.values.size() > 1 ? second_time - first_time : 1.0;
    return path;
}

SamplePath read_path_csv(const std::string& filename) {
    std::ifstream is(filename);
    if (!is) throw ConfigError("cannot open '" + filename + "'");
    return read_path_csv(is);
}

} // namespace pbef
