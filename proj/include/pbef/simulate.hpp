#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pbef/model.hpp"
#include "pbef/rng.hpp"

namespace pbef {

// Equidistant observation grid t_i = i*delta, i = 0..n, plus the RNG
// coordinates that make the draw reproducible.
struct SamplingScheme {
    std::size_t n = 0;        // number of observation intervals
    double delta = 0.0;       // grid spacing
    int substeps = 1;         // Euler substeps per observation interval
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;

    double horizon() const { return static_cast<double>(n) * delta; }
    double n_delta() const { return horizon(); }
    double n_delta3() const { return static_cast<double>(n) * delta * delta * delta; }

    void validate() const;
};

struct SamplePath {
    enum class Method { exact, euler };

    SamplingScheme scheme;
    std::vector<double> values;  // X_0, X_delta, ..., X_{n delta}
    Method method = Method::exact;

    std::size_t size() const { return values.size(); }
};

// One draw from the invariant law; family sampler when available, else
// CDF-table inversion against exp(invariant_logdensity).
double draw_stationary(const DiffusionModel& model, const ParamVector& theta, RngStream& rng);

// Reusable inverse-CDF sampler (the generic fallback path, also usable on
// models without a closed-form stationary law).
class InverseCdfSampler {
public:
    InverseCdfSampler(const DiffusionModel& model, const ParamVector& theta, std::size_t table_size = 4096);
    double draw(RngStream& rng) const;

private:
    std::vector<double> grid_;
    std::vector<double> cdf_;
};

// Stationary-start path on the observation grid. OU steps use the exact
// Gaussian transition; other models use Euler-Maruyama with scheme.substeps
// substeps per interval (positivity-preserving full truncation near a finite
// lower boundary: negative proposals enter drift/diffusion clamped only).
SamplePath simulate_path(const DiffusionModel& model, const ParamVector& theta,
                         const SamplingScheme& scheme);

// Diagnostics-only alternative to the stationary start: begin at x0, evolve
// for burn_in time units, then record the grid. Estimation paths must use
// simulate_path.
SamplePath simulate_path_burnin(const DiffusionModel& model, const ParamVector& theta,
                                const SamplingScheme& scheme, double x0, double burn_in);

// One transition over a window of length t: exact when the model carries a
// Gaussian transition, otherwise `substeps` Euler steps.
double transition_step(const DiffusionModel& model, const ParamVector& theta, double x, double t,
                       int substeps, RngStream& rng);

// Endpoint X_t of a path started at x0 (exact single step when available,
// otherwise Euler with ceil(t * substeps_per_unit) steps).
double simulate_to_time(const DiffusionModel& model, const ParamVector& theta, double x0, double t,
                        double substeps_per_unit, RngStream& rng);

// Values on the grid j*(t_max/m), j = 0..m, started from x0.
std::vector<double> simulate_grid(const DiffusionModel& model, const ParamVector& theta, double x0,
                                  double t_max, std::size_t m, RngStream& rng);

struct MeanStderr {
    double mean = 0.0;
    double stderr_ = 0.0;
};

// Monte Carlo estimate of P_t f(x) = E[f(X_t) | X_0 = x].
MeanStderr conditional_expectation_mc(const DiffusionModel& model, const ParamVector& theta,
                                      const SmoothFunction& f, double x, double t, std::size_t n_rep,
                                      RngStream& rng, double substeps_per_unit = 64.0);

// CSV with header "index,time,value"; 17 significant digits.
void write_path_csv(const SamplePath& path, std::ostream& os);
void write_path_csv(const SamplePath& path, const std::string& filename);
SamplePath read_path_csv(std::istream& is);
SamplePath read_path_csv(const std::string& filename);

// Shortest round-trip decimal form used across all CSV/JSON output.
std::string format_double(double v);

} // namespace pbef
