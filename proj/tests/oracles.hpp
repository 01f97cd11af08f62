// Test-only oracles, kept independent of the library's numerical paths:
// plain composite-Simpson quadrature and hand-derived OU formulas. Values
// frozen in the suites were computed with these.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 4000) {
    if (n % 2 != 0) ++n;
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

// Ornstein-Uhlenbeck dX = kappa (eta - X) dt + xi dB
struct Ou {
    double kappa, eta, xi;

    double sigma2() const { return xi * xi / (2.0 * kappa); }
    double density(double x) const {
        const double s2 = sigma2();
        return std::exp(-(x - eta) * (x - eta) / (2.0 * s2)) / std::sqrt(2.0 * M_PI * s2);
    }
    // E[X_t | X_0 = x], Var[X_t | X_0 = x]
    double cond_mean(double x, double t) const { return eta + (x - eta) * std::exp(-kappa * t); }
    double cond_var(double t) const { return sigma2() * (1.0 - std::exp(-2.0 * kappa * t)); }
    double autocov(double t) const { return sigma2() * std::exp(-kappa * t); }

    // invariant moment of g by quadrature over +-12 sd
    double moment(const std::function<double(double)>& g, int n = 8000) const {
        const double sd = std::sqrt(sigma2());
        return simpson([&](double x) { return g(x) * density(x); }, eta - 12.0 * sd, eta + 12.0 * sd, n);
    }

    // E[g(X_t) | X_0 = x] by quadrature over the Gaussian transition
    double cond_expect(const std::function<double(double)>& g, double x, double t, int n = 2000) const {
        const double m = cond_mean(x, t);
        const double v = cond_var(t);
        if (v <= 0.0) return g(m);
        const double sd = std::sqrt(v);
        return simpson(
            [&](double y) {
                const double z = (y - m) / sd;
                return g(y) * std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
            },
            m - 10.0 * sd, m + 10.0 * sd, n);
    }

    // U(g)(x) = int_0^T E[g(X_t)|x] dt for centered g, by nested quadrature.
    // T = 40/kappa leaves a bias below e^{-40} of the scale.
    double potential(const std::function<double(double)>& g, double x, int nt = 1200) const {
        const double t_max = 40.0 / kappa;
        return simpson([&](double t) { return cond_expect(g, x, t, 400); }, 1e-12, t_max, nt);
    }
};

inline double sample_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_var(const std::vector<double>& v) {
    const double m = sample_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / (static_cast<double>(v.size()) - 1.0);
}

inline double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
    const double ma = sample_mean(a), mb = sample_mean(b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
    return s / (static_cast<double>(a.size()) - 1.0);
}

} // namespace oracle
