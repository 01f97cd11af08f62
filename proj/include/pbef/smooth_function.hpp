#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pbef/errors.hpp"

namespace pbef {

// A scalar function with first and second derivatives. Derivatives are
// analytic closures unless fd_derivatives is set, in which case they are
// central finite differences of eval (flagged so diagnostics can report
// the accuracy loss).
struct SmoothFunction {
    std::function<double(double)> eval;
    std::function<double(double)> d1;
    std::function<double(double)> d2;
    std::string growth_note = "polynomial growth";
    std::vector<double> poly;     // coefficients c0 + c1 x + ..., empty if not a polynomial
    bool fd_derivatives = false;

    double operator()(double x) const { return eval(x); }

    static SmoothFunction make(std::function<double(double)> f,
                               std::function<double(double)> fp,
                               std::function<double(double)> fpp,
                               std::string note = "polynomial growth") {
        SmoothFunction s;
        s.eval = std::move(f);
        s.d1 = std::move(fp);
        s.d2 = std::move(fpp);
        s.growth_note = std::move(note);
        return s;
    }

    // Finite-difference fallback: d1 central with h ~ cbrt(eps)*max(1,|x|),
    // d2 central with h ~ eps^(1/4)*max(1,|x|).
    static SmoothFunction from_eval(std::function<double(double)> f,
                                    std::string note = "polynomial growth") {
        SmoothFunction s;
        s.eval = f;
        s.d1 = [f](double x) {
            const double h = std::cbrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, std::abs(x));
            return (f(x + h) - f(x - h)) / (2.0 * h);
        };
        s.d2 = [f](double x) {
            const double h =
                std::sqrt(std::sqrt(std::numeric_limits<double>::epsilon())) * std::max(1.0, std::abs(x));
            return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        };
        s.growth_note = std::move(note);
        s.fd_derivatives = true;
        return s;
    }

    // Polynomial c[0] + c[1] x + ... with exact derivatives.
    static SmoothFunction polynomial(std::vector<double> c) {
        if (c.empty()) c.push_back(0.0);
        auto horner = [](const std::vector<double>& coef, double x) {
            double v = 0.0;
            for (std::size_t k = coef.size(); k-- > 0;) v = v * x + coef[k];
            return v;
        };
        std::vector<double> dc, ddc;
        for (std::size_t k = 1; k < c.size(); ++k) dc.push_back(static_cast<double>(k) * c[k]);
        for (std::size_t k = 1; k < dc.size(); ++k) ddc.push_back(static_cast<double>(k) * dc[k]);
        if (dc.empty()) dc.push_back(0.0);
        if (ddc.empty()) ddc.push_back(0.0);
        SmoothFunction s;
        s.eval = [c, horner](double x) { return horner(c, x); };
        s.d1 = [dc, horner](double x) { return horner(dc, x); };
        s.d2 = [ddc, horner](double x) { return horner(ddc, x); };
        s.poly = std::move(c);
        return s;
    }

    static SmoothFunction identity() { return polynomial({0.0, 1.0}); }

    static SmoothFunction constant(double c) { return polynomial({c}); }

    bool is_polynomial() const { return !poly.empty(); }

    // f + c, preserving polynomial structure and derivatives.
    SmoothFunction shifted(double c) const {
        SmoothFunction s = *this;
        auto f = eval;
        s.eval = [f, c](double x) { return f(x) + c; };
        if (!poly.empty()) s.poly[0] += c;
        return s;
    }

    // c * f, preserving polynomial structure.
    SmoothFunction scaled(double c) const {
        SmoothFunction s;
        auto f = eval;
        auto fp = d1;
        auto fpp = d2;
        s.eval = [f, c](double x) { return c * f(x); };
        s.d1 = [fp, c](double x) { return c * fp(x); };
        s.d2 = [fpp, c](double x) { return c * fpp(x); };
        s.growth_note = growth_note;
        s.fd_derivatives = fd_derivatives;
        for (double ck : poly) s.poly.push_back(c * ck);
        return s;
    }
};

// Product of polynomial coefficient vectors.
inline std::vector<double> poly_multiply(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    return out;
}

// Verifies d1/d2 against central finite differences of eval at the probe
// points. Throws NumericalError when the relative mismatch exceeds rtol.
void check_derivatives(const SmoothFunction& f, const std::vector<double>& probes, double rtol = 1e-6);

} // namespace pbef
