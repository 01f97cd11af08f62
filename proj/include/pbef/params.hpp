#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pbef/errors.hpp"

namespace pbef {

// Open interval (lo, hi); infinite endpoints allowed.
struct Interval {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();

    bool contains(double x) const { return x > lo && x < hi; }
    double width() const { return hi - lo; }

    // Nearest interior point, kept a small margin away from finite endpoints.
    double project(double x, double margin = 1e-8) const {
        const double m = margin * (1.0 + (std::isfinite(width()) ? width() : 0.0));
        if (std::isfinite(lo) && x <= lo) return lo + m;
        if (std::isfinite(hi) && x >= hi) return hi - m;
        return x;
    }
};

// Parameter vector with per-coordinate open bounds defining Theta.
struct ParamVector {
    std::vector<double> values;
    std::vector<Interval> bounds;

    ParamVector() = default;
    ParamVector(std::vector<double> v, std::vector<Interval> b)
        : values(std::move(v)), bounds(std::move(b)) {
        validate();
    }
    explicit ParamVector(std::vector<double> v)
        : values(std::move(v)), bounds(values.size(), Interval{}) {
        validate();
    }

    std::size_t dim() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }

    bool in_bounds() const {
        for (std::size_t i = 0; i < values.size(); ++i)
            if (!bounds[i].contains(values[i])) return false;
        return true;
    }

    void validate() const {
        if (values.empty()) throw DomainError("ParamVector: dimension must be >= 1");
        if (bounds.size() != values.size())
            throw DomainError("ParamVector: bounds/values size mismatch");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i]))
                throw DomainError("ParamVector: non-finite coordinate " + std::to_string(i));
            if (!bounds[i].contains(values[i]))
                throw DomainError("ParamVector: coordinate " + std::to_string(i) +
                                  " = " + std::to_string(values[i]) + " outside its open bound");
        }
    }

    ParamVector with_values(std::vector<double> v) const {
        ParamVector out;
        out.values = std::move(v);
        out.bounds = bounds;
        out.validate();
        return out;
    }

    // Projection into the interior, used by solvers when an iterate leaves Theta.
    ParamVector projected(double margin = 1e-8) const {
        ParamVector out = *this;
        for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = bounds[i].project(values[i], margin);
        return out;
    }
};

} // namespace pbef
