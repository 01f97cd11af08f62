#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pbef {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Argument outside the model's state space or parameter domain.
class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Quadrature / Monte Carlo / root-finding did not reach its tolerance.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& msg) : Error(msg) {}
};

// Bad configuration (shape mismatch, unknown family, malformed file).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Predictor has (numerically) zero variance under the working measure.
class DegeneratePredictorError : public Error {
public:
    explicit DegeneratePredictorError(const std::string& msg) : Error(msg) {}
};

// The map theta -> moment is not invertible on the probe grid, or a
// sensitivity required for identification vanishes.
class IdentifiabilityError : public Error {
public:
    explicit IdentifiabilityError(const std::string& msg) : Error(msg) {}
};

// A simulated path left the state space irrecoverably.
class SimulationError : public Error {
public:
    SimulationError(const std::string& msg, std::size_t index)
        : Error(msg + " (at index " + std::to_string(index) + ")"), failing_index(index) {}
    std::size_t failing_index;
};

// Jacobian condition number beyond the usable range.
class NearSingularError : public Error {
public:
    explicit NearSingularError(const std::string& msg) : Error(msg) {}
};

// A closed form was requested for a case it does not cover.
class NotAvailableError : public Error {
public:
    explicit NotAvailableError(const std::string& msg) : Error(msg) {}
};

// Integration-by-parts boundary terms are not negligible.
class BoundaryTermError : public Error {
public:
    explicit BoundaryTermError(const std::string& msg) : Error(msg) {}
};

// Assembled report violates a structural requirement (e.g. PSD).
class AssemblyError : public Error {
public:
    explicit AssemblyError(const std::string& msg) : Error(msg) {}
};

} // namespace pbef
