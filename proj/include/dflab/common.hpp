#pragma once

#include <stdexcept>
#include <string>

namespace dflab {

inline constexpr const char* kVersion = "0.1.0";

/// Base error for the library. `kind()` is a stable machine-readable tag
/// used by the CLI when emitting error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data", msg) {}
};

/// Simulation produced non-finite values (explosive parameterization).
struct SimulationDivergedError : Error {
    explicit SimulationDivergedError(const std::string& msg) : Error("simulation-diverged", msg) {}
};

/// Innovation covariance not positive definite in the Kalman recursion.
struct FilterDegenerateError : Error {
    explicit FilterDegenerateError(const std::string& msg) : Error("filter-degenerate", msg) {}
};

/// All particle weights underflowed to zero.
struct WeightCollapseError : Error {
    explicit WeightCollapseError(const std::string& msg) : Error("weight-collapse", msg) {}
};

/// Non-finite activation inside the network; message names the layer.
struct NumericOverflowError : Error {
    explicit NumericOverflowError(const std::string& msg) : Error("numeric-overflow", msg) {}
};

struct NetworkError : Error {
    explicit NetworkError(const std::string& msg) : Error("network", msg) {}
};

} // namespace dflab
