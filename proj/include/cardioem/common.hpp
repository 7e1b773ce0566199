#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace cardioem {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vector = Eigen::VectorXd;

inline constexpr double kMmHgToPa = 133.322387415;
inline constexpr double kM3ToMl = 1.0e6;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad user-level input (mesh descriptors, parameter ranges).
class InputError : public Error {
public:
    using Error::Error;
};

// Configuration schema violation; `key` is the dotted path of the offending entry.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

// Nonlinear/linear solver breakdown. Carries the residual history for diagnostics.
class SolverError : public Error {
public:
    SolverError(const std::string& what, std::vector<double> history = {})
        : Error(what), history_(std::move(history)) {}
    const std::vector<double>& history() const { return history_; }

private:
    std::vector<double> history_;
};

}  // namespace cardioem
