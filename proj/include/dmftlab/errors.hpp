#pragma once

#include <stdexcept>
#include <string>

namespace dmftlab {

// Invalid user input. `field` is a dotted path into the config, e.g. "grid.eta".
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& what)
        : std::runtime_error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(long step, const std::string& what)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

class PsdError : public std::runtime_error {
public:
    PsdError(double min_eig, const std::string& what)
        : std::runtime_error(what + " (min eigenvalue " + std::to_string(min_eig) + ")"), min_eig_(min_eig) {}
    double min_eigenvalue() const { return min_eig_; }

private:
    double min_eig_;
};

class SingularityError : public std::runtime_error {
public:
    explicit SingularityError(const std::string& matrix)
        : std::runtime_error("matrix " + matrix + " is not invertible"), matrix_(matrix) {}
    const std::string& matrix() const { return matrix_; }

private:
    std::string matrix_;
};

class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(double residual, const std::string& what)
        : std::runtime_error(what + " (last residual " + std::to_string(residual) + ")"), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

class MonotonicityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dmftlab
