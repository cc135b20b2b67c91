#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>

namespace svprk {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr const char* kVersion = "0.1.0";

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class NameNotFound : public Error {
public:
    explicit NameNotFound(const std::string& name)
        : Error("name not found: " + name), name_(name) {}
    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

class DerivativeMismatch : public Error {
public:
    DerivativeMismatch(std::string callback, double max_error)
        : Error("derivative mismatch in " + callback + " (max error " + std::to_string(max_error) + ")"),
          callback_(std::move(callback)),
          max_error_(max_error) {}
    const std::string& callback() const noexcept { return callback_; }
    double max_error() const noexcept { return max_error_; }

private:
    std::string callback_;
    double max_error_;
};

class NoConvergence : public Error {
public:
    NoConvergence(double last_residual, int iterations)
        : Error("Newton iteration did not converge (residual " + std::to_string(last_residual) + " after " +
                std::to_string(iterations) + " iterations)"),
          last_residual_(last_residual),
          iterations_(iterations) {}
    double last_residual() const noexcept { return last_residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double last_residual_;
    int iterations_;
};

class SingularJacobian : public Error {
public:
    using Error::Error;
};

class RankDeficient : public Error {
public:
    using Error::Error;
};

class ConditionViolated : public Error {
public:
    using Error::Error;
};

class InvalidResolution : public Error {
public:
    using Error::Error;
};

class LadderTooShort : public Error {
public:
    using Error::Error;
};

class StatisticallyInconclusive : public Error {
public:
    using Error::Error;
};

class ConfigInvalid : public Error {
public:
    using Error::Error;
};

/// A step failure with the index of the step that raised it.
class StepFailure : public Error {
public:
    StepFailure(long step, const std::string& what)
        : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

inline double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace svprk
