#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace disperse {

enum class errc {
    unsupported_order,
    off_surface,
    degenerate_gradient,
    convexity_violation,
    multiple_collision,
    invalid_start,
    no_intersection,
    no_minimum,
    no_convergence,
    stencil_crossing,
    out_of_chart,
    continuation_unavailable,
    amplitude_too_large,
    insufficient_samples,
    resolution_too_coarse,
    infeasible_type,
    bad_input,
};

/// Exit-code category used by the CLI: numerical failures map to 3,
/// everything else that reaches main maps to 4.
inline bool is_numerical(errc c) {
    switch (c) {
        case errc::no_convergence:
        case errc::multiple_collision:
        case errc::stencil_crossing:
        case errc::insufficient_samples:
        case errc::resolution_too_coarse:
        case errc::no_minimum:
            return true;
        default:
            return false;
    }
}

class Error : public std::runtime_error {
  public:
    Error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    errc code() const { return code_; }

  private:
    errc code_;
};

/// Gauss-Newton (or plain Newton) gave up; carries the last iterate so a
/// caller can inspect or restart.
class NoConvergence : public Error {
  public:
    NoConvergence(const std::string& what, Eigen::VectorXd last, double residual)
        : Error(errc::no_convergence, what), last_iterate(std::move(last)), residual(residual) {}
    Eigen::VectorXd last_iterate;
    double residual;
};

/// A prescribed combinatorial type could not be realized; step index of the
/// first deviation is recorded.
class InfeasibleType : public Error {
  public:
    InfeasibleType(const std::string& what, int step)
        : Error(errc::infeasible_type, what), step(step) {}
    int step;
};

/// Bump perturbation broke strict convexity; carries the measured minimum
/// Hessian eigenvalue.
class AmplitudeTooLarge : public Error {
  public:
    AmplitudeTooLarge(const std::string& what, double min_eig)
        : Error(errc::amplitude_too_large, what), min_eigenvalue(min_eig) {}
    double min_eigenvalue;
};

}  // namespace disperse
