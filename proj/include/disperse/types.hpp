#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace disperse {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using IVec = Eigen::VectorXi;

/// Named numerical tolerances shared across the toolkit.  All of them can be
/// overridden per scene (see the "tolerances" block of the scene JSON).
struct Tolerances {
    double on_surface = 1e-10;       // |R(q)| bound for "q lies on the surface"
    double gradient_floor = 1e-8;    // minimal admissible surface gradient norm
    double tangency_cos = 1e-7;      // |cos phi| below this flags a tangency
    double newton_residual = 1e-12;  // root/minimizer polish target
    int newton_max_iter = 50;
};

/// Fitted log-log scaling law: slope of log(y) against log(x) with a
/// least-squares fit, optionally CI-weighted.
struct ScalingReport {
    std::vector<double> xs;  // abscissae (deltas, taus, ...)
    std::vector<double> ys;  // estimates (fractions, operator norms, ...)
    std::vector<double> ci;  // 95% halfwidths when the ys are Monte Carlo

    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;

    bool degenerate = false;  // all estimates zero, nothing to fit
    long long n_samples = 0;
    std::uint64_t seed = 0;
};

/// Weighted least-squares fit of log(ys) against log(xs); nonpositive entries
/// are dropped.  Sets slope, intercept, r^2 and the degenerate flag in place.
void fit_loglog(ScalingReport& report, const std::vector<double>& weights = {});

}  // namespace disperse
