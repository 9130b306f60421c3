#pragma once

#include "disperse/billiard.hpp"

namespace disperse {

enum class EventKind { Reflection, Tangency };

struct TypeEvent {
    ScattererInstance instance;
    EventKind kind = EventKind::Reflection;
};

/// Constrained-trajectory problem: an ordered combinatorial type (which
/// instance is met, and whether the event is a proper reflection or a forced
/// tangency) together with the base line the initial conditions are
/// parameterized around.  Unknowns are 2d-2 line coordinates; each
/// tangency-marked event contributes one residual (its cos phi).
struct TangencyConstraintProblem {
    const BilliardConfig* cfg = nullptr;
    std::vector<TypeEvent> type;
    OrientedLine base_line;
    double t_start = 0.0;  // trajectory starts at base_line.p + t_start * v

    int tangency_count() const {
        int j = 0;
        for (const auto& e : type) j += (e.kind == EventKind::Tangency) ? 1 : 0;
        return j;
    }
};

/// The initial line for solver coordinates u (2d-2 reals around base_line).
OrientedLine line_from_coords(const OrientedLine& base, const Vec& u);

/// Simulates the prescribed type from the given line coordinates (forced
/// pass-through at tangency-marked events) and returns cos phi at each marked
/// event.  Throws InfeasibleType (with the step index) when the trajectory
/// deviates from the type.
Vec tangency_residuals(const TangencyConstraintProblem& problem, const Vec& coords);

struct SolveResult {
    Vec coords;
    double residual_norm = 0.0;
    bool converged = false;
    int iterations = 0;
    double condition = 0.0;  // condition estimate of J^T J at the solution
};

/// Damped Gauss-Newton on 1/2 |residuals|^2 with finite-difference Jacobian.
/// Converged means residual norm < 1e-9.
SolveResult multi_tangency_solve(const TangencyConstraintProblem& problem, const Vec& start);

struct CensusRow {
    int j = 0;
    int trials = 0;
    int converged = 0;
    double best_residual = 0.0;
    double median_iters = 0.0;
};

/// For each j = 1..j_max: random trajectories of bounded length (<= 6
/// events), the j least-transversal events re-labelled as tangencies, then a
/// Gauss-Newton solve per trial.  Deterministic given the seed.
std::vector<CensusRow> tangency_census(const BilliardConfig& cfg, int j_max, int trials,
                                       std::uint64_t seed);

/// Builds one census trial problem (exposed for tests and the falsification
/// path of the census command).
std::optional<TangencyConstraintProblem> census_trial_problem(const BilliardConfig& cfg, int j,
                                                              std::uint64_t trial_seed);

/// Events with |cos phi| < tol.
int count_near_tangencies(const TrajectoryRecord& record, double tol);

/// Returns a copy of the scatterer with one compact bump added; evaluations
/// farther than rho from the bump center are bit-identical to the base.
/// Re-validates strict convexity and throws AmplitudeTooLarge on failure.
Scatterer bump_perturb(const Scatterer& s, const Vec& surface_point, double rho, double amplitude);

}  // namespace disperse
