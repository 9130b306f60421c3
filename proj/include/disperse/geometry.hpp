#pragma once

#include "disperse/error.hpp"
#include "disperse/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace disperse {

/// Compactly supported C-infinity perturbation added to the defining
/// function of a scatterer:
///     amplitude * exp(-1 / (1 - (|x - center| / radius)^2))   inside,
///     0                                                        outside.
/// A negative amplitude bulges the surface outward (enlarges the body).
struct Bump {
    Vec center;        // a point on (or near) the base surface
    double radius;     // support radius, > 0
    double amplitude;  // signed coefficient added to R
};

enum class SurfaceKind { Sphere, Ellipsoid };

/// One strictly convex scatterer given as the zero level set of a defining
/// function R, with R < 0 strictly inside the body and R > 0 outside.
///
///   sphere:     R(x) = |x - center|^2 - radius^2
///   ellipsoid:  R(x) = sum_i (x_i - center_i)^2 / semi_axes_i^2 - 1
///
/// plus the (optional) bump perturbations.  Analytic derivatives are
/// available through order 2; orders 3 and 4 fall back to Richardson-refined
/// central differences.
struct Scatterer {
    int id = 0;
    SurfaceKind kind = SurfaceKind::Sphere;
    Vec center;
    double radius = 0.0;  // sphere only
    Vec semi_axes;        // ellipsoid only
    std::vector<Bump> bumps;
    int derivative_order = 4;  // maximum order eval_scatterer accepts

    int dimension() const { return static_cast<int>(center.size()); }

    double value(const Vec& x) const;
    Vec gradient(const Vec& x) const;
    Mat hessian(const Vec& x) const;

    /// Loose bound: the surface lies within this distance of the center.
    double bounding_radius() const;
};

/// One tabulated higher-order partial derivative d^alpha R.
struct PartialDerivative {
    std::vector<int> alpha;  // multi-index, alpha.size() == d
    double value;
    double error;  // finite-difference error estimate (0 for analytic)
};

/// Value, gradient and Hessian of R at a point, with optional tabulated
/// partials of order 3..4.
struct DerivativeBundle {
    double value = 0.0;
    Vec gradient;
    Mat hessian;
    std::vector<PartialDerivative> higher;
};

/// A lattice translate of a base scatterer: the body of scatterer `id`
/// shifted by an integer vector.
struct ScattererInstance {
    int id = 0;
    IVec shift;

    bool operator==(const ScattererInstance& o) const { return id == o.id && shift == o.shift; }
};

struct ValidationFlags {
    bool convexity_violated = false;
    bool disjointness_violated = false;
    bool finite_horizon_violated = false;
    bool min_flight_violated = false;

    bool any() const {
        return convexity_violated || disjointness_violated || finite_horizon_violated ||
               min_flight_violated;
    }
};

struct ValidationReport {
    double min_gap = 0.0;                // minimal surface-to-surface distance
    std::vector<double> lambda0;         // per-scatterer min Hessian eigenvalue
    double max_flight = 0.0;             // empirical, over sampled trajectories
    double min_flight = 0.0;             // empirical
    long long flights_sampled = 0;
    std::optional<Vec> free_corridor_p;  // witness line (foot point) if horizon open
    std::optional<Vec> free_corridor_v;
    ValidationFlags flags;
    std::vector<std::string> notes;
};

/// Scene on the unit torus: scatterers, horizon bound (assumption: free
/// flight <= horizon_bound), minimal flight tau0, and tolerances.
struct BilliardConfig {
    int dimension = 2;
    std::vector<Scatterer> scatterers;
    double horizon_bound = 2.0;
    double tau0 = 0.01;
    Tolerances tol;

    const Scatterer& scatterer(int id) const { return scatterers.at(static_cast<size_t>(id)); }
};

// -- Instance-aware evaluation helpers ---------------------------------------

/// x in cover coordinates mapped into the base scatterer's frame.
inline Vec to_base_frame(const Vec& x, const ScattererInstance& inst) {
    return x - inst.shift.cast<double>();
}

double instance_value(const BilliardConfig& cfg, const ScattererInstance& inst, const Vec& x);
Vec instance_gradient(const BilliardConfig& cfg, const ScattererInstance& inst, const Vec& x);

// -- Operations ---------------------------------------------------------------

/// R and its derivatives at x up to `order` (>= 0).  Orders 0..2 are analytic;
/// 3..4 use central differences with Richardson extrapolation and carry an
/// error estimate.  order > s.derivative_order or order > 4 is refused.
DerivativeBundle eval_scatterer(const Scatterer& s, const Vec& x, int order);

/// Unit normal at a surface point, directed out of the body (into the
/// billiard domain): grad R / |grad R|.
Vec unit_normal(const Scatterer& s, const Vec& q, const Tolerances& tol);

/// Estimated minimum over the surface of the smallest Hessian eigenvalue
/// (lambda_0).  Samples uniformly random directions from the center projected
/// to the surface; deterministic given the seed.  Throws on estimate <= 0.
double min_hessian_eigenvalue(const Scatterer& s, int n_samples, std::uint64_t seed);

/// Same estimate without the positivity check (validation reports violations
/// instead of throwing).
double min_hessian_eigenvalue_unchecked(const Scatterer& s, int n_samples, std::uint64_t seed);

/// Surface point hit by the ray from the center in direction u (1-d Newton).
Vec surface_point_along(const Scatterer& s, const Vec& u);

/// Closest point of the surface {R=0} to p (Newton on the projection KKT
/// system).  Valid for strictly convex bodies.
Vec closest_surface_point(const Scatterer& s, const Vec& p);

/// Euclidean distance from p to the body {R <= 0} (0 if p is inside).
double body_distance(const Scatterer& s, const Vec& p);

/// Signed surface-to-surface gap between two instances: positive when the
/// bodies are disjoint, negative (penetration estimate) when they overlap.
double instance_gap(const Scatterer& a, const Vec& shift_a, const Scatterer& b,
                    const Vec& shift_b);

/// All instances whose body meets the ball B(center, radius), each exactly
/// once, ordered lexicographically by (id, shift).
std::vector<ScattererInstance> enumerate_instances(const BilliardConfig& cfg, const Vec& center,
                                                   double radius);

/// Checks the standing assumptions: strict convexity (lambda_0 > 0 per
/// scatterer), pairwise disjointness with gap >= tau0, empirical flight-time
/// bounds over random trajectories, and a deterministic axis-parallel
/// corridor scan for the finite-horizon assumption.  Violations are reported,
/// never thrown.
ValidationReport validate_configuration(const BilliardConfig& cfg, int n_samples,
                                        std::uint64_t seed);

// -- Generic numerics shared across modules ----------------------------------

/// All multi-indices alpha with |alpha| = order over d variables,
/// lexicographic order.
std::vector<std::vector<int>> multi_indices(int d, int order);

/// Central-difference partial derivative d^alpha f at x, nested per axis,
/// step h_i = eps^(1/(|alpha|+2)) * scale.  Returns (value, error estimate)
/// via one Richardson halving.
std::pair<double, double> fd_partial(const std::function<double(const Vec&)>& f, const Vec& x,
                                     const std::vector<int>& alpha, double scale);

}  // namespace disperse
