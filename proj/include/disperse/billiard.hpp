#pragma once

#include "disperse/geometry.hpp"

#include <optional>
#include <utility>

namespace disperse {

/// Boundary phase-space element: a point on a scatterer instance together
/// with a unit velocity.  q is kept in universal-cover coordinates (unwrapped
/// R^d) with the instance shift recorded; wrapping happens only when
/// serializing.  Post-collision states satisfy (v, n(q)) >= 0; the incoming
/// states produced by line_to_phase do not.
struct PhasePoint {
    ScattererInstance instance;
    Vec q;
    Vec v;
};

/// Oriented line: foot of the perpendicular from the origin p and unit
/// direction v, with (p, v) = 0.
struct OrientedLine {
    Vec p;
    Vec v;
};

/// One collision record.  cos_phi = (v_out, n(q_hit)) = -(v_in, n(q_hit))
/// lies in [-tangency_cos, 1]; it is computed from the incoming velocity and
/// the outward (into the domain) normal.
struct ReflectionEvent {
    ScattererInstance instance;
    double t_flight = 0.0;
    Vec q_hit;
    double cos_phi = 0.0;
    bool tangency = false;
};

enum class Termination { Completed, TangencyAbort, NoHit };

struct TrajectoryRecord {
    PhasePoint initial;
    std::vector<ReflectionEvent> events;
    PhasePoint final_point;
    Termination reason = Termination::Completed;
};

// -- Core map -----------------------------------------------------------------

/// First collision of the ray q + t v, t > t_min, with any scatterer
/// instance within the horizon.  Grazing-safe: the solver marches the ray,
/// polishes every local minimum of R along it (Newton on dR/dt), and resolves
/// both transversal and double roots.  Returns nothing if no instance is met
/// with t <= horizon_bound.
std::optional<ReflectionEvent> first_hit(const BilliardConfig& cfg, const Vec& q, const Vec& v,
                                         double t_min);

/// Specular reflection v' = v - 2 (v, n) n.
Vec reflect_velocity(const Vec& v, const Vec& n);

/// cos phi of an outgoing phase point: (v, n(q)).
double outgoing_cos_phi(const BilliardConfig& cfg, const PhasePoint& x);

/// One application of the billiard map: fly to the first hit, then reflect.
/// Tangent hits pass through (v' = v) and are flagged on the event.
/// Throws Error(no_intersection wrapped as NoHit? no) -- NoHit surfaces as an
/// Error only here; use billiard_map_n for graceful termination.
std::pair<PhasePoint, ReflectionEvent> billiard_step(const BilliardConfig& cfg,
                                                     const PhasePoint& x);

/// n iterations with full event recording; terminates early on NoHit or
/// (optionally) on the first tangency.
TrajectoryRecord billiard_map_n(const BilliardConfig& cfg, const PhasePoint& x, int n,
                                bool abort_on_tangency);

/// The time-reversal involution iota(q, v) = (q, -v + 2 (v, n(q)) n(q)).
PhasePoint reverse_state(const BilliardConfig& cfg, const PhasePoint& x);

/// One step of the inverse map, realized as iota . T . iota.
std::pair<PhasePoint, ReflectionEvent> inverse_step(const BilliardConfig& cfg,
                                                    const PhasePoint& x);

// -- Phase space <-> oriented-line space --------------------------------------

/// The line through q with direction v: p = q - (q, v) v.
OrientedLine phase_to_line(const PhasePoint& x);
OrientedLine line_through(const Vec& q, const Vec& v);

/// Pre-collision state at the first intersection of the line with the given
/// instance (entry point, incoming v).  A grazing line returns the tangency
/// point.  Throws no_intersection if the line misses the instance.
PhasePoint line_to_phase(const BilliardConfig& cfg, const OrientedLine& l,
                         const ScattererInstance& target);

// -- Charts and Jacobians ------------------------------------------------------

/// Deterministic orthonormal basis of the hyperplane orthogonal to n
/// (Gram-Schmidt over the standard basis, skipping the axis most aligned
/// with n).  Returns d x (d-1).
Mat tangent_frame(const Vec& n);

/// Map a surface-chart coordinate to a surface point: q0 + frame * xi,
/// projected back to {R = 0} along n0.
Vec surface_chart_point(const BilliardConfig& cfg, const ScattererInstance& inst, const Vec& q0,
                        const Vec& n0, const Mat& frame, const Vec& xi);

struct JacobianResult {
    Mat jacobian;      // (2d-2) x (2d-2)
    Mat frame_q_in;    // d x (d-1) tangent frame at x.q
    Mat frame_v_in;    // d x (d-1) frame orthogonal to x.v
    Mat frame_q_out;   // frames at the image point
    Mat frame_v_out;
    PhasePoint image;
};

/// Central finite-difference Jacobian of the billiard map in orthonormal
/// chart coordinates (d-1 surface coordinates, d-1 velocity-hemisphere
/// coordinates), Richardson extrapolated.  Every stencil evaluation must hit
/// the same instance non-tangentially, otherwise stencil_crossing is thrown.
JacobianResult map_jacobian_fd(const BilliardConfig& cfg, const PhasePoint& x, double h);

}  // namespace disperse
