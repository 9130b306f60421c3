#pragma once

#include "disperse/billiard.hpp"

#include <functional>
#include <optional>

namespace disperse {

/// A line tangent to a scatterer instance: the discriminant system
/// R(p + t v) = 0, d/dt R(p + t v) = 0 holds at t_star to newton_residual,
/// with positive curvature along the line.
struct TangencySolution {
    OrientedLine line;
    double t_star = 0.0;
    Vec q_star;
    double res_f = 0.0;   // |R| at the solution
    double res_df = 0.0;  // |dR/dt| at the solution
};

/// The signed tangency functional of a line with respect to one instance:
/// the minimum of R along the line (negative = crossing, zero = tangent,
/// positive = miss), together with the minimizer parameter.
std::pair<double, double> line_tangency_value(const Scatterer& s, const Vec& shift,
                                              const OrientedLine& l, const Tolerances& tol);

/// Newton solve of the discriminant system from a nearby line: one line
/// coordinate (offset along the in-plane surface normal) and t are free, the
/// remaining 2d-3 line coordinates stay frozen.
TangencySolution solve_tangent_line(const Scatterer& s, const Vec& shift, const OrientedLine& l0,
                                    const Tolerances& tol);

/// `count` tangent lines with distinct tangency points, deterministic given
/// the seed (random surface point + random tangent direction, then polish).
std::vector<TangencySolution> sample_tangency_set(const Scatterer& s, const Vec& shift, int count,
                                                  std::uint64_t seed, const Tolerances& tol);

/// Cap-restricted variant: tangency points within angular radius `cap` of the
/// base tangency and directions within `cap` of its direction.  Local patches
/// of the tangency set are what dimension estimates (local PCA) need.
std::vector<TangencySolution> sample_tangency_set_near(const Scatterer& s, const Vec& shift,
                                                       const TangencySolution& base, double cap,
                                                       int count, std::uint64_t seed,
                                                       const Tolerances& tol);

struct PullbackSample {
    PhasePoint point;       // sample of T^{-k} S
    bool retained = false;
    std::string drop_reason;
};

/// Pull tangency samples on `source` back k steps through the inverse map.
/// Retained samples land tangentially on the source instance after k forward
/// steps; samples whose backward orbit loses the horizon or grazes again are
/// dropped with a reason.
std::vector<PullbackSample> pullback_singularity(const BilliardConfig& cfg,
                                                 const ScattererInstance& source,
                                                 const std::vector<TangencySolution>& tangents,
                                                 int k);

/// Local chart of a semi-neighborhood of the tangency set in line space,
/// built at one tangency solution:
///
///   coords = (slice a in R^{d-2}, upsilon, velocity eta in R^{d-1})
///
/// For fixed direction v(eta) the tangent lines near the base form a
/// (d-2)-parameter family indexed by a; the transverse coordinate is
/// tau = -(min of R along the line), and the chart places lines so that
/// tau = upsilon^2 exactly.  upsilon > 0 is the reflecting side.
struct QuasiRegularChart {
    Scatterer scatterer;  // bumps included; evaluated in the base frame
    Vec shift;
    TangencySolution base;
    Mat slice_frame;     // d x (d-2): directions of the tangency slice in Pi_v
    Vec inplane_normal;  // grad R at the base point, normalized (lies in Pi_v)
    Mat vel_frame;       // d x (d-1): hemisphere frame at the base direction
    double validity = 0.1;
    Tolerances tol;
};

struct ChartCoords {
    Vec slice;              // R^{d-2} (empty when d == 2)
    double upsilon = 0.0;   // signed resolved coordinate, tau = upsilon^2
    Vec velocity;           // R^{d-1}
};

QuasiRegularChart make_quasi_regular_chart(const Scatterer& s, const Vec& shift,
                                           const TangencySolution& base, double lambda0,
                                           const Tolerances& tol);

/// The chart line for given slice/velocity coordinates at depth tau >= 0.
/// tau(chart_line(..., tau, ...)) = tau holds to newton_residual.
OrientedLine chart_line(const QuasiRegularChart& chart, const Vec& slice, double tau,
                        const Vec& velocity);

/// Reflection of the chart line, smoothly continued through upsilon = 0:
/// upsilon > 0 reflects at the entry root (the true billiard reflection),
/// upsilon < 0 reflects at the exit root of the same line (the phantom
/// continuation), upsilon = 0 returns the line itself.
OrientedLine continued_reflection(const QuasiRegularChart& chart, const ChartCoords& coords);

enum class BlowupChart { Tau, Upsilon };

/// Largest singular value of the finite-difference Jacobian of the reflection
/// in chart coordinates along the grid, fitted as log |DT| against log of the
/// grid coordinate.  In the tau chart the slope is -1/2 (derivative blow-up);
/// in the upsilon chart it is ~0 (resolved).
ScalingReport derivative_blowup_exponent(const QuasiRegularChart& chart,
                                         const std::vector<double>& tau_grid, BlowupChart kind);

/// Even/odd resolution table of a 1-parameter sampler along the upsilon line:
/// F(u) = G+(u^2) + u G-(u^2) exactly at the grid nodes.
struct ResolutionTable {
    std::vector<double> upsilon;  // positive grid
    std::vector<double> tau;      // upsilon^2
    std::vector<double> g_plus;
    std::vector<double> g_minus;
    double recon_residual = 0.0;  // max |G+ + u G- - F(u)| over nodes
};

ResolutionTable even_odd_decompose(const std::function<double(double)>& sampler,
                                   const std::vector<double>& upsilon_grid);

/// Evaluate the table by local cubic interpolation in tau.
double table_g_plus(const ResolutionTable& table, double tau);
double table_g_minus(const ResolutionTable& table, double tau);

/// Agreement of the resolved level-set equation G+^2 = x_n G-^2 with the
/// sampled F at probe points x_n >= 0: returns the maximum over probes of
/// |G+^2 - x_n G-^2 - F(sqrt(x_n)) F(-sqrt(x_n))| with G interpolated from
/// the table.
double resolved_level_check(const std::function<double(double)>& sampler,
                            const ResolutionTable& table, const std::vector<double>& probes);

/// Smallest order m <= max_order with some |d^alpha F(x0)| > tol, |alpha| = m,
/// by Richardson-refined central differences.  nullopt = exceeds the cap.
std::optional<int> jet_nonvanishing_order(const std::function<double(const Vec&)>& f,
                                          const Vec& x0, int max_order, double tol);

}  // namespace disperse
