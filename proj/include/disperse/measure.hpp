#pragma once

#include "disperse/billiard.hpp"

#include <functional>
#include <memory>

namespace disperse {

/// A scalar field over a ball, with sampled jet bounds and a precomputed
/// cloud of zero-set points (grid-seeded Newton projections).  smoothness_m
/// is the order for which max_{|alpha| = m-1} |d^alpha F(center)| is bounded
/// away from zero (hypothesis of the tube-volume bound).
struct ScalarFieldSpec {
    std::function<double(const Vec&)> f;
    Vec center;
    double radius = 1.0;
    int smoothness_m = 2;

    double c0_est = 0.0;  // max |d^alpha F(center)|, |alpha| = m-1
    double c1_factor = 0.5;  // tube samples live in B(center, c1_factor * radius)
    double C1_est = 0.0;  // max sampled |d^alpha F|, |alpha| = m

    std::shared_ptr<const std::vector<Vec>> zero_cloud;
};

/// Builds the spec: estimates the jet bounds by finite differences (throws
/// bad_input when the order-(m-1) jet vanishes at the center) and seeds the
/// zero cloud from a regular grid of Newton projections.
ScalarFieldSpec make_field_spec(std::function<double(const Vec&)> f, const Vec& center,
                                double radius, int smoothness_m, int cloud_grid_per_axis = 24);

/// Distance from x to the zero set, estimated as the minimum of a damped
/// Newton projection from x and the nearest neighbor in the zero cloud.
/// Infinity when no zero is reachable.
double zero_set_distance(const ScalarFieldSpec& spec, const Vec& x);

struct TubeEstimate {
    double delta = 0.0;
    double volume_fraction = 0.0;
    double confidence_halfwidth = 0.0;  // 1.96 sqrt(p(1-p)/n)
    long long n_samples = 0;
    std::uint64_t seed = 0;
};

/// Monte Carlo fraction of uniform samples in B(center, c1 * radius) within
/// distance delta of the zero set.  Exact-count deterministic given the seed
/// and independent of the worker count.
TubeEstimate tube_volume(const ScalarFieldSpec& spec, double delta, long long n_samples,
                         std::uint64_t seed);

/// Log-log fit of the tube fraction against delta (CI-weighted).  Throws
/// insufficient_samples if some delta produced a zero count.
ScalingReport scaling_fit(const ScalarFieldSpec& spec, const std::vector<double>& deltas,
                          long long n_samples, std::uint64_t seed);

/// Box in the collision space around a reference outgoing state on one
/// instance: surface-chart offsets up to q_halfwidth, velocity-chart offsets
/// up to v_halfwidth.
struct PhaseWindow {
    ScattererInstance instance;
    Vec q_center;  // on the surface, cover coordinates
    Vec v_center;  // unit, outgoing with margin
    double q_halfwidth = 0.05;
    double v_halfwidth = 0.05;
};

/// Sampling measure for window experiments.  Mu1 is rejection sampling with
/// acceptance weight cos phi (the invariant measure).  ChartUniform drops the
/// weight; it is the right measure when the window touches S itself, where
/// the cos phi density vanishes and would add one power of delta.
enum class WindowMeasure { Mu1, ChartUniform };

/// Measure scaling of the delta-neighborhood of T^{-k} S inside the window:
/// distance to the singularity estimated from a pullback point cloud plus
/// local Newton refinement on the k-step grazing functional.
ScalingReport singularity_tube_measure(const BilliardConfig& cfg, int k, const PhaseWindow& window,
                                       const std::vector<double>& deltas, long long n_samples,
                                       std::uint64_t seed,
                                       WindowMeasure measure = WindowMeasure::Mu1);

/// Number of single-linkage clusters of the cloud at the given gap threshold.
int single_linkage_components(const std::vector<Vec>& cloud, double gap);

}  // namespace disperse
