#pragma once

#include "disperse/billiard.hpp"
#include "disperse/random.hpp"

#include <cmath>
#include <optional>

namespace disperse::testing {

inline Vec vec2(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

inline Vec vec3(double x, double y, double z) {
    Vec v(3);
    v << x, y, z;
    return v;
}

inline Scatterer make_sphere(int id, const Vec& center, double radius) {
    Scatterer s;
    s.id = id;
    s.kind = SurfaceKind::Sphere;
    s.center = center;
    s.radius = radius;
    return s;
}

inline Scatterer make_ellipsoid(int id, const Vec& center, const Vec& semi_axes) {
    Scatterer s;
    s.id = id;
    s.kind = SurfaceKind::Ellipsoid;
    s.center = center;
    s.semi_axes = semi_axes;
    return s;
}

/// One sphere at the cell center: open horizon along both axes.
inline BilliardConfig scene_single_sphere_d2() {
    BilliardConfig cfg;
    cfg.dimension = 2;
    cfg.scatterers = {make_sphere(0, vec2(0.5, 0.5), 0.2)};
    cfg.horizon_bound = 2.0;
    cfg.tau0 = 0.05;
    return cfg;
}

/// Corner disk + center disk: finite horizon (max free flight ~1.63),
/// minimal gap ~0.0271.
inline BilliardConfig scene_two_disk_d2() {
    BilliardConfig cfg;
    cfg.dimension = 2;
    cfg.scatterers = {make_sphere(0, vec2(0.0, 0.0), 0.38), make_sphere(1, vec2(0.5, 0.5), 0.30)};
    cfg.horizon_bound = 2.0;
    cfg.tau0 = 0.02;
    return cfg;
}

/// Two equal disks side by side: hosts the axis-aligned period-2 orbit
/// between (0.4, 0.5) and (0.6, 0.5).
inline BilliardConfig scene_period2_d2() {
    BilliardConfig cfg;
    cfg.dimension = 2;
    cfg.scatterers = {make_sphere(0, vec2(0.25, 0.5), 0.15), make_sphere(1, vec2(0.75, 0.5), 0.15)};
    cfg.horizon_bound = 2.0;
    cfg.tau0 = 0.1;
    return cfg;
}

/// Densely packed d = 3 scene (center + corner sphere): short flights and
/// mild expansion, the fixture for round-trip accuracy experiments.
inline BilliardConfig scene_dense_d3() {
    BilliardConfig cfg;
    cfg.dimension = 3;
    cfg.scatterers = {make_sphere(0, vec3(0.5, 0.5, 0.5), 0.48),
                      make_sphere(1, vec3(0.0, 0.0, 0.0), 0.34)};
    cfg.horizon_bound = 2.0;
    cfg.tau0 = 0.03;
    return cfg;
}

/// Generic three-sphere scene in d = 3 (open horizon; minimal gap ~0.21).
inline BilliardConfig scene_three_sphere_d3() {
    BilliardConfig cfg;
    cfg.dimension = 3;
    cfg.scatterers = {make_sphere(0, vec3(0.20, 0.30, 0.40), 0.16),
                      make_sphere(1, vec3(0.65, 0.20, 0.70), 0.18),
                      make_sphere(2, vec3(0.40, 0.75, 0.15), 0.17)};
    cfg.horizon_bound = 4.0;
    cfg.tau0 = 0.1;
    return cfg;
}

/// Random outgoing boundary state (uniform surface direction, cosine-biased
/// hemisphere would be overkill for fixtures).
inline PhasePoint random_outgoing_state(const BilliardConfig& cfg, Rng& rng,
                                        double min_cos = 0.0) {
    const int d = cfg.dimension;
    for (;;) {
        const int id = static_cast<int>(rng.next_u64() % cfg.scatterers.size());
        const Scatterer& s = cfg.scatterer(id);
        PhasePoint x;
        x.instance = {id, IVec::Zero(d)};
        x.q = surface_point_along(s, rng.unit_vector(d));
        const Vec n = s.gradient(x.q).normalized();
        Vec v = rng.unit_vector(d);
        if (v.dot(n) < 0.0) v = reflect_velocity(v, n);
        if (v.dot(n) <= min_cos) continue;
        x.v = v;
        return x;
    }
}

/// Analytic first hit of a ray against every sphere translate within the
/// horizon: quadratic-formula oracle, independent of the marching solver.
/// Only valid for all-sphere scenes without bumps.
inline std::optional<double> analytic_sphere_first_hit(const BilliardConfig& cfg, const Vec& q,
                                                       const Vec& v, double t_min) {
    double best = std::numeric_limits<double>::infinity();
    const int d = cfg.dimension;
    const int reach = static_cast<int>(std::ceil(cfg.horizon_bound)) + 1;
    for (const Scatterer& s : cfg.scatterers) {
        IVec m = IVec::Constant(d, -reach);
        while (true) {
            const Vec c = s.center + m.cast<double>();
            const Vec oc = q - c;
            const double b = oc.dot(v);
            const double disc = b * b - (oc.squaredNorm() - s.radius * s.radius);
            if (disc > 0.0) {
                const double t = -b - std::sqrt(disc);
                if (t > t_min && t < best) best = t;
            }
            int axis = d - 1;
            while (axis >= 0) {
                if (++m[axis] <= reach) break;
                m[axis] = -reach;
                --axis;
            }
            if (axis < 0) break;
        }
    }
    if (best > cfg.horizon_bound) return std::nullopt;
    return best;
}

}  // namespace disperse::testing
