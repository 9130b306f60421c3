#include "disperse/geometry.hpp"

#include "disperse/random.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

namespace disperse {

namespace {

struct BumpTerms {
    double value = 0.0;
    Vec gradient;
    Mat hessian;
};

// amplitude * exp(-1/(1-s)), s = |x-c|^2 / rho^2, zero outside s >= 1.
// Below u = 1-s ~ 1e-3 the factor exp(-1/u) underflows anyway; returning
// exact zero avoids 0 * inf.
BumpTerms bump_terms(const Bump& b, const Vec& x) {
    const int d = static_cast<int>(x.size());
    BumpTerms out;
    out.gradient = Vec::Zero(d);
    out.hessian = Mat::Zero(d, d);
    const Vec dx = x - b.center;
    const double rho2 = b.radius * b.radius;
    const double s = dx.squaredNorm() / rho2;
    const double u = 1.0 - s;
    if (u < 1e-3) return out;

    const double E = std::exp(-1.0 / u);
    const double E1 = -E / (u * u);
    const double E2 = E * (1.0 / (u * u * u * u) - 2.0 / (u * u * u));
    const Vec ds = (2.0 / rho2) * dx;

    out.value = b.amplitude * E;
    out.gradient = b.amplitude * E1 * ds;
    out.hessian = b.amplitude * (E2 * (ds * ds.transpose()) + E1 * (2.0 / rho2) * Mat::Identity(d, d));
    return out;
}

double base_value(const Scatterer& s, const Vec& x) {
    if (s.kind == SurfaceKind::Sphere) return (x - s.center).squaredNorm() - s.radius * s.radius;
    double acc = -1.0;
    for (int i = 0; i < s.dimension(); ++i) {
        const double t = (x[i] - s.center[i]) / s.semi_axes[i];
        acc += t * t;
    }
    return acc;
}

Vec base_gradient(const Scatterer& s, const Vec& x) {
    if (s.kind == SurfaceKind::Sphere) return 2.0 * (x - s.center);
    Vec g(s.dimension());
    for (int i = 0; i < s.dimension(); ++i)
        g[i] = 2.0 * (x[i] - s.center[i]) / (s.semi_axes[i] * s.semi_axes[i]);
    return g;
}

Mat base_hessian(const Scatterer& s, const Vec&) {
    const int d = s.dimension();
    if (s.kind == SurfaceKind::Sphere) return 2.0 * Mat::Identity(d, d);
    Mat h = Mat::Zero(d, d);
    for (int i = 0; i < d; ++i) h(i, i) = 2.0 / (s.semi_axes[i] * s.semi_axes[i]);
    return h;
}

}  // namespace

double Scatterer::value(const Vec& x) const {
    double v = base_value(*this, x);
    for (const Bump& b : bumps) v += bump_terms(b, x).value;
    return v;
}

Vec Scatterer::gradient(const Vec& x) const {
    Vec g = base_gradient(*this, x);
    for (const Bump& b : bumps) g += bump_terms(b, x).gradient;
    return g;
}

Mat Scatterer::hessian(const Vec& x) const {
    Mat h = base_hessian(*this, x);
    for (const Bump& b : bumps) h += bump_terms(b, x).hessian;
    return h;
}

double Scatterer::bounding_radius() const {
    double r = (kind == SurfaceKind::Sphere) ? radius : semi_axes.maxCoeff();
    double amp = 0.0;
    for (const Bump& b : bumps) amp += std::abs(b.amplitude);
    // a bump of size |a| moves the level set by at most ~|a| / |grad R|;
    // 10x is a comfortable cover for the configurations we accept
    return r + 10.0 * amp;
}

double instance_value(const BilliardConfig& cfg, const ScattererInstance& inst, const Vec& x) {
    return cfg.scatterer(inst.id).value(to_base_frame(x, inst));
}

Vec instance_gradient(const BilliardConfig& cfg, const ScattererInstance& inst, const Vec& x) {
    return cfg.scatterer(inst.id).gradient(to_base_frame(x, inst));
}

std::vector<std::vector<int>> multi_indices(int d, int order) {
    std::vector<std::vector<int>> out;
    std::vector<int> alpha(static_cast<size_t>(d), 0);
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
        if (pos == d - 1) {
            alpha[static_cast<size_t>(pos)] = remaining;
            out.push_back(alpha);
            return;
        }
        for (int k = remaining; k >= 0; --k) {
            alpha[static_cast<size_t>(pos)] = k;
            rec(pos + 1, remaining - k);
        }
    };
    if (d > 0 && order >= 0) rec(0, order);
    return out;
}

namespace {

// Nested first-order central differences for a mixed partial, step h per axis.
double nested_central(const std::function<double(const Vec&)>& f, Vec& x, std::vector<int>& alpha,
                      double h) {
    int axis = -1;
    for (size_t i = 0; i < alpha.size(); ++i)
        if (alpha[i] > 0) {
            axis = static_cast<int>(i);
            break;
        }
    if (axis < 0) return f(x);
    alpha[static_cast<size_t>(axis)] -= 1;
    x[axis] += h;
    const double fp = nested_central(f, x, alpha, h);
    x[axis] -= 2.0 * h;
    const double fm = nested_central(f, x, alpha, h);
    x[axis] += h;
    alpha[static_cast<size_t>(axis)] += 1;
    return (fp - fm) / (2.0 * h);
}

}  // namespace

std::pair<double, double> fd_partial(const std::function<double(const Vec&)>& f, const Vec& x,
                                     const std::vector<int>& alpha, double scale) {
    int order = 0;
    for (int a : alpha) order += a;
    if (order == 0) return {f(x), 0.0};
    const double eps = std::numeric_limits<double>::epsilon();
    const double h = std::pow(eps, 1.0 / (order + 2)) * scale;

    Vec xt = x;
    std::vector<int> at = alpha;
    const double coarse = nested_central(f, xt, at, h);
    const double fine = nested_central(f, xt, at, h / 2.0);
    // both stencils are O(h^2); one Richardson step
    const double value = (4.0 * fine - coarse) / 3.0;
    const double err = std::abs(fine - coarse) / 3.0;
    return {value, err};
}

DerivativeBundle eval_scatterer(const Scatterer& s, const Vec& x, int order) {
    if (order > s.derivative_order || order > 4 || order < 0) {
        std::ostringstream msg;
        msg << "derivative order " << order << " unsupported (configured max "
            << std::min(s.derivative_order, 4) << ")";
        throw Error(errc::unsupported_order, msg.str());
    }
    DerivativeBundle out;
    out.value = s.value(x);
    out.gradient = s.gradient(x);
    out.hessian = s.hessian(x);
    if (order >= 3) {
        auto f = [&s](const Vec& y) { return s.value(y); };
        for (int m = 3; m <= order; ++m) {
            for (const auto& alpha : multi_indices(s.dimension(), m)) {
                auto [v, e] = fd_partial(f, x, alpha, 1.0);
                out.higher.push_back({alpha, v, e});
            }
        }
    }
    return out;
}

Vec unit_normal(const Scatterer& s, const Vec& q, const Tolerances& tol) {
    const double r = s.value(q);
    if (std::abs(r) >= tol.on_surface) {
        std::ostringstream msg;
        msg << "point is off the surface: |R(q)| = " << std::abs(r);
        throw Error(errc::off_surface, msg.str());
    }
    const Vec g = s.gradient(q);
    const double n = g.norm();
    if (n < tol.gradient_floor)
        throw Error(errc::degenerate_gradient, "surface gradient below gradient_floor");
    return g / n;
}

Vec surface_point_along(const Scatterer& s, const Vec& u) {
    const Vec dir = u.normalized();
    double hi = s.bounding_radius() * 1.5 + 1e-6;
    double lo = 0.0;
    while (s.value(s.center + hi * dir) <= 0.0) hi *= 1.5;  // bump margins
    // safeguarded Newton on g(t) = R(center + t dir)
    double t = 0.5 * (lo + hi);
    for (int it = 0; it < 100; ++it) {
        const Vec x = s.center + t * dir;
        const double g = s.value(x);
        if (std::abs(g) < 1e-14) break;
        if (g > 0.0)
            hi = t;
        else
            lo = t;
        const double gp = s.gradient(x).dot(dir);
        double tn = (gp != 0.0) ? t - g / gp : 0.5 * (lo + hi);
        if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
        t = tn;
    }
    return s.center + t * dir;
}

Vec closest_surface_point(const Scatterer& s, const Vec& p) {
    const int d = s.dimension();
    Vec x = (p - s.center).norm() > 1e-12 ? surface_point_along(s, p - s.center)
                                          : surface_point_along(s, Vec::Unit(d, 0));
    Vec g = s.gradient(x);
    double lambda = -(x - p).dot(g) / g.squaredNorm();

    // Newton on the projection system  x - p + lambda grad R(x) = 0, R(x) = 0
    Vec res(d + 1);
    auto residual = [&](const Vec& xx, double ll) {
        Vec gg = s.gradient(xx);
        res.head(d) = xx - p + ll * gg;
        res[d] = s.value(xx);
        return res.norm();
    };
    double rn = residual(x, lambda);
    for (int it = 0; it < 80 && rn > 1e-13; ++it) {
        const Vec gg = s.gradient(x);
        const Mat hh = s.hessian(x);
        Mat J = Mat::Zero(d + 1, d + 1);
        J.topLeftCorner(d, d) = Mat::Identity(d, d) + lambda * hh;
        J.block(0, d, d, 1) = gg;
        J.block(d, 0, 1, d) = gg.transpose();
        residual(x, lambda);
        const Vec step = J.partialPivLu().solve(res);
        double damp = 1.0;
        for (int ls = 0; ls < 30; ++ls) {
            const Vec xn = x - damp * step.head(d);
            const double ln = lambda - damp * step[d];
            if (residual(xn, ln) < rn) {
                x = xn;
                lambda = ln;
                break;
            }
            damp *= 0.5;
        }
        rn = residual(x, lambda);
    }
    return x;
}

double body_distance(const Scatterer& s, const Vec& p) {
    if (s.value(p) <= 0.0) return 0.0;
    return (p - closest_surface_point(s, p)).norm();
}

double instance_gap(const Scatterer& a, const Vec& shift_a, const Scatterer& b,
                    const Vec& shift_b) {
    const Vec ca = a.center + shift_a;
    const Vec cb = b.center + shift_b;
    if (a.kind == SurfaceKind::Sphere && b.kind == SurfaceKind::Sphere && a.bumps.empty() &&
        b.bumps.empty()) {
        return (ca - cb).norm() - a.radius - b.radius;
    }
    // alternating projections between the two convex bodies
    Vec x = closest_surface_point(a, cb - shift_a) + shift_a;
    Vec y = x;
    for (int it = 0; it < 60; ++it) {
        y = closest_surface_point(b, x - shift_b) + shift_b;
        const Vec xn = closest_surface_point(a, y - shift_a) + shift_a;
        if ((xn - x).norm() < 1e-13) {
            x = xn;
            break;
        }
        x = xn;
    }
    const double gap = (x - y).norm();
    const bool overlap = b.value(x - shift_b) < 0.0 || a.value(y - shift_a) < 0.0;
    if (!overlap) return gap;
    // penetration magnitude from the midpoint of the centers
    const Vec mid = 0.5 * (ca + cb);
    const Vec pa = closest_surface_point(a, mid - shift_a) + shift_a;
    const Vec pb = closest_surface_point(b, mid - shift_b) + shift_b;
    return -(pa - pb).norm();
}

std::vector<ScattererInstance> enumerate_instances(const BilliardConfig& cfg, const Vec& center,
                                                   double radius) {
    std::vector<ScattererInstance> out;
    const int d = cfg.dimension;
    for (int id = 0; id < static_cast<int>(cfg.scatterers.size()); ++id) {
        const Scatterer& s = cfg.scatterer(id);
        const double reach = radius + s.bounding_radius();
        // conservative box test in the max norm; complete by construction
        IVec lo(d), hi(d);
        bool empty = false;
        for (int i = 0; i < d; ++i) {
            lo[i] = static_cast<int>(std::ceil(center[i] - s.center[i] - reach));
            hi[i] = static_cast<int>(std::floor(center[i] - s.center[i] + reach));
            empty = empty || lo[i] > hi[i];
        }
        if (empty) continue;
        IVec m = lo;
        while (true) {
            out.push_back({id, m});
            int axis = d - 1;
            while (axis >= 0) {
                if (++m[axis] <= hi[axis]) break;
                m[axis] = lo[axis];
                --axis;
            }
            if (axis < 0) break;
        }
    }
    std::sort(out.begin(), out.end(), [](const ScattererInstance& l, const ScattererInstance& r) {
        if (l.id != r.id) return l.id < r.id;
        for (int i = 0; i < l.shift.size(); ++i)
            if (l.shift[i] != r.shift[i]) return l.shift[i] < r.shift[i];
        return false;
    });
    return out;
}

namespace {

double min_hessian_eigenvalue_raw(const Scatterer& s, int n_samples, std::uint64_t seed) {
    Rng rng(seed);
    double min_eig = std::numeric_limits<double>::infinity();
    Eigen::SelfAdjointEigenSolver<Mat> solver;
    for (int i = 0; i < n_samples; ++i) {
        const Vec z = surface_point_along(s, rng.unit_vector(s.dimension()));
        solver.compute(s.hessian(z), Eigen::EigenvaluesOnly);
        min_eig = std::min(min_eig, solver.eigenvalues().minCoeff());
    }
    return min_eig;
}

}  // namespace

double min_hessian_eigenvalue(const Scatterer& s, int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw Error(errc::bad_input, "n_samples must be >= 1");
    const double v = min_hessian_eigenvalue_raw(s, n_samples, seed);
    if (v <= 0.0) {
        std::ostringstream msg;
        msg << "strict convexity violated: min Hessian eigenvalue estimate " << v;
        throw Error(errc::convexity_violation, msg.str());
    }
    return v;
}

double min_hessian_eigenvalue_unchecked(const Scatterer& s, int n_samples, std::uint64_t seed) {
    return min_hessian_eigenvalue_raw(s, n_samples, seed);
}

}  // namespace disperse
