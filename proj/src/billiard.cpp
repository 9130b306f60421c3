#include "disperse/billiard.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace disperse {

namespace {

// f(t) = R(q + t v) and its first two t-derivatives for one instance.
struct RayField {
    const Scatterer& s;
    Vec q;  // already in the base frame of the instance
    Vec v;

    double f(double t) const { return s.value(q + t * v); }
    double df(double t) const { return s.gradient(q + t * v).dot(v); }
    double d2f(double t) const {
        const Vec x = q + t * v;
        return v.dot(s.hessian(x) * v);
    }
};

// Safeguarded Newton for f = 0 on a bracket with f(lo) > 0 > f(hi).  Once
// below tol, a few extra Newton steps push the root to the rounding floor
// (reversibility depends on per-step accuracy).
double polish_root(const RayField& ray, double lo, double hi, double tol) {
    double t = 0.5 * (lo + hi);
    double f = ray.f(t);
    for (int it = 0; it < 200 && std::abs(f) >= tol; ++it) {
        if (f > 0.0)
            lo = t;
        else
            hi = t;
        const double d = ray.df(t);
        double tn = (d != 0.0) ? t - f / d : 0.5 * (lo + hi);
        if (!(tn > std::min(lo, hi) && tn < std::max(lo, hi))) tn = 0.5 * (lo + hi);
        if (tn == t) break;
        t = tn;
        f = ray.f(t);
    }
    for (int extra = 0; extra < 3; ++extra) {
        const double d = ray.df(t);
        if (d == 0.0) break;
        const double tn = t - f / d;
        const double fn = ray.f(tn);
        if (!(std::abs(fn) < std::abs(f))) break;
        t = tn;
        f = fn;
    }
    return t;
}

// Safeguarded Newton for df = 0 (the minimizer) on a bracket with
// df(lo) < 0 < df(hi).
double polish_minimum(const RayField& ray, double lo, double hi) {
    double t = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double d = ray.df(t);
        if (std::abs(d) < 1e-15) return t;
        if (d < 0.0)
            lo = t;
        else
            hi = t;
        const double dd = ray.d2f(t);
        double tn = (dd > 0.0) ? t - d / dd : 0.5 * (lo + hi);
        if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
        if (tn == t) return t;
        t = tn;
    }
    return t;
}

struct InstanceHit {
    double t;
    bool grazing;  // |min of R along the ray| <= newton_residual
};

// March the ray across one instance and return its first surface root or
// grazing point in (t_lo, t_hi].  R along a ray is convex for the admissible
// bodies (bumps only wiggle it below the marching scale), so every passage is
// either a bracketed sign change of f (transversal entry) or a bracketed sign
// change of df whose polished minimum classifies the passage: crossing,
// grazing, or miss.
std::optional<InstanceHit> first_root_on_instance(const Scatterer& s, const Vec& q_local,
                                                  const Vec& v, double t_lo, double t_hi,
                                                  double step, double res) {
    const Vec oc = s.center - q_local;
    const double tc = oc.dot(v);
    const double d2 = (oc - tc * v).squaredNorm();
    const double br = s.bounding_radius() + step;
    if (d2 >= br * br) return std::nullopt;
    const double w = std::sqrt(br * br - d2) + 2.0 * step;
    const double a = std::max(t_lo, tc - w);
    const double b = std::min(t_hi, tc + w);
    if (a >= b) return std::nullopt;

    RayField ray{s, q_local, v};
    const int n_nodes = std::max(2, static_cast<int>(std::ceil((b - a) / step)) + 1);
    const double dt = (b - a) / (n_nodes - 1);

    double t_prev = a;
    double f_prev = ray.f(t_prev);
    double df_prev = ray.df(t_prev);
    if (f_prev < -res)
        throw Error(errc::invalid_start, "ray enters the scan interval inside a body");
    double t_pos = t_prev;  // last node safely outside the surface
    for (int k = 1; k < n_nodes; ++k) {
        const double t_k = a + k * dt;
        const double f_k = ray.f(t_k);
        const double df_k = ray.df(t_k);

        if (df_prev < 0.0 && df_k >= 0.0) {
            // the minimum of this passage is bracketed: classify it
            const double t_star = polish_minimum(ray, t_prev, t_k);
            const double m = ray.f(t_star);
            if (m < -res) return InstanceHit{polish_root(ray, t_pos, t_star, res), false};
            if (m <= res) return InstanceHit{t_star, true};
        } else if (f_prev > res && f_k < -res) {
            // crossed well below the residual band before the minimum was
            // bracketed (a node may land inside a grazing dip otherwise)
            return InstanceHit{polish_root(ray, t_prev, t_k, res), false};
        }
        t_prev = t_k;
        f_prev = f_k;
        df_prev = df_k;
        if (f_k > res) t_pos = t_k;
    }
    return std::nullopt;
}

double march_step(const BilliardConfig& cfg) {
    double step = cfg.tau0 / 10.0;
    for (const Scatterer& s : cfg.scatterers) {
        step = std::min(step, s.bounding_radius() / 4.0);
        for (const Bump& b : s.bumps) step = std::min(step, b.radius / 4.0);
    }
    return step;
}

ReflectionEvent make_event(const BilliardConfig& cfg, const ScattererInstance& inst, const Vec& q,
                           const Vec& v, double t) {
    ReflectionEvent ev;
    ev.instance = inst;
    ev.t_flight = t;
    ev.q_hit = q + t * v;
    const Vec g = instance_gradient(cfg, inst, ev.q_hit);
    const double gn = g.norm();
    if (gn < cfg.tol.gradient_floor)
        throw Error(errc::degenerate_gradient, "surface gradient below gradient_floor at hit");
    ev.cos_phi = -v.dot(g) / gn;
    ev.tangency = std::abs(ev.cos_phi) < cfg.tol.tangency_cos;
    return ev;
}

}  // namespace

std::optional<ReflectionEvent> first_hit(const BilliardConfig& cfg, const Vec& q, const Vec& v,
                                         double t_min) {
    const double t_hi = cfg.horizon_bound;
    if (t_min >= t_hi) return std::nullopt;
    const double half = 0.5 * (t_hi - t_min);
    const Vec mid = q + (t_min + half) * v;
    const auto candidates = enumerate_instances(cfg, mid, half);

    // interior start is excluded (multiple-collision assumption)
    for (const auto& inst : candidates) {
        if (instance_value(cfg, inst, q) < -cfg.tol.on_surface)
            throw Error(errc::invalid_start, "ray origin lies strictly inside a scatterer body");
    }

    const double step = march_step(cfg);
    const double res = cfg.tol.newton_residual;

    std::optional<ReflectionEvent> best;
    double second_t = std::numeric_limits<double>::infinity();
    for (const auto& inst : candidates) {
        const Vec q_local = to_base_frame(q, inst);
        const auto hit =
            first_root_on_instance(cfg.scatterer(inst.id), q_local, v, t_min, t_hi, step, res);
        if (!hit) continue;
        if (!best || hit->t < best->t_flight) {
            if (best) second_t = std::min(second_t, best->t_flight);
            best = make_event(cfg, inst, q, v, hit->t);
        } else {
            second_t = std::min(second_t, hit->t);
        }
    }
    if (best && std::isfinite(second_t) && std::abs(second_t - best->t_flight) < cfg.tau0 / 2.0) {
        std::ostringstream msg;
        msg << "multiple collision: hits at t = " << best->t_flight << " and " << second_t;
        throw Error(errc::multiple_collision, msg.str());
    }
    return best;
}

Vec reflect_velocity(const Vec& v, const Vec& n) { return v - 2.0 * v.dot(n) * n; }

double outgoing_cos_phi(const BilliardConfig& cfg, const PhasePoint& x) {
    const Vec g = instance_gradient(cfg, x.instance, x.q);
    return x.v.dot(g) / g.norm();
}

std::pair<PhasePoint, ReflectionEvent> billiard_step(const BilliardConfig& cfg,
                                                     const PhasePoint& x) {
    auto ev = first_hit(cfg, x.q, x.v, cfg.tau0 / 2.0);
    if (!ev) throw Error(errc::no_intersection, "no collision within the horizon bound");
    PhasePoint out;
    out.instance = ev->instance;
    out.q = ev->q_hit;
    if (ev->tangency) {
        out.v = x.v;  // grazing passes through
    } else {
        const Vec g = instance_gradient(cfg, ev->instance, ev->q_hit);
        out.v = reflect_velocity(x.v, g / g.norm());
    }
    return {out, *ev};
}

TrajectoryRecord billiard_map_n(const BilliardConfig& cfg, const PhasePoint& x, int n,
                                bool abort_on_tangency) {
    TrajectoryRecord rec;
    rec.initial = x;
    rec.final_point = x;
    rec.reason = Termination::Completed;
    PhasePoint cur = x;
    for (int k = 0; k < n; ++k) {
        std::optional<ReflectionEvent> ev;
        try {
            auto [next, event] = billiard_step(cfg, cur);
            ev = event;
            cur = next;
        } catch (const Error& e) {
            if (e.code() == errc::no_intersection) {
                rec.reason = Termination::NoHit;
                break;
            }
            throw;
        }
        rec.events.push_back(*ev);
        rec.final_point = cur;
        if (ev->tangency && abort_on_tangency) {
            rec.reason = Termination::TangencyAbort;
            break;
        }
    }
    return rec;
}

PhasePoint reverse_state(const BilliardConfig& cfg, const PhasePoint& x) {
    const Vec g = instance_gradient(cfg, x.instance, x.q);
    const Vec n = g / g.norm();
    PhasePoint out = x;
    out.v = -x.v + 2.0 * x.v.dot(n) * n;
    return out;
}

std::pair<PhasePoint, ReflectionEvent> inverse_step(const BilliardConfig& cfg,
                                                    const PhasePoint& x) {
    auto [y, ev] = billiard_step(cfg, reverse_state(cfg, x));
    return {reverse_state(cfg, y), ev};
}

OrientedLine line_through(const Vec& q, const Vec& v) { return {q - q.dot(v) * v, v}; }

OrientedLine phase_to_line(const PhasePoint& x) { return line_through(x.q, x.v); }

PhasePoint line_to_phase(const BilliardConfig& cfg, const OrientedLine& l,
                         const ScattererInstance& target) {
    const Scatterer& s = cfg.scatterer(target.id);
    const Vec p_local = to_base_frame(l.p, target);
    RayField ray{s, p_local, l.v};

    const Vec oc = s.center - p_local;
    const double tc = oc.dot(l.v);
    const double res = cfg.tol.newton_residual;
    const double step = march_step(cfg);
    const double w = s.bounding_radius() + 4.0 * step;
    const double d2 = (oc - tc * l.v).squaredNorm();
    if (d2 >= w * w) throw Error(errc::no_intersection, "line misses the target instance");

    // single minimum along the line for a strictly convex body
    double lo = tc - w, hi = tc + w;
    while (ray.df(lo) > 0.0) lo -= step;
    while (ray.df(hi) < 0.0) hi += step;
    const double t_star = polish_minimum(ray, lo, hi);
    const double m = ray.f(t_star);
    if (m > res) throw Error(errc::no_intersection, "line misses the target instance");

    double t_hit = t_star;
    if (m < -res) t_hit = polish_root(ray, lo, t_star, res);  // entry point

    PhasePoint out;
    out.instance = target;
    out.q = l.p + t_hit * l.v;
    out.v = l.v;
    return out;
}

Mat tangent_frame(const Vec& n) {
    const int d = static_cast<int>(n.size());
    int skip = 0;
    for (int i = 1; i < d; ++i)
        if (std::abs(n[i]) > std::abs(n[skip])) skip = i;
    Mat frame(d, d - 1);
    int col = 0;
    for (int i = 0; i < d; ++i) {
        if (i == skip) continue;
        Vec e = Vec::Unit(d, i);
        e -= e.dot(n) * n;
        for (int j = 0; j < col; ++j) e -= e.dot(frame.col(j)) * frame.col(j);
        frame.col(col++) = e.normalized();
    }
    return frame;
}

Vec surface_chart_point(const BilliardConfig& cfg, const ScattererInstance& inst, const Vec& q0,
                        const Vec& n0, const Mat& frame, const Vec& xi) {
    const Scatterer& s = cfg.scatterer(inst.id);
    Vec y = q0 + frame * xi;
    double t = 0.0;
    for (int it = 0; it < cfg.tol.newton_max_iter; ++it) {
        const Vec x = to_base_frame(y, inst) + t * n0;
        const double f = s.value(x);
        if (std::abs(f) < cfg.tol.newton_residual) return y + t * n0;
        const double d = s.gradient(x).dot(n0);
        if (d == 0.0) break;
        t -= f / d;
    }
    throw NoConvergence("surface chart projection failed", y, 0.0);
}

namespace {

// Chart coordinates of a phase point near a reference point: orthonormal
// surface offsets and gnomonic velocity coordinates.
Vec out_coordinates(const PhasePoint& ref, const Mat& fq, const Mat& fv, const PhasePoint& y) {
    const int d = static_cast<int>(ref.q.size());
    Vec c(2 * (d - 1));
    c.head(d - 1) = fq.transpose() * (y.q - ref.q);
    const double along = ref.v.dot(y.v);
    c.tail(d - 1) = (fv.transpose() * y.v) / along;
    return c;
}

}  // namespace

JacobianResult map_jacobian_fd(const BilliardConfig& cfg, const PhasePoint& x, double h) {
    const int d = cfg.dimension;
    const double margin = 10.0 * cfg.tol.tangency_cos;
    if (std::abs(outgoing_cos_phi(cfg, x)) <= margin)
        throw Error(errc::bad_input, "base point is tangent (or nearly so)");

    JacobianResult result;
    const Vec g = instance_gradient(cfg, x.instance, x.q);
    const Vec n = g / g.norm();
    result.frame_q_in = tangent_frame(n);
    result.frame_v_in = tangent_frame(x.v);

    auto [img, ev] = billiard_step(cfg, x);
    if (ev.tangency || std::abs(ev.cos_phi) <= margin)
        throw Error(errc::bad_input, "image of the base point is tangent (or nearly so)");
    result.image = img;
    const Vec g_out = instance_gradient(cfg, img.instance, img.q);
    result.frame_q_out = tangent_frame(g_out / g_out.norm());
    result.frame_v_out = tangent_frame(img.v);

    auto eval = [&](const Vec& coords) {
        const Vec xi = coords.head(d - 1);
        const Vec eta = coords.tail(d - 1);
        PhasePoint p;
        p.instance = x.instance;
        p.q = surface_chart_point(cfg, x.instance, x.q, n, result.frame_q_in, xi);
        p.v = (x.v + result.frame_v_in * eta).normalized();
        auto [y, e] = billiard_step(cfg, p);
        if (e.tangency || !(y.instance == img.instance))
            throw Error(errc::stencil_crossing, "stencil point crosses a singularity");
        return out_coordinates(img, result.frame_q_out, result.frame_v_out, y);
    };

    const int dim = 2 * (d - 1);
    auto jac_at = [&](double hh) {
        Mat J(dim, dim);
        Vec coords = Vec::Zero(dim);
        for (int k = 0; k < dim; ++k) {
            coords[k] = hh;
            const Vec fp = eval(coords);
            coords[k] = -hh;
            const Vec fm = eval(coords);
            coords[k] = 0.0;
            J.col(k) = (fp - fm) / (2.0 * hh);
        }
        return J;
    };

    const Mat coarse = jac_at(h);
    const Mat fine = jac_at(h / 2.0);
    result.jacobian = (4.0 * fine - coarse) / 3.0;
    return result;
}

}  // namespace disperse
