#include "disperse/singularity.hpp"

#include "disperse/random.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace disperse {

namespace {

struct LineField {
    const Scatterer& s;
    Vec p_local;  // line foot point in the base frame
    Vec v;

    Vec at(double t) const { return p_local + t * v; }
    double f(double t) const { return s.value(at(t)); }
    double df(double t) const { return s.gradient(at(t)).dot(v); }
    double d2f(double t) const { return v.dot(s.hessian(at(t)) * v); }
};

// Minimizer of R along the full line (unique for a strictly convex body when
// the line passes near it).  Throws no_minimum when the line stays far away.
double line_minimizer(const LineField& ray, const Tolerances& tol) {
    const Vec oc = ray.s.center - ray.p_local;
    double t = oc.dot(ray.v);  // closest approach to the center
    const double reach = ray.s.bounding_radius();
    if ((oc - t * ray.v).norm() > reach + 0.5)
        throw Error(errc::no_minimum, "line too far from the scatterer for a surface minimizer");
    double lo = t - 2.0 * reach - 1.0, hi = t + 2.0 * reach + 1.0;
    for (int it = 0; it < 2 * tol.newton_max_iter; ++it) {
        const double d = ray.df(t);
        if (std::abs(d) < tol.newton_residual) return t;
        if (d < 0.0)
            lo = t;
        else
            hi = t;
        const double dd = ray.d2f(t);
        double tn = (dd > 0.0) ? t - d / dd : 0.5 * (lo + hi);
        if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
        t = tn;
    }
    return t;
}

}  // namespace

std::pair<double, double> line_tangency_value(const Scatterer& s, const Vec& shift,
                                              const OrientedLine& l, const Tolerances& tol) {
    LineField ray{s, l.p - shift, l.v};
    const double t_star = line_minimizer(ray, tol);
    return {ray.f(t_star), t_star};
}

TangencySolution solve_tangent_line(const Scatterer& s, const Vec& shift, const OrientedLine& l0,
                                    const Tolerances& tol) {
    // Freeze the direction and all but one line coordinate; free coordinates
    // are (offset of p along the in-plane surface normal, t).
    LineField ray{s, l0.p - shift, l0.v};
    double t = line_minimizer(ray, tol);

    Vec g = s.gradient(ray.at(t));
    Vec w = g - g.dot(l0.v) * l0.v;  // in-plane transverse direction
    if (w.norm() < tol.gradient_floor)
        throw NoConvergence("degenerate transverse direction", l0.p, g.norm());
    w.normalize();

    double sigma = 0.0;  // offset of the foot point along w
    auto field_at = [&](double sig) { return LineField{s, l0.p + sig * w - shift, l0.v}; };

    double rf = ray.f(t), rdf = ray.df(t);
    int it = 0;
    for (; it < tol.newton_max_iter; ++it) {
        if (std::abs(rf) < tol.newton_residual && std::abs(rdf) < tol.newton_residual) break;
        const LineField cur = field_at(sigma);
        const Vec x = cur.at(t);
        const Vec grad = s.gradient(x);
        const Mat hess = s.hessian(x);
        // Jacobian of (f, df) with respect to (sigma, t)
        Mat J(2, 2);
        J(0, 0) = grad.dot(w);
        J(0, 1) = grad.dot(l0.v);
        J(1, 0) = l0.v.dot(hess * w);
        J(1, 1) = l0.v.dot(hess * l0.v);
        const Eigen::Vector2d r(rf, rdf);
        const Eigen::Vector2d step = J.partialPivLu().solve(r);
        sigma -= step[0];
        t -= step[1];
        const LineField nxt = field_at(sigma);
        rf = nxt.f(t);
        rdf = nxt.df(t);
    }
    if (!(std::abs(rf) < tol.newton_residual && std::abs(rdf) < tol.newton_residual)) {
        Vec last(2);
        last << sigma, t;
        throw NoConvergence("tangent-line Newton did not converge", last,
                            std::max(std::abs(rf), std::abs(rdf)));
    }

    TangencySolution sol;
    const Vec foot = l0.p + sigma * w;
    sol.line = line_through(foot, l0.v);
    sol.t_star = t + (foot - sol.line.p).dot(l0.v);  // reparametrize to the new foot
    sol.q_star = sol.line.p + sol.t_star * l0.v;
    LineField fin{s, sol.line.p - shift, sol.line.v};
    sol.res_f = std::abs(fin.f(sol.t_star));
    sol.res_df = std::abs(fin.df(sol.t_star));
    return sol;
}

std::vector<TangencySolution> sample_tangency_set(const Scatterer& s, const Vec& shift, int count,
                                                  std::uint64_t seed, const Tolerances& tol) {
    std::vector<TangencySolution> out;
    out.reserve(static_cast<size_t>(std::max(count, 0)));
    const int d = s.dimension();
    Rng rng(seed);
    while (static_cast<int>(out.size()) < count) {
        const Vec z_local = surface_point_along(s, rng.unit_vector(d));
        const Vec n = s.gradient(z_local).normalized();
        Vec v = rng.unit_vector(d);
        v -= v.dot(n) * n;
        if (v.norm() < 1e-8) continue;
        v.normalize();
        // the line through a surface point with tangent direction is tangent
        const OrientedLine guess = line_through(z_local + shift, v);
        try {
            out.push_back(solve_tangent_line(s, shift, guess, tol));
        } catch (const NoConvergence&) {
            continue;
        }
    }
    return out;
}

std::vector<TangencySolution> sample_tangency_set_near(const Scatterer& s, const Vec& shift,
                                                       const TangencySolution& base, double cap,
                                                       int count, std::uint64_t seed,
                                                       const Tolerances& tol) {
    std::vector<TangencySolution> out;
    out.reserve(static_cast<size_t>(std::max(count, 0)));
    const int d = s.dimension();
    Rng rng(seed);
    const Vec u_base = (base.q_star - shift - s.center).normalized();
    while (static_cast<int>(out.size()) < count) {
        const Vec u = (u_base + cap * rng.unit_vector(d)).normalized();
        const Vec z_local = surface_point_along(s, u);
        const Vec n = s.gradient(z_local).normalized();
        Vec v = base.line.v + cap * rng.unit_vector(d);
        v -= v.dot(n) * n;
        if (v.norm() < 1e-8) continue;
        v.normalize();
        const OrientedLine guess = line_through(z_local + shift, v);
        try {
            out.push_back(solve_tangent_line(s, shift, guess, tol));
        } catch (const NoConvergence&) {
            continue;
        }
    }
    return out;
}

namespace {

// Signed tangency value of the forward (k-1)-step image with respect to the
// source instance: the smooth functional whose zero locus is T^{-k} S near
// the sample.  Defined on both the crossing and the missing side.
std::optional<double> pullback_defect(const BilliardConfig& cfg, const ScattererInstance& source,
                                      int k, const PhasePoint& x) {
    try {
        PhasePoint cur = x;
        for (int s = 0; s + 1 < k; ++s) cur = billiard_step(cfg, cur).first;
        const auto [fbar, t_star] =
            line_tangency_value(cfg.scatterer(source.id), source.shift.cast<double>(),
                                phase_to_line(cur), cfg.tol);
        return fbar;
    } catch (const Error&) {
        return std::nullopt;
    }
}

// One-dimensional Newton transverse to the singularity: rotate the velocity
// until the forward orbit grazes the source to within the grazing band.
// Backward iteration alone loses accuracy to hyperbolic growth for k >= 2.
bool polish_pullback(const BilliardConfig& cfg, const ScattererInstance& source, int k,
                     PhasePoint& x) {
    const Mat frame = tangent_frame(x.v);
    const Vec b = frame.col(0);
    auto value = [&](double s) -> std::optional<double> {
        PhasePoint y = x;
        y.v = (x.v + s * b).normalized();
        return pullback_defect(cfg, source, k, y);
    };
    double s = 0.0;
    auto f = value(s);
    if (!f) return false;
    const double target = 0.1 * cfg.tol.newton_residual;
    for (int it = 0; it < 8 && std::abs(*f) > target; ++it) {
        const double h = 1e-7;
        const auto fp = value(s + h), fm = value(s - h);
        if (!fp || !fm) return false;
        const double d = (*fp - *fm) / (2.0 * h);
        if (d == 0.0) return false;
        const double sn = s - *f / d;
        const auto fn = value(sn);
        if (!fn) return false;
        s = sn;
        f = fn;
    }
    if (!(std::abs(*f) <= cfg.tol.newton_residual)) return false;
    x.v = (x.v + s * b).normalized();
    return true;
}

}  // namespace

std::vector<PullbackSample> pullback_singularity(const BilliardConfig& cfg,
                                                 const ScattererInstance& source,
                                                 const std::vector<TangencySolution>& tangents,
                                                 int k) {
    std::vector<PullbackSample> out;
    out.reserve(tangents.size());
    for (const TangencySolution& t : tangents) {
        PullbackSample sample;
        PhasePoint x;
        x.instance = source;
        x.q = t.q_star;
        x.v = t.line.v;  // tangent state: outgoing and incoming coincide
        sample.point = x;
        sample.retained = true;
        for (int step = 0; step < k && sample.retained; ++step) {
            try {
                auto [prev, ev] = inverse_step(cfg, sample.point);
                if (ev.tangency) {
                    sample.retained = false;
                    sample.drop_reason = "backward orbit grazes again";
                    break;
                }
                sample.point = prev;
            } catch (const Error& e) {
                sample.retained = false;
                sample.drop_reason = e.code() == errc::no_intersection
                                         ? "backward orbit leaves the horizon"
                                         : e.what();
            }
        }
        if (sample.retained && k >= 1) {
            if (!polish_pullback(cfg, source, k, sample.point)) {
                sample.retained = false;
                sample.drop_reason = "pullback polish failed";
            }
        }
        out.push_back(std::move(sample));
    }
    return out;
}

// -- Quasi-regular chart -------------------------------------------------------

QuasiRegularChart make_quasi_regular_chart(const Scatterer& s, const Vec& shift,
                                           const TangencySolution& base, double lambda0,
                                           const Tolerances& tol) {
    QuasiRegularChart chart{s, shift, base, Mat(), Vec(), Mat(), 0.1, tol};
    const int d = s.dimension();
    const Vec q_local = base.q_star - shift;
    Vec n = s.gradient(q_local).normalized();  // orthogonal to v at a tangency
    chart.inplane_normal = n;
    chart.vel_frame = tangent_frame(base.line.v);

    // slice directions: orthogonal complement of {v, n}
    Mat slice(d, std::max(d - 2, 0));
    int col = 0;
    for (int i = 0; i < d && col < d - 2; ++i) {
        Vec e = Vec::Unit(d, i);
        e -= e.dot(base.line.v) * base.line.v;
        e -= e.dot(n) * n;
        for (int j = 0; j < col; ++j) e -= e.dot(slice.col(j)) * slice.col(j);
        if (e.norm() < 1e-6) continue;
        slice.col(col++) = e.normalized();
    }
    if (col != d - 2)
        throw Error(errc::bad_input, "could not build the tangency slice frame");
    chart.slice_frame = slice;
    chart.validity = std::min(0.1, 0.5 * lambda0);
    return chart;
}

namespace {

// Tangency point of direction v near the chart base with prescribed slice
// coordinates: solve R(z) = 0, (grad R(z), v) = 0, (u_i, z - q*) = a_i.
Vec slice_tangency_point(const QuasiRegularChart& chart, const Vec& slice, const Vec& v) {
    const Scatterer& s = chart.scatterer;
    const int d = s.dimension();
    Vec z = chart.base.q_star - chart.shift;
    for (int it = 0; it < chart.tol.newton_max_iter; ++it) {
        const Vec g = s.gradient(z);
        const Mat h = s.hessian(z);
        Vec r(d);
        r[0] = s.value(z);
        r[1] = g.dot(v);
        for (int i = 0; i < d - 2; ++i)
            r[2 + i] = chart.slice_frame.col(i).dot(z - (chart.base.q_star - chart.shift)) -
                       slice[i];
        if (r.cwiseAbs().maxCoeff() < chart.tol.newton_residual) return z;
        Mat J(d, d);
        J.row(0) = g.transpose();
        J.row(1) = (h * v).transpose();
        for (int i = 0; i < d - 2; ++i) J.row(2 + i) = chart.slice_frame.col(i).transpose();
        z -= J.partialPivLu().solve(r);
    }
    throw NoConvergence("slice tangency point did not converge", z, 0.0);
}

}  // namespace

OrientedLine chart_line(const QuasiRegularChart& chart, const Vec& slice, double tau,
                        const Vec& velocity) {
    if (tau < 0.0) throw Error(errc::out_of_chart, "tau must be nonnegative");
    const double extent =
        std::sqrt(tau) + (slice.size() ? slice.cwiseAbs().maxCoeff() : 0.0) +
        (velocity.size() ? velocity.cwiseAbs().maxCoeff() : 0.0);
    if (extent > chart.validity)
        throw Error(errc::out_of_chart, "coordinates exceed the chart validity radius");

    const Vec v = (chart.base.line.v + chart.vel_frame * velocity).normalized();
    const Vec z = slice_tangency_point(chart, slice, v);
    const Vec n = chart.scatterer.gradient(z).normalized();  // in Pi_v by construction

    if (tau == 0.0) return line_through(z + chart.shift, v);

    // displace the line into the body so that -min(R along line) = tau
    const double gn = chart.scatterer.gradient(z).norm();
    double delta = tau / gn;
    double fbar = 0.0;
    for (int it = 0; it < 2 * chart.tol.newton_max_iter; ++it) {
        const OrientedLine l = line_through(z - delta * n + chart.shift, v);
        auto [fb, ts] = line_tangency_value(chart.scatterer, chart.shift, l, chart.tol);
        fbar = fb;
        if (std::abs(fbar + tau) < chart.tol.newton_residual) break;
        const Vec q_min = l.p - chart.shift + ts * v;
        const double slope = -chart.scatterer.gradient(q_min).dot(n);  // d fbar / d delta
        if (slope == 0.0) break;
        delta -= (fbar + tau) / slope;
    }
    return line_through(z - delta * n + chart.shift, v);
}

OrientedLine continued_reflection(const QuasiRegularChart& chart, const ChartCoords& coords) {
    const double u = coords.upsilon;
    const OrientedLine l = chart_line(chart, coords.slice, u * u, coords.velocity);
    LineField ray{chart.scatterer, l.p - chart.shift, l.v};
    const double t_star = line_minimizer(ray, chart.tol);

    double t_hit = t_star;
    if (u != 0.0) {
        // entry root for u > 0 (the true reflection), exit root for u < 0
        // (the phantom continuation through the tangency)
        const double curv = ray.d2f(t_star);
        const double width = std::sqrt(std::max(2.0 * u * u / curv, 0.0));
        const double side = (u > 0.0) ? -1.0 : 1.0;
        double t = t_star + side * width;
        for (int it = 0; it < 2 * chart.tol.newton_max_iter; ++it) {
            const double f = ray.f(t);
            if (std::abs(f) < chart.tol.newton_residual) break;
            const double d = ray.df(t);
            if (d == 0.0) break;
            double tn = t - f / d;
            // stay on the prescribed side of the minimizer
            if ((side < 0.0 && tn >= t_star) || (side > 0.0 && tn <= t_star))
                tn = 0.5 * (t + t_star + side * 1e-18);
            t = tn;
        }
        t_hit = t;
    }

    const Vec q_hit = ray.at(t_hit);
    const Vec n = chart.scatterer.gradient(q_hit).normalized();
    const Vec v_out = reflect_velocity(l.v, n);
    return line_through(q_hit + chart.shift, v_out);
}

ScalingReport derivative_blowup_exponent(const QuasiRegularChart& chart,
                                         const std::vector<double>& tau_grid, BlowupChart kind) {
    if (tau_grid.size() < 8)
        throw Error(errc::bad_input, "blow-up fit needs at least 8 grid points");
    const int d = chart.scatterer.dimension();
    const int dim = 2 * d - 2;  // (d-2) slice + 1 transverse + (d-1) velocity

    // coordinates of the output line in a fixed orthonormal frame of the
    // tangent space of line space at the base line
    const Vec p0 = chart.base.line.p;
    const Vec v0 = chart.base.line.v;
    Mat basis(2 * d, dim);
    {
        int col = 0;
        const Mat perp = tangent_frame(v0);
        for (int j = 0; j < d - 1; ++j) {  // p-type directions
            Vec b = Vec::Zero(2 * d);
            b.head(d) = perp.col(j);
            basis.col(col++) = b;
        }
        for (int j = 0; j < d - 1; ++j) {  // v-type directions
            Vec b(2 * d);
            b.head(d) = -p0.dot(perp.col(j)) * v0;
            b.tail(d) = perp.col(j);
            basis.col(col++) = b;
        }
        // orthonormalize
        for (int c = 0; c < dim; ++c) {
            for (int cc = 0; cc < c; ++cc)
                basis.col(c) -= basis.col(c).dot(basis.col(cc)) * basis.col(cc);
            basis.col(c).normalize();
        }
    }
    auto out_coords = [&](const OrientedLine& l) {
        Vec diff(2 * d);
        diff.head(d) = l.p - p0;
        diff.tail(d) = l.v - v0;
        return Vec(basis.transpose() * diff);
    };

    auto eval = [&](const Vec& coords) {
        ChartCoords c;
        c.slice = coords.head(d - 2);
        c.velocity = coords.tail(d - 1);
        const double w = coords[d - 2];
        c.upsilon = (kind == BlowupChart::Tau) ? std::sqrt(w) : w;
        return out_coords(continued_reflection(chart, c));
    };

    ScalingReport report;
    for (double tau : tau_grid) {
        const double center = (kind == BlowupChart::Tau) ? tau : std::sqrt(tau);
        Vec coords = Vec::Zero(dim);
        coords[d - 2] = center;
        Mat J(dim, dim);
        for (int k = 0; k < dim; ++k) {
            const double h = (k == d - 2) ? 0.05 * center : 1e-6;
            Vec cp = coords, cm = coords;
            cp[k] += h;
            cm[k] -= h;
            J.col(k) = (eval(cp) - eval(cm)) / (2.0 * h);
        }
        Eigen::JacobiSVD<Mat> svd(J);
        report.xs.push_back(center);
        report.ys.push_back(svd.singularValues()[0]);
    }
    fit_loglog(report);
    return report;
}

// -- Even/odd resolution -------------------------------------------------------

ResolutionTable even_odd_decompose(const std::function<double(double)>& sampler,
                                   const std::vector<double>& upsilon_grid) {
    ResolutionTable table;
    std::vector<double> grid = upsilon_grid;
    std::sort(grid.begin(), grid.end());
    bool has_zero = false;
    for (double u : grid) {
        if (u < 0.0) throw Error(errc::bad_input, "upsilon grid must be nonnegative");
        if (u == 0.0) {
            has_zero = true;
            continue;
        }
        const double fp = sampler(u);
        double fm = 0.0;
        try {
            fm = sampler(-u);
        } catch (const std::exception& e) {
            throw Error(errc::continuation_unavailable,
                        std::string("sampler failed at -upsilon: ") + e.what());
        }
        table.upsilon.push_back(u);
        table.tau.push_back(u * u);
        table.g_plus.push_back(0.5 * (fp + fm));
        table.g_minus.push_back((fp - fm) / (2.0 * u));
    }
    if (table.upsilon.size() < 3)
        throw Error(errc::bad_input, "need at least 3 positive grid nodes");
    if (has_zero) {
        // the odd quotient is 0/0 at zero: quadratic extrapolation in tau
        // from the three smallest positive nodes
        const double t0 = table.tau[0], t1 = table.tau[1], t2 = table.tau[2];
        const double g0 = table.g_minus[0], g1 = table.g_minus[1], g2 = table.g_minus[2];
        const double l0 = (0.0 - t1) * (0.0 - t2) / ((t0 - t1) * (t0 - t2));
        const double l1 = (0.0 - t0) * (0.0 - t2) / ((t1 - t0) * (t1 - t2));
        const double l2 = (0.0 - t0) * (0.0 - t1) / ((t2 - t0) * (t2 - t1));
        table.upsilon.insert(table.upsilon.begin(), 0.0);
        table.tau.insert(table.tau.begin(), 0.0);
        table.g_plus.insert(table.g_plus.begin(), sampler(0.0));
        table.g_minus.insert(table.g_minus.begin(), l0 * g0 + l1 * g1 + l2 * g2);
    }

    double res = 0.0;
    for (size_t i = 0; i < table.upsilon.size(); ++i) {
        const double u = table.upsilon[i];
        if (u == 0.0) continue;
        const double rec = table.g_plus[i] + u * table.g_minus[i];
        res = std::max(res, std::abs(rec - sampler(u)));
    }
    table.recon_residual = res;
    return table;
}

namespace {

double interp_local_cubic(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    const size_t n = xs.size();
    if (n == 0) throw Error(errc::bad_input, "empty table");
    if (n == 1) return ys[0];
    // locate the bracketing segment
    size_t i = std::upper_bound(xs.begin(), xs.end(), x) - xs.begin();
    size_t lo = (i == 0) ? 0 : i - 1;
    // choose up to 4 nodes centered on the segment
    size_t start = (lo == 0) ? 0 : lo - 1;
    size_t count = std::min<size_t>(4, n);
    if (start + count > n) start = n - count;
    double acc = 0.0;
    for (size_t a = start; a < start + count; ++a) {
        double w = 1.0;
        for (size_t b = start; b < start + count; ++b) {
            if (a == b) continue;
            w *= (x - xs[b]) / (xs[a] - xs[b]);
        }
        acc += w * ys[a];
    }
    return acc;
}

}  // namespace

double table_g_plus(const ResolutionTable& table, double tau) {
    return interp_local_cubic(table.tau, table.g_plus, tau);
}

double table_g_minus(const ResolutionTable& table, double tau) {
    return interp_local_cubic(table.tau, table.g_minus, tau);
}

double resolved_level_check(const std::function<double(double)>& sampler,
                            const ResolutionTable& table, const std::vector<double>& probes) {
    double worst = 0.0;
    for (double tau : probes) {
        if (tau < 0.0) throw Error(errc::bad_input, "probes must be nonnegative");
        const double gp = table_g_plus(table, tau);
        const double gm = table_g_minus(table, tau);
        const double resolved = gp * gp - tau * gm * gm;
        const double u = std::sqrt(tau);
        const double direct = sampler(u) * sampler(-u);  // (G+ + uG-)(G+ - uG-)
        worst = std::max(worst, std::abs(resolved - direct));
    }
    return worst;
}

std::optional<int> jet_nonvanishing_order(const std::function<double(const Vec&)>& f,
                                          const Vec& x0, int max_order, double tol) {
    if (max_order > 4)
        throw Error(errc::unsupported_order, "jet probing is capped at order 4");
    for (int m = 0; m <= max_order; ++m) {
        if (m == 0) {
            if (std::abs(f(x0)) > tol) return 0;
            continue;
        }
        for (const auto& alpha : multi_indices(static_cast<int>(x0.size()), m)) {
            auto [v, e] = fd_partial(f, x0, alpha, 1.0);
            if (std::abs(v) > tol) return m;
        }
    }
    return std::nullopt;
}

}  // namespace disperse
