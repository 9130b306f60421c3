#include "disperse/genericity.hpp"

#include "disperse/parallel.hpp"
#include "disperse/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace disperse {

OrientedLine line_from_coords(const OrientedLine& base, const Vec& u) {
    const int d = static_cast<int>(base.v.size());
    const Mat perp = tangent_frame(base.v);
    const Vec v = (base.v + perp * u.tail(d - 1)).normalized();
    const Vec p_raw = base.p + perp * u.head(d - 1);
    return line_through(p_raw, v);
}

namespace {

struct ForcedEvent {
    ScattererInstance instance;
    double cos_phi;
    bool forced_tangency;
};

// Exit root of a ray that entered the body at q_entry: the second zero of
// R along the ray.  Entry and exit coincide in the grazing limit.
Vec exit_point(const BilliardConfig& cfg, const ScattererInstance& inst, const Vec& q_entry,
               const Vec& v) {
    const Scatterer& s = cfg.scatterer(inst.id);
    const Vec q0 = to_base_frame(q_entry, inst);
    auto f = [&](double t) { return s.value(q0 + t * v); };
    auto df = [&](double t) { return s.gradient(q0 + t * v).dot(v); };
    const double chord = 2.0 * s.bounding_radius();
    double hi = chord * 1e-3;
    while (f(hi) < 0.0 && hi < 4.0 * chord) hi *= 1.6;
    double lo = 0.0, t = hi;
    for (int it = 0; it < 200; ++it) {
        const double ft = f(t);
        if (std::abs(ft) < cfg.tol.newton_residual) break;
        if (ft < 0.0)
            lo = t;
        else
            hi = t;
        const double d = df(t);
        double tn = (d != 0.0) ? t - ft / d : 0.5 * (lo + hi);
        if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
        if (tn == t) break;
        t = tn;
    }
    return q_entry + t * v;
}

// Simulate with prescribed kinds: tangency-marked steps treat the scatterer
// as transparent (the line continues from the exit root), so the residual
// cos phi varies smoothly down to the grazing band.
std::vector<ForcedEvent> forced_simulation(const BilliardConfig& cfg, const OrientedLine& line,
                                           double t_start,
                                           const std::function<bool(int)>& is_tangency,
                                           int steps) {
    std::vector<ForcedEvent> out;
    Vec q = line.p + t_start * line.v;
    const Vec v0 = line.v;
    Vec v = v0;
    double t_min = 0.0;
    for (int k = 0; k < steps; ++k) {
        auto ev = first_hit(cfg, q, v, t_min);
        if (!ev) break;
        ForcedEvent fe{ev->instance, ev->cos_phi, is_tangency(k)};
        out.push_back(fe);
        if (!fe.forced_tangency) {
            q = ev->q_hit;
            const Vec g = instance_gradient(cfg, ev->instance, ev->q_hit);
            v = reflect_velocity(v, g / g.norm());
        } else if (ev->tangency) {
            q = ev->q_hit;  // true graze: pass through
        } else {
            q = exit_point(cfg, ev->instance, ev->q_hit, v);
        }
        t_min = cfg.tau0 / 2.0;
    }
    return out;
}

}  // namespace

Vec tangency_residuals(const TangencyConstraintProblem& problem, const Vec& coords) {
    const BilliardConfig& cfg = *problem.cfg;
    const OrientedLine line = line_from_coords(problem.base_line, coords);
    const auto is_tangency = [&](int k) {
        return k < static_cast<int>(problem.type.size()) &&
               problem.type[static_cast<size_t>(k)].kind == EventKind::Tangency;
    };
    std::vector<ForcedEvent> events;
    try {
        events = forced_simulation(cfg, line, problem.t_start, is_tangency,
                                   static_cast<int>(problem.type.size()));
    } catch (const Error& e) {
        throw InfeasibleType(std::string("trajectory failed: ") + e.what(), 0);
    }

    Vec residuals(problem.tangency_count());
    int r = 0;
    for (size_t k = 0; k < problem.type.size(); ++k) {
        if (k >= events.size())
            throw InfeasibleType("trajectory left the horizon before the prescribed length",
                                 static_cast<int>(k));
        if (!(events[k].instance == problem.type[k].instance))
            throw InfeasibleType("wrong instance hit", static_cast<int>(k));
        if (problem.type[k].kind == EventKind::Tangency) residuals[r++] = events[k].cos_phi;
    }
    return residuals;
}

SolveResult multi_tangency_solve(const TangencyConstraintProblem& problem, const Vec& start) {
    const int dim = 2 * problem.cfg->dimension - 2;
    const double fd_h = 1e-7;
    const double target = 1e-9;

    SolveResult result;
    result.coords = start;
    Vec r = tangency_residuals(problem, result.coords);
    double rn = r.norm();
    double lm = 1e-12;  // Levenberg damping, raised on failed steps

    int it = 0;
    for (; it < 60 && rn >= target; ++it) {
        Mat J(r.size(), dim);
        bool jac_ok = true;
        for (int k = 0; k < dim && jac_ok; ++k) {
            Vec up = result.coords, um = result.coords;
            up[k] += fd_h;
            um[k] -= fd_h;
            try {
                J.col(k) = (tangency_residuals(problem, up) - tangency_residuals(problem, um)) /
                           (2.0 * fd_h);
            } catch (const InfeasibleType&) {
                jac_ok = false;
            }
        }
        if (!jac_ok) break;

        const Mat JtJ = J.transpose() * J;
        const Vec g = J.transpose() * r;
        bool improved = false;
        for (int attempt = 0; attempt < 12 && !improved; ++attempt) {
            const Mat A = JtJ + lm * Mat::Identity(dim, dim);
            const Vec step = A.ldlt().solve(g);
            const Vec trial = result.coords - step;
            try {
                const Vec rt = tangency_residuals(problem, trial);
                if (rt.norm() < rn) {
                    result.coords = trial;
                    r = rt;
                    rn = rt.norm();
                    improved = true;
                    lm = std::max(lm * 0.25, 1e-14);
                }
            } catch (const InfeasibleType&) {
            }
            if (!improved) lm *= 8.0;
        }
        if (!improved) break;
    }

    result.residual_norm = rn;
    result.converged = rn < target;
    result.iterations = it;

    // condition estimate at the final iterate
    try {
        Mat J(r.size(), dim);
        for (int k = 0; k < dim; ++k) {
            Vec up = result.coords, um = result.coords;
            up[k] += fd_h;
            um[k] -= fd_h;
            J.col(k) = (tangency_residuals(problem, up) - tangency_residuals(problem, um)) /
                       (2.0 * fd_h);
        }
        Eigen::JacobiSVD<Mat> svd(J);
        const auto& sv = svd.singularValues();
        result.condition = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1]
                                                   : std::numeric_limits<double>::infinity();
    } catch (const InfeasibleType&) {
        result.condition = std::numeric_limits<double>::infinity();
    }
    return result;
}

std::optional<TangencyConstraintProblem> census_trial_problem(const BilliardConfig& cfg, int j,
                                                              std::uint64_t trial_seed) {
    const int d = cfg.dimension;
    Rng rng(trial_seed);
    if (j < 1 || j > 6) return std::nullopt;

    // random boundary start
    const int id = static_cast<int>(rng.next_u64() % cfg.scatterers.size());
    const Scatterer& s = cfg.scatterer(id);
    const Vec q = surface_point_along(s, rng.unit_vector(d));
    const Vec n = s.gradient(q).normalized();
    Vec v = rng.unit_vector(d);
    if (v.dot(n) < 0.0) v = reflect_velocity(v, n);
    if (v.dot(n) < 0.05) return std::nullopt;  // too close to grazing to start

    PhasePoint x;
    x.instance = {id, IVec::Zero(d)};
    x.q = q;
    x.v = v;

    try {
        const int length =
            j + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(7 - j));
        const TrajectoryRecord plain = billiard_map_n(cfg, x, length, false);
        if (static_cast<int>(plain.events.size()) < length) return std::nullopt;

        // mark the j least-transversal events as tangencies
        std::vector<int> order(plain.events.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return std::abs(plain.events[static_cast<size_t>(a)].cos_phi) <
                   std::abs(plain.events[static_cast<size_t>(b)].cos_phi);
        });
        std::vector<bool> marked(plain.events.size(), false);
        for (int a = 0; a < j; ++a)
            marked[static_cast<size_t>(order[static_cast<size_t>(a)])] = true;

        // the forced run defines the realizable type at this start
        TangencyConstraintProblem problem;
        problem.cfg = &cfg;
        problem.base_line = phase_to_line(x);
        problem.t_start = q.dot(x.v) + cfg.tau0 / 2.0;  // just past the start point
        const auto is_tangency = [&](int k) {
            return k < static_cast<int>(marked.size()) && marked[static_cast<size_t>(k)];
        };
        const auto forced = forced_simulation(cfg, problem.base_line, problem.t_start,
                                              is_tangency, length);
        if (static_cast<int>(forced.size()) < length) return std::nullopt;
        int marks = 0;
        for (int k = 0; k < length; ++k) {
            TypeEvent te;
            te.instance = forced[static_cast<size_t>(k)].instance;
            te.kind = is_tangency(k) ? EventKind::Tangency : EventKind::Reflection;
            marks += (te.kind == EventKind::Tangency) ? 1 : 0;
            problem.type.push_back(te);
        }
        if (marks != j) return std::nullopt;
        return problem;
    } catch (const Error&) {
        return std::nullopt;
    }
}

std::vector<CensusRow> tangency_census(const BilliardConfig& cfg, int j_max, int trials,
                                       std::uint64_t seed) {
    std::vector<CensusRow> rows;
    const int dim = 2 * cfg.dimension - 2;
    for (int j = 1; j <= j_max; ++j) {
        CensusRow row;
        row.j = j;
        row.trials = trials;
        row.best_residual = std::numeric_limits<double>::infinity();
        std::vector<double> iters(static_cast<size_t>(std::max(trials, 0)), 0.0);
        std::vector<double> residuals(static_cast<size_t>(std::max(trials, 0)),
                                      std::numeric_limits<double>::infinity());
        parallel_for(trials, [&](std::int64_t t) {
            const std::uint64_t ts =
                seed_at(seed, (static_cast<std::uint64_t>(j) << 32) + static_cast<std::uint64_t>(t));
            const auto problem = census_trial_problem(cfg, j, ts);
            if (!problem) return;
            try {
                const SolveResult res = multi_tangency_solve(*problem, Vec::Zero(dim));
                residuals[static_cast<size_t>(t)] = res.residual_norm;
                iters[static_cast<size_t>(t)] = res.iterations;
            } catch (const InfeasibleType&) {
            }
        });
        std::vector<double> used_iters;
        for (int t = 0; t < trials; ++t) {
            const double rn = residuals[static_cast<size_t>(t)];
            if (!std::isfinite(rn)) continue;
            row.best_residual = std::min(row.best_residual, rn);
            row.converged += (rn < 1e-9) ? 1 : 0;
            used_iters.push_back(iters[static_cast<size_t>(t)]);
        }
        if (!used_iters.empty()) {
            std::sort(used_iters.begin(), used_iters.end());
            row.median_iters = used_iters[used_iters.size() / 2];
        }
        if (!std::isfinite(row.best_residual)) row.best_residual = -1.0;  // no feasible trial
        rows.push_back(row);
    }
    return rows;
}

int count_near_tangencies(const TrajectoryRecord& record, double tol) {
    int count = 0;
    for (const auto& ev : record.events) count += (std::abs(ev.cos_phi) < tol) ? 1 : 0;
    return count;
}

Scatterer bump_perturb(const Scatterer& s, const Vec& surface_point, double rho,
                       double amplitude) {
    if (!(rho > 0.0)) throw Error(errc::bad_input, "bump radius must be positive");
    Scatterer out = s;
    out.bumps.push_back({surface_point, rho, amplitude});
    if (amplitude != 0.0) {
        const double min_eig = min_hessian_eigenvalue_unchecked(out, 512, 0xbead5eedull);
        if (min_eig <= 0.0) {
            std::ostringstream msg;
            msg << "bump amplitude " << amplitude << " breaks strict convexity (min eigenvalue "
                << min_eig << ")";
            throw AmplitudeTooLarge(msg.str(), min_eig);
        }
    }
    return out;
}

}  // namespace disperse
