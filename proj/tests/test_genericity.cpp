#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "disperse/genericity.hpp"
#include "disperse/random.hpp"
#include "disperse/singularity.hpp"
#include "support.hpp"

#include <cmath>

using namespace disperse;
using namespace disperse::testing;

namespace {

/// A j = 1 problem whose base line passes near the top tangency of the
/// corner disk in the two-disk scene.
TangencyConstraintProblem near_tangent_problem(const BilliardConfig& cfg, double offset) {
    // line slightly below the grazing height of the corner disk translate
    TangencyConstraintProblem problem;
    problem.cfg = &cfg;
    const Vec p = vec2(0.0, 0.38 - offset);
    problem.base_line = line_through(p, vec2(1.0, 0.0));
    problem.t_start = -0.8;
    TypeEvent ev;
    ev.instance = {0, IVec::Zero(2)};
    ev.kind = EventKind::Tangency;
    problem.type = {ev};
    return problem;
}

}  // namespace

TEST_CASE("tangency_residuals: exact tangency gives a zero residual") {
    const BilliardConfig cfg = scene_two_disk_d2();
    const TangencyConstraintProblem problem = near_tangent_problem(cfg, 0.0);
    const Vec r = tangency_residuals(problem, Vec::Zero(2));
    REQUIRE(r.size() == 1);
    CHECK(std::abs(r[0]) < 1e-10);
}

TEST_CASE("tangency_residuals: j = 0 gives an empty residual vector") {
    const BilliardConfig cfg = scene_two_disk_d2();
    TangencyConstraintProblem problem = near_tangent_problem(cfg, 0.0);
    problem.type[0].kind = EventKind::Reflection;
    CHECK(tangency_residuals(problem, Vec::Zero(2)).size() == 0);
}

TEST_CASE("tangency_residuals: wrong instance raises infeasible with the step") {
    const BilliardConfig cfg = scene_two_disk_d2();
    TangencyConstraintProblem problem = near_tangent_problem(cfg, 1e-3);
    problem.type[0].instance = {1, IVec::Zero(2)};  // the line hits the corner disk, not this
    try {
        tangency_residuals(problem, Vec::Zero(2));
        FAIL("expected InfeasibleType");
    } catch (const InfeasibleType& e) {
        CHECK(e.step == 0);
    }
}

TEST_CASE("tangency_residuals scale linearly in the perturbation") {
    const BilliardConfig cfg = scene_two_disk_d2();
    const TangencyConstraintProblem problem = near_tangent_problem(cfg, 0.0);
    // perturb the line foot along the chart's first coordinate
    auto residual_at = [&](double eps) {
        Vec u = Vec::Zero(2);
        u[0] = eps;
        return tangency_residuals(problem, u)[0];
    };
    const double r0 = residual_at(0.0);
    const double r1 = residual_at(4e-4) - r0;
    const double r2 = residual_at(2e-4) - r0;
    CHECK(r1 / r2 == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("multi_tangency_solve: j = 1 converges from most near-tangent starts") {
    const BilliardConfig cfg = scene_two_disk_d2();
    Rng rng(2025);
    int converged = 0, tried = 0;
    while (tried < 40) {
        const double offset = rng.uniform(1e-4, 3e-3);
        const TangencyConstraintProblem problem = near_tangent_problem(cfg, offset);
        ++tried;
        try {
            const SolveResult res = multi_tangency_solve(problem, Vec::Zero(2));
            if (res.converged) {
                ++converged;
                // consistency: re-simulation reproduces the type with the
                // claimed residual
                const Vec r = tangency_residuals(problem, res.coords);
                CHECK(r.norm() < 1e-8);
            }
        } catch (const InfeasibleType&) {
        }
    }
    CHECK(converged * 2 >= tried);  // >= 50%
}

TEST_CASE("tangency_census: d2 reaches j = 2 = 2d-2 but not j = 3") {
    const BilliardConfig cfg = scene_two_disk_d2();
    const auto rows = tangency_census(cfg, 3, 60, 777);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].j == 1);
    CHECK(rows[0].converged >= 1);
    CHECK(rows[1].j == 2);
    CHECK(rows[1].converged >= 1);
    CHECK(rows[2].j == 3);
    CHECK(rows[2].converged == 0);
    CHECK(rows[2].best_residual > 1e-6);
}

TEST_CASE("tangency_census: deterministic and empty for zero trials") {
    const BilliardConfig cfg = scene_two_disk_d2();
    const auto a = tangency_census(cfg, 2, 20, 31);
    const auto b = tangency_census(cfg, 2, 20, 31);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].converged == b[i].converged);
        CHECK(a[i].best_residual == b[i].best_residual);  // bit-identical
        CHECK(a[i].median_iters == b[i].median_iters);
    }
    const auto none = tangency_census(cfg, 2, 0, 31);
    for (const auto& row : none) {
        CHECK(row.trials == 0);
        CHECK(row.converged == 0);
    }
}

TEST_CASE("count_near_tangencies") {
    const BilliardConfig cfg = scene_period2_d2();
    PhasePoint x;
    x.instance = {0, IVec::Zero(2)};
    x.q = vec2(0.4, 0.5);
    x.v = vec2(1.0, 0.0);
    const TrajectoryRecord rec = billiard_map_n(cfg, x, 8, false);
    CHECK(count_near_tangencies(rec, 1e-7) == 0);
    CHECK(count_near_tangencies(rec, 0.5) == 0);  // all head-on, cos phi = 1
    CHECK(count_near_tangencies(rec, 1.1) == 8);

    // a constructed grazing trajectory has exactly one flagged event
    const BilliardConfig single = scene_single_sphere_d2();
    const auto tangents =
        sample_tangency_set(single.scatterer(0), Vec::Zero(2), 1, 3, single.tol);
    PhasePoint g;
    g.instance = {0, IVec::Zero(2)};
    g.q = tangents[0].q_star;
    g.v = tangents[0].line.v;
    const TrajectoryRecord graze = billiard_map_n(single, g, 1, false);
    if (graze.events.size() == 1) CHECK(count_near_tangencies(graze, 1e-7) <= 1);
}

TEST_CASE("bump_perturb: zero amplitude and compact support") {
    const Scatterer base = make_sphere(0, vec2(0.5, 0.5), 0.3);
    const Vec at = vec2(0.8, 0.5);

    const Scatterer zero = bump_perturb(base, at, 0.1, 0.0);
    Rng rng(8);
    for (int i = 0; i < 40; ++i) {
        const Vec x = vec2(0.8, 0.5) + 0.15 * rng.unit_vector(2);
        CHECK(zero.value(x) == base.value(x));
    }

    const Scatterer bumped = bump_perturb(base, at, 0.1, -1e-4);
    for (int i = 0; i < 40; ++i) {
        Vec x = vec2(0.8, 0.5) + (0.100001 + rng.uniform()) * rng.unit_vector(2);
        CHECK(bumped.value(x) == base.value(x));
        CHECK(bumped.gradient(x) == base.gradient(x));
    }
}

TEST_CASE("bump_perturb: convexity guard") {
    const Scatterer base = make_sphere(0, vec2(0.5, 0.5), 0.3);
    CHECK_THROWS_AS(bump_perturb(base, vec2(0.8, 0.5), 0.05, -0.01), AmplitudeTooLarge);
}

TEST_CASE("bump_perturb destroys a grazing line (the transversality move)") {
    const Scatterer base = make_sphere(0, vec2(0.5, 0.5), 0.2);
    Tolerances tol;
    // grazing line at the top
    const Vec q_star = vec2(0.5, 0.7);
    const OrientedLine graze = line_through(q_star, vec2(1.0, 0.0));
    const auto [before, t0] = line_tangency_value(base, Vec::Zero(2), graze, tol);
    CHECK(std::abs(before) < 1e-12);

    // outward bump (negative amplitude) makes the body swallow the line
    const Scatterer bumped = bump_perturb(base, q_star, 0.1, -1e-4);
    const auto [after, t1] = line_tangency_value(bumped, Vec::Zero(2), graze, tol);
    CHECK(after < -1e-6);  // now crossing
}

TEST_CASE("bump at a solved tangency breaks it; the other constraint survives") {
    const BilliardConfig cfg = scene_two_disk_d2();

    // find a converged j = 2 trial
    std::optional<TangencyConstraintProblem> problem;
    SolveResult solution;
    for (std::uint64_t t = 0; t < 400 && !problem; ++t) {
        const auto candidate = census_trial_problem(cfg, 2, seed_at(2024, t));
        if (!candidate) continue;
        try {
            const SolveResult res = multi_tangency_solve(*candidate, Vec::Zero(2));
            if (res.converged) {
                problem = candidate;
                solution = res;
            }
        } catch (const InfeasibleType&) {
        }
    }
    REQUIRE(problem.has_value());

    // locate the second tangency event and its grazing point
    int first_tan = -1, second_tan = -1;
    for (int i = 0; i < static_cast<int>(problem->type.size()); ++i) {
        if (problem->type[static_cast<size_t>(i)].kind != EventKind::Tangency) continue;
        if (first_tan < 0)
            first_tan = i;
        else if (second_tan < 0)
            second_tan = i;
    }
    REQUIRE(second_tan > first_tan);

    // replay the solved trajectory to find the grazing point of that event
    const OrientedLine solved = line_from_coords(problem->base_line, solution.coords);
    Vec q = solved.p + problem->t_start * solved.v;
    Vec v = solved.v;
    Vec graze_point;
    ScattererInstance graze_inst;
    double t_min = 0.0;
    for (int k = 0; k <= second_tan; ++k) {
        auto ev = first_hit(cfg, q, v, t_min);
        REQUIRE(ev.has_value());
        q = ev->q_hit;
        if (k == second_tan) {
            graze_point = ev->q_hit;
            graze_inst = ev->instance;
            break;
        }
        if (problem->type[static_cast<size_t>(k)].kind == EventKind::Reflection) {
            const Vec g = instance_gradient(cfg, ev->instance, ev->q_hit);
            v = reflect_velocity(v, g / g.norm());
        }
        t_min = cfg.tau0 / 2.0;
    }

    // bump the scatterer outward at the grazing point
    BilliardConfig bumped = cfg;
    const Vec local = to_base_frame(graze_point, graze_inst);
    bumped.scatterers[static_cast<size_t>(graze_inst.id)] =
        bump_perturb(cfg.scatterer(graze_inst.id), local, 0.08, -5e-5);

    TangencyConstraintProblem perturbed = *problem;
    perturbed.cfg = &bumped;
    bool broken = false;
    try {
        const SolveResult res = multi_tangency_solve(perturbed, solution.coords);
        broken = !res.converged && res.residual_norm > 1e-6;
    } catch (const InfeasibleType&) {
        broken = true;  // the old combinatorial type is no longer realizable
    }
    CHECK(broken);

    // the truncated problem keeping only the first tangency still solves
    TangencyConstraintProblem reduced = *problem;
    reduced.cfg = &bumped;
    reduced.type.resize(static_cast<size_t>(first_tan) + 1);
    try {
        const SolveResult res = multi_tangency_solve(reduced, solution.coords);
        CHECK(res.converged);
    } catch (const InfeasibleType&) {
        FAIL("reduced problem should be realizable");
    }
}
