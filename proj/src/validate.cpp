#include "disperse/billiard.hpp"
#include "disperse/geometry.hpp"
#include "disperse/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace disperse {

namespace {

// A phase point drawn from (approximately) the invariant measure is not
// needed here; any outgoing state does for flight-time statistics.
PhasePoint random_boundary_state(const BilliardConfig& cfg, Rng& rng) {
    const int d = cfg.dimension;
    const int id = static_cast<int>(rng.next_u64() % cfg.scatterers.size());
    const Scatterer& s = cfg.scatterer(id);
    PhasePoint x;
    x.instance = {id, IVec::Zero(d)};
    x.q = surface_point_along(s, rng.unit_vector(d));
    const Vec g = s.gradient(x.q);
    const Vec n = g / g.norm();
    Vec v = rng.unit_vector(d);
    if (v.dot(n) < 0.0) v = reflect_velocity(v, n);
    x.v = v;
    return x;
}

// Deterministic scan for an axis-parallel free corridor: a line parallel to
// a coordinate axis is 1-periodic, so "no hit within length 1 + diameter
// margin" means it never hits.
std::optional<OrientedLine> axis_corridor(const BilliardConfig& cfg, int grid) {
    const int d = cfg.dimension;
    double max_diam = 0.0;
    for (const Scatterer& s : cfg.scatterers) max_diam = std::max(max_diam, 2.0 * s.bounding_radius());

    BilliardConfig probe = cfg;  // short deterministic horizon for the scan
    probe.horizon_bound = 1.0 + 2.0 * max_diam;

    std::vector<int> idx(static_cast<size_t>(d - 1), 0);
    for (int axis = 0; axis < d; ++axis) {
        const Vec v = Vec::Unit(d, axis);
        std::fill(idx.begin(), idx.end(), 0);
        while (true) {
            Vec q = Vec::Zero(d);
            int k = 0;
            for (int i = 0; i < d; ++i) {
                if (i == axis) continue;
                q[i] = (idx[static_cast<size_t>(k)] + 0.5) / grid;
                ++k;
            }
            bool escaped = false;
            try {
                escaped = !first_hit(probe, q, v, 0.0).has_value();
            } catch (const Error&) {
                escaped = false;  // started inside a body: not a corridor
            }
            if (escaped) return line_through(q, v);

            int pos = d - 2;
            while (pos >= 0) {
                if (++idx[static_cast<size_t>(pos)] < grid) break;
                idx[static_cast<size_t>(pos)] = 0;
                --pos;
            }
            if (pos < 0) break;
        }
    }
    return std::nullopt;
}

}  // namespace

ValidationReport validate_configuration(const BilliardConfig& cfg, int n_samples,
                                        std::uint64_t seed) {
    ValidationReport report;
    const int d = cfg.dimension;

    // strict convexity per scatterer
    for (const Scatterer& s : cfg.scatterers) {
        const double l0 = min_hessian_eigenvalue_unchecked(
            s, std::max(64, n_samples), seed_at(seed, static_cast<std::uint64_t>(s.id)));
        report.lambda0.push_back(l0);
        if (l0 <= 0.0) {
            report.flags.convexity_violated = true;
            std::ostringstream msg;
            msg << "scatterer " << s.id << ": min Hessian eigenvalue " << l0;
            report.notes.push_back(msg.str());
        }
    }

    // pairwise gaps, including lattice translates
    double min_gap = std::numeric_limits<double>::infinity();
    const int ns = static_cast<int>(cfg.scatterers.size());
    for (int i = 0; i < ns; ++i) {
        for (int j = i; j < ns; ++j) {
            const Scatterer& a = cfg.scatterer(i);
            const Scatterer& b = cfg.scatterer(j);
            const int reach = 1 + static_cast<int>(std::ceil(a.bounding_radius() + b.bounding_radius()));
            std::vector<IVec> shifts;
            IVec m = IVec::Constant(d, -reach);
            while (true) {
                if (!(i == j && m.isZero())) shifts.push_back(m);
                int axis = d - 1;
                while (axis >= 0) {
                    if (++m[axis] <= reach) break;
                    m[axis] = -reach;
                    --axis;
                }
                if (axis < 0) break;
            }
            for (const IVec& sh : shifts) {
                // skip translate pairs that cannot come close
                const Vec delta = b.center + sh.cast<double>() - a.center;
                if (delta.norm() > a.bounding_radius() + b.bounding_radius() + 1.5) continue;
                min_gap = std::min(min_gap, instance_gap(a, Vec::Zero(d), b, sh.cast<double>()));
            }
        }
    }
    report.min_gap = min_gap;
    if (!(min_gap >= cfg.tau0)) {
        report.flags.disjointness_violated = true;
        std::ostringstream msg;
        msg << "minimal instance gap " << min_gap << " below tau0 " << cfg.tau0;
        report.notes.push_back(msg.str());
    }

    // empirical flight bounds over sampled trajectories
    double max_flight = 0.0;
    double min_flight = std::numeric_limits<double>::infinity();
    long long flights = 0;
    Rng rng(seed_at(seed, 0xf11457ull));
    for (int i = 0; i < n_samples; ++i) {
        const PhasePoint x = random_boundary_state(cfg, rng);
        TrajectoryRecord rec;
        try {
            rec = billiard_map_n(cfg, x, 100, false);
        } catch (const Error&) {
            continue;  // multiple-collision etc.: flight stats not affected
        }
        for (const ReflectionEvent& ev : rec.events) {
            max_flight = std::max(max_flight, ev.t_flight);
            min_flight = std::min(min_flight, ev.t_flight);
            ++flights;
        }
        if (rec.reason == Termination::NoHit) {
            report.flags.finite_horizon_violated = true;
            const PhasePoint& y = rec.final_point;
            const OrientedLine w = line_through(y.q, y.v);
            report.free_corridor_p = w.p;
            report.free_corridor_v = w.v;
            report.notes.push_back("sampled trajectory exceeded the horizon bound");
        }
    }
    report.max_flight = max_flight;
    report.min_flight = flights > 0 ? min_flight : 0.0;
    report.flights_sampled = flights;
    if (flights > 0 && min_flight < cfg.tau0 * (1.0 - 1e-6)) {
        report.flags.min_flight_violated = true;
        std::ostringstream msg;
        msg << "sampled flight " << min_flight << " below tau0 " << cfg.tau0;
        report.notes.push_back(msg.str());
    }
    if (max_flight > cfg.horizon_bound * (1.0 + 1e-6)) {
        report.flags.finite_horizon_violated = true;
        report.notes.push_back("sampled flight exceeds horizon_bound");
    }

    // deterministic axis-parallel corridor scan
    if (auto corridor = axis_corridor(cfg, d == 2 ? 64 : 24)) {
        report.flags.finite_horizon_violated = true;
        report.free_corridor_p = corridor->p;
        report.free_corridor_v = corridor->v;
        report.notes.push_back("axis-parallel free corridor found");
    }

    return report;
}

}  // namespace disperse
