#include "disperse/measure.hpp"

#include "disperse/parallel.hpp"
#include "disperse/random.hpp"
#include "disperse/singularity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace disperse {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
    Vec g(x.size());
    Vec xt = x;
    for (int i = 0; i < x.size(); ++i) {
        xt[i] = x[i] + h;
        const double fp = f(xt);
        xt[i] = x[i] - h;
        const double fm = f(xt);
        xt[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Damped Newton projection x -> x - F grad F / |grad F|^2 toward {F = 0}.
// Returns the landing point, or nothing if it fails to reach |F| < 1e-12.
std::optional<Vec> newton_project(const std::function<double(const Vec&)>& f, const Vec& x0,
                                  double scale) {
    Vec y = x0;
    double fy = f(y);
    for (int it = 0; it < 60; ++it) {
        if (std::abs(fy) < 1e-12) return y;
        const Vec g = fd_gradient(f, y, 1e-7 * scale);
        const double g2 = g.squaredNorm();
        if (g2 < 1e-18) return std::nullopt;
        const Vec step = (fy / g2) * g;
        double damp = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 25; ++ls) {
            const Vec yn = y - damp * step;
            const double fn = f(yn);
            if (std::abs(fn) < std::abs(fy)) {
                y = yn;
                fy = fn;
                moved = true;
                break;
            }
            damp *= 0.5;
        }
        if (!moved) return std::nullopt;
    }
    return std::abs(fy) < 1e-12 ? std::optional<Vec>(y) : std::nullopt;
}

}  // namespace

ScalarFieldSpec make_field_spec(std::function<double(const Vec&)> f, const Vec& center,
                                double radius, int smoothness_m, int cloud_grid_per_axis) {
    ScalarFieldSpec spec;
    spec.f = std::move(f);
    spec.center = center;
    spec.radius = radius;
    spec.smoothness_m = smoothness_m;
    const int d = static_cast<int>(center.size());

    double c0 = 0.0;
    for (const auto& alpha : multi_indices(d, smoothness_m - 1)) {
        auto [v, e] = fd_partial(spec.f, center, alpha, radius);
        c0 = std::max(c0, std::abs(v));
    }
    spec.c0_est = c0;
    if (!(c0 > 1e-8)) {
        std::ostringstream msg;
        msg << "order-" << (smoothness_m - 1) << " jet vanishes at the center (c0 = " << c0
            << "); pick a larger smoothness_m";
        throw Error(errc::bad_input, msg.str());
    }
    if (smoothness_m <= 4) {
        double c1m = 0.0;
        Rng rng(0x5eedf1e1dull);
        for (int k = 0; k < 16; ++k) {
            const Vec x = center + rng.in_ball(d, 0.9 * radius);
            for (const auto& alpha : multi_indices(d, smoothness_m)) {
                auto [v, e] = fd_partial(spec.f, x, alpha, radius);
                c1m = std::max(c1m, std::abs(v));
            }
        }
        spec.C1_est = c1m;
    }

    // grid-seeded zero cloud
    auto cloud = std::make_shared<std::vector<Vec>>();
    const int g = std::max(cloud_grid_per_axis, 2);
    const double half = spec.c1_factor * radius;
    std::vector<int> idx(static_cast<size_t>(d), 0);
    while (true) {
        Vec x(d);
        for (int i = 0; i < d; ++i)
            x[i] = center[i] - half + (2.0 * half) * (idx[static_cast<size_t>(i)] + 0.5) / g;
        if (auto z = newton_project(spec.f, x, radius)) {
            if ((*z - center).norm() <= 0.999 * radius) cloud->push_back(*z);
        }
        int pos = d - 1;
        while (pos >= 0) {
            if (++idx[static_cast<size_t>(pos)] < g) break;
            idx[static_cast<size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    spec.zero_cloud = cloud;
    return spec;
}

double zero_set_distance(const ScalarFieldSpec& spec, const Vec& x) {
    double best = kInf;
    if (auto y = newton_project(spec.f, x, spec.radius)) best = (x - *y).norm();
    if (spec.zero_cloud) {
        for (const Vec& z : *spec.zero_cloud) best = std::min(best, (x - z).norm());
    }
    return best;
}

namespace {

// Distances from n_samples uniform points in the c1-ball to the zero set;
// shared between tube_volume and scaling_fit so thresholding at different
// deltas reuses the same sample set.
std::vector<double> sampled_distances(const ScalarFieldSpec& spec, long long n,
                                      std::uint64_t seed) {
    std::vector<double> dist(static_cast<size_t>(n));
    const int d = static_cast<int>(spec.center.size());
    const double r = spec.c1_factor * spec.radius;
    parallel_for(n, [&](std::int64_t i) {
        Rng rng(seed_at(seed, static_cast<std::uint64_t>(i)));
        const Vec x = spec.center + rng.in_ball(d, r);
        dist[static_cast<size_t>(i)] = zero_set_distance(spec, x);
    });
    return dist;
}

TubeEstimate estimate_from_distances(const std::vector<double>& dist, double delta,
                                     std::uint64_t seed) {
    long long hits = 0;
    for (double v : dist) hits += (v < delta) ? 1 : 0;
    TubeEstimate est;
    est.delta = delta;
    est.n_samples = static_cast<long long>(dist.size());
    est.seed = seed;
    const double p = static_cast<double>(hits) / static_cast<double>(dist.size());
    est.volume_fraction = p;
    est.confidence_halfwidth = 1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(dist.size()));
    return est;
}

}  // namespace

TubeEstimate tube_volume(const ScalarFieldSpec& spec, double delta, long long n_samples,
                         std::uint64_t seed) {
    if (!(delta > 0.0)) throw Error(errc::bad_input, "delta must be positive");
    const auto dist = sampled_distances(spec, n_samples, seed);
    return estimate_from_distances(dist, delta, seed);
}

ScalingReport scaling_fit(const ScalarFieldSpec& spec, const std::vector<double>& deltas,
                          long long n_samples, std::uint64_t seed) {
    if (deltas.size() < 5) throw Error(errc::bad_input, "need at least 5 deltas");
    const auto dist = sampled_distances(spec, n_samples, seed);

    ScalingReport report;
    report.n_samples = n_samples;
    report.seed = seed;
    std::vector<double> weights;
    for (double delta : deltas) {
        const TubeEstimate est = estimate_from_distances(dist, delta, seed);
        if (est.volume_fraction <= 0.0) {
            std::ostringstream msg;
            msg << "zero-count tube estimate at delta = " << delta
                << "; increase n_samples or delta";
            throw Error(errc::insufficient_samples, msg.str());
        }
        report.xs.push_back(delta);
        report.ys.push_back(est.volume_fraction);
        report.ci.push_back(est.confidence_halfwidth);
        const double sigma_log = est.confidence_halfwidth / est.volume_fraction;
        weights.push_back(1.0 / (sigma_log * sigma_log));
    }
    fit_loglog(report, weights);
    return report;
}

int single_linkage_components(const std::vector<Vec>& cloud, double gap) {
    const int n = static_cast<int>(cloud.size());
    std::vector<int> parent(static_cast<size_t>(n));
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int a) {
        while (parent[static_cast<size_t>(a)] != a) {
            parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
            a = parent[static_cast<size_t>(a)];
        }
        return a;
    };
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if ((cloud[static_cast<size_t>(i)] - cloud[static_cast<size_t>(j)]).norm() < gap) {
                const int a = find(i), b = find(j);
                if (a != b) parent[static_cast<size_t>(a)] = b;
            }
    int count = 0;
    for (int i = 0; i < n; ++i) count += (find(i) == i) ? 1 : 0;
    return count;
}

// -- Singularity tube measure ---------------------------------------------------

namespace {

struct WindowChart {
    Mat frame_q;  // d x (d-1)
    Mat frame_v;  // d x (d-1)
    Vec n0;       // unit normal at the window center
};

WindowChart window_chart(const BilliardConfig& cfg, const PhaseWindow& w) {
    WindowChart chart;
    const Vec g = instance_gradient(cfg, w.instance, w.q_center);
    chart.n0 = g / g.norm();
    chart.frame_q = tangent_frame(chart.n0);
    chart.frame_v = tangent_frame(w.v_center);
    return chart;
}

// chart coordinates (xi, eta) of a phase point on the window's base scatterer
std::optional<Vec> window_coords(const BilliardConfig& cfg, const PhaseWindow& w,
                                 const WindowChart& chart, const PhasePoint& y) {
    if (y.instance.id != w.instance.id) return std::nullopt;
    const int d = cfg.dimension;
    const Vec q = y.q + (w.instance.shift - y.instance.shift).cast<double>();
    Vec c(2 * (d - 1));
    c.head(d - 1) = chart.frame_q.transpose() * (q - w.q_center);
    const double along = w.v_center.dot(y.v);
    if (along <= 0.1) return std::nullopt;  // opposite hemisphere
    c.tail(d - 1) = (chart.frame_v.transpose() * y.v) / along;
    // the chart projects along n0 and is two-valued on the closed surface;
    // points on the far branch must not be given near-branch coordinates
    try {
        const Vec q_rec = surface_chart_point(cfg, w.instance, w.q_center, chart.n0,
                                              chart.frame_q, c.head(d - 1));
        if ((q_rec - q).norm() > 1e-6) return std::nullopt;
    } catch (const Error&) {
        return std::nullopt;
    }
    return c;
}

PhasePoint window_point(const BilliardConfig& cfg, const PhaseWindow& w, const WindowChart& chart,
                        const Vec& coords) {
    const int d = cfg.dimension;
    PhasePoint x;
    x.instance = w.instance;
    x.q = surface_chart_point(cfg, w.instance, w.q_center, chart.n0, chart.frame_q,
                              coords.head(d - 1));
    x.v = (w.v_center + chart.frame_v * coords.tail(d - 1)).normalized();
    return x;
}

// cos phi at the k-th forward collision (the grazing functional whose zero
// set is T^{-k} S locally); k = 0 is cos phi of the state itself.
std::optional<double> grazing_functional(const BilliardConfig& cfg, const PhaseWindow& w,
                                         const WindowChart& chart, int k, const Vec& coords) {
    PhasePoint x;
    try {
        x = window_point(cfg, w, chart, coords);
    } catch (const Error&) {
        return std::nullopt;
    }
    if (k == 0) return outgoing_cos_phi(cfg, x);
    try {
        PhasePoint cur = x;
        double last = 0.0;
        for (int s = 0; s < k; ++s) {
            auto [next, ev] = billiard_step(cfg, cur);
            cur = next;
            last = ev.cos_phi;
        }
        return last;
    } catch (const Error&) {
        return std::nullopt;
    }
}

}  // namespace

ScalingReport singularity_tube_measure(const BilliardConfig& cfg, int k, const PhaseWindow& window,
                                       const std::vector<double>& deltas, long long n_samples,
                                       std::uint64_t seed, WindowMeasure measure) {
    const int d = cfg.dimension;
    const int dim = 2 * (d - 1);
    const WindowChart chart = window_chart(cfg, window);
    const double delta_min = *std::min_element(deltas.begin(), deltas.end());

    // pullback cloud of T^{-k} S restricted to the window.  A coarse global
    // pass locates the source tangencies whose pullbacks enter the window; a
    // cap-restricted refinement pass densifies the cloud around them.  The
    // box is per-block: chart distortion far outside the window would
    // otherwise contribute spurious cloud branches.
    std::vector<Vec> cloud;
    const double margin = 2.0 * *std::max_element(deltas.begin(), deltas.end());
    auto in_cloud_box = [&](const Vec& c) {
        return c.head(d - 1).cwiseAbs().maxCoeff() <= window.q_halfwidth + margin &&
               c.tail(d - 1).cwiseAbs().maxCoeff() <= window.v_halfwidth + margin;
    };
    std::vector<ScattererInstance> sources;
    if (k == 0) {
        sources.push_back(window.instance);
    } else {
        sources = enumerate_instances(cfg, window.q_center, cfg.horizon_bound);
    }
    struct Hotspot {
        ScattererInstance source;
        TangencySolution tangent;
    };
    std::vector<Hotspot> hotspots;
    int source_index = 0;
    for (const auto& inst : sources) {
        const auto tangents = sample_tangency_set(
            cfg.scatterer(inst.id), inst.shift.cast<double>(), k == 0 ? 1500 : 300,
            seed_at(seed, 7000 + static_cast<std::uint64_t>(source_index++)), cfg.tol);
        const auto pulled = pullback_singularity(cfg, inst, tangents, k);
        for (size_t i = 0; i < pulled.size(); ++i) {
            if (!pulled[i].retained) continue;
            if (auto c = window_coords(cfg, window, chart, pulled[i].point)) {
                if (in_cloud_box(*c)) {
                    cloud.push_back(*c);
                    if (hotspots.size() < 64) hotspots.push_back({inst, tangents[i]});
                }
            }
        }
    }
    int hot_index = 0;
    for (const auto& hot : hotspots) {
        const auto fine = sample_tangency_set_near(
            cfg.scatterer(hot.source.id), hot.source.shift.cast<double>(), hot.tangent, 0.05,
            700, seed_at(seed, 9000 + static_cast<std::uint64_t>(hot_index++)), cfg.tol);
        const auto pulled = pullback_singularity(cfg, hot.source, fine, k);
        for (const auto& s : pulled) {
            if (!s.retained) continue;
            if (auto c = window_coords(cfg, window, chart, s.point)) {
                if (in_cloud_box(*c)) cloud.push_back(*c);
            }
        }
    }

    if (!cloud.empty()) {
        // median nearest-neighbor spacing as a resolution check
        std::vector<double> nn(cloud.size(), kInf);
        for (size_t i = 0; i < cloud.size(); ++i)
            for (size_t j = 0; j < cloud.size(); ++j)
                if (i != j) nn[i] = std::min(nn[i], (cloud[i] - cloud[j]).norm());
        std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
        const double median_nn = nn[nn.size() / 2];
        if (cloud.size() > 8 && median_nn > delta_min / 2.0) {
            std::ostringstream msg;
            msg << "pullback cloud too sparse: median spacing " << median_nn << " > delta_min/2 = "
                << delta_min / 2.0;
            throw Error(errc::resolution_too_coarse, msg.str());
        }
    }

    auto g_of = [&](const Vec& coords) { return grazing_functional(cfg, window, chart, k, coords); };

    // mu_1 rejection sampling with per-index seeds; distance = min(cloud NN,
    // Newton projection on the grazing functional)
    std::vector<double> dist(static_cast<size_t>(n_samples), -1.0);  // -1 = rejected
    parallel_for(n_samples, [&](std::int64_t i) {
        Rng rng(seed_at(seed, 0xA11ce + static_cast<std::uint64_t>(i)));
        Vec coords(dim);
        for (int a = 0; a < d - 1; ++a)
            coords[a] = rng.uniform(-window.q_halfwidth, window.q_halfwidth);
        for (int a = 0; a < d - 1; ++a)
            coords[d - 1 + a] = rng.uniform(-window.v_halfwidth, window.v_halfwidth);
        PhasePoint x;
        try {
            x = window_point(cfg, window, chart, coords);
        } catch (const Error&) {
            return;
        }
        const double cphi = outgoing_cos_phi(cfg, x);
        if (measure == WindowMeasure::Mu1) {
            if (cphi <= 0.0 || rng.uniform() >= cphi) return;  // mu_1 weight
        } else if (cphi <= -cfg.tol.tangency_cos) {
            return;  // outside the collision space
        }

        double best = kInf;
        for (const Vec& z : cloud) best = std::min(best, (coords - z).norm());

        // local Newton refinement on the grazing functional
        Vec y = coords;
        auto gy = g_of(y);
        for (int it = 0; it < 12 && gy; ++it) {
            if (std::abs(*gy) < 1e-10) {
                best = std::min(best, (y - coords).norm());
                break;
            }
            Vec grad(dim);
            bool ok = true;
            const double h = 1e-6;
            for (int a = 0; a < dim && ok; ++a) {
                Vec yp = y, ym = y;
                yp[a] += h;
                ym[a] -= h;
                const auto gp = g_of(yp), gm = g_of(ym);
                if (!gp || !gm) {
                    ok = false;
                    break;
                }
                grad[a] = (*gp - *gm) / (2.0 * h);
            }
            if (!ok || grad.squaredNorm() < 1e-18) break;
            y -= (*gy / grad.squaredNorm()) * grad;
            if ((y - coords).norm() > 4.0 * std::max(window.q_halfwidth, window.v_halfwidth))
                break;  // wandered out of the window: not a local distance
            gy = g_of(y);
        }
        dist[static_cast<size_t>(i)] = best;
    });

    long long accepted = 0;
    for (double v : dist) accepted += (v >= 0.0) ? 1 : 0;

    ScalingReport report;
    report.n_samples = accepted;
    report.seed = seed;
    std::vector<double> weights;
    for (double delta : deltas) {
        long long hits = 0;
        for (double v : dist) hits += (v >= 0.0 && v < delta) ? 1 : 0;
        const double p = accepted > 0 ? static_cast<double>(hits) / accepted : 0.0;
        report.xs.push_back(delta);
        report.ys.push_back(p);
        const double hw =
            accepted > 0 ? 1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(accepted)) : 0.0;
        report.ci.push_back(hw);
        weights.push_back(p > 0.0 && hw > 0.0 ? (p * p) / (hw * hw) : 0.0);
    }
    fit_loglog(report, weights);
    return report;
}

}  // namespace disperse
