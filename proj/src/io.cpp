#include "disperse/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace disperse {

std::string dtos(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

Vec vec_from_json(const json& j) {
    Vec v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

json vec_to_json(const Vec& v) {
    json j = json::array();
    for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

}  // namespace

BilliardConfig scene_from_json(const json& j) {
    BilliardConfig cfg;
    cfg.dimension = j.at("dimension").get<int>();
    if (cfg.dimension < 2) throw Error(errc::bad_input, "dimension must be >= 2");
    cfg.horizon_bound = j.at("horizon_bound").get<double>();
    cfg.tau0 = j.at("tau0").get<double>();
    if (!(cfg.horizon_bound > 0.0) || !(cfg.tau0 > 0.0))
        throw Error(errc::bad_input, "horizon_bound and tau0 must be positive");

    if (j.contains("tolerances")) {
        const json& t = j["tolerances"];
        if (t.contains("on_surface")) cfg.tol.on_surface = t["on_surface"].get<double>();
        if (t.contains("gradient_floor")) cfg.tol.gradient_floor = t["gradient_floor"].get<double>();
        if (t.contains("tangency_cos")) cfg.tol.tangency_cos = t["tangency_cos"].get<double>();
        if (t.contains("newton_residual"))
            cfg.tol.newton_residual = t["newton_residual"].get<double>();
        if (t.contains("newton_max_iter")) cfg.tol.newton_max_iter = t["newton_max_iter"].get<int>();
    }

    int next_id = 0;
    for (const json& sj : j.at("scatterers")) {
        Scatterer s;
        s.id = next_id++;
        const std::string kind = sj.at("kind").get<std::string>();
        s.center = vec_from_json(sj.at("center"));
        if (s.center.size() != cfg.dimension)
            throw Error(errc::bad_input, "scatterer center has the wrong dimension");
        if (kind == "sphere") {
            s.kind = SurfaceKind::Sphere;
            s.radius = sj.at("radius").get<double>();
            if (!(s.radius > 0.0)) throw Error(errc::bad_input, "sphere radius must be positive");
        } else if (kind == "ellipsoid") {
            s.kind = SurfaceKind::Ellipsoid;
            s.semi_axes = vec_from_json(sj.at("semi_axes"));
            if (s.semi_axes.size() != cfg.dimension || s.semi_axes.minCoeff() <= 0.0)
                throw Error(errc::bad_input, "ellipsoid semi_axes must be positive, length d");
        } else {
            throw Error(errc::bad_input, "unknown scatterer kind: " + kind);
        }
        if (sj.contains("derivative_order"))
            s.derivative_order = sj["derivative_order"].get<int>();
        if (sj.contains("bumps")) {
            for (const json& bj : sj["bumps"]) {
                Bump b;
                b.center = vec_from_json(bj.at("center"));
                b.radius = bj.at("radius").get<double>();
                b.amplitude = bj.at("amplitude").get<double>();
                if (bj.contains("sign")) b.amplitude *= bj["sign"].get<double>();
                if (!(b.radius > 0.0)) throw Error(errc::bad_input, "bump radius must be positive");
                s.bumps.push_back(b);
            }
        }
        cfg.scatterers.push_back(std::move(s));
    }
    if (cfg.scatterers.empty()) throw Error(errc::bad_input, "scene has no scatterers");
    return cfg;
}

json scene_to_json(const BilliardConfig& cfg) {
    json j;
    j["dimension"] = cfg.dimension;
    j["horizon_bound"] = cfg.horizon_bound;
    j["tau0"] = cfg.tau0;
    j["tolerances"] = {{"on_surface", cfg.tol.on_surface},
                       {"gradient_floor", cfg.tol.gradient_floor},
                       {"tangency_cos", cfg.tol.tangency_cos},
                       {"newton_residual", cfg.tol.newton_residual},
                       {"newton_max_iter", cfg.tol.newton_max_iter}};
    j["scatterers"] = json::array();
    for (const Scatterer& s : cfg.scatterers) {
        json sj;
        sj["kind"] = s.kind == SurfaceKind::Sphere ? "sphere" : "ellipsoid";
        sj["center"] = vec_to_json(s.center);
        if (s.kind == SurfaceKind::Sphere)
            sj["radius"] = s.radius;
        else
            sj["semi_axes"] = vec_to_json(s.semi_axes);
        sj["derivative_order"] = s.derivative_order;
        if (!s.bumps.empty()) {
            sj["bumps"] = json::array();
            for (const Bump& b : s.bumps)
                sj["bumps"].push_back({{"center", vec_to_json(b.center)},
                                       {"radius", b.radius},
                                       {"amplitude", b.amplitude}});
        }
        j["scatterers"].push_back(sj);
    }
    return j;
}

BilliardConfig load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(errc::bad_input, "cannot open scene file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error(errc::bad_input, std::string("scene JSON parse error: ") + e.what());
    }
    return scene_from_json(j);
}

std::string trajectory_csv(const BilliardConfig& cfg, const TrajectoryRecord& record) {
    const int d = cfg.dimension;
    std::ostringstream out;
    out << "step,scatterer_id";
    for (int i = 0; i < d; ++i) out << ",shift_" << i;
    for (int i = 0; i < d; ++i) out << ",q_" << i;
    for (int i = 0; i < d; ++i) out << ",v_" << i;
    out << ",t_flight,cos_phi,tangency\n";
    int step = 0;
    Vec v = record.initial.v;
    for (const ReflectionEvent& ev : record.events) {
        out << step << ',' << ev.instance.id;
        for (int i = 0; i < d; ++i) out << ',' << ev.instance.shift[i];
        const Vec q_cell = ev.q_hit - ev.instance.shift.cast<double>();
        for (int i = 0; i < d; ++i) out << ',' << dtos(q_cell[i]);
        for (int i = 0; i < d; ++i) out << ',' << dtos(v[i]);
        out << ',' << dtos(ev.t_flight) << ',' << dtos(ev.cos_phi) << ','
            << (ev.tangency ? 1 : 0) << '\n';
        // velocity after this event, for the next row
        if (!ev.tangency) {
            Vec g = instance_gradient(cfg, ev.instance, ev.q_hit);
            v = reflect_velocity(v, g / g.norm());
        }
        ++step;
    }
    return out.str();
}

json trajectory_sidecar(const BilliardConfig& cfg, const TrajectoryRecord& record) {
    json j;
    j["dimension"] = cfg.dimension;
    j["initial"] = {{"scatterer_id", record.initial.instance.id},
                    {"q", vec_to_json(record.initial.q)},
                    {"v", vec_to_json(record.initial.v)}};
    j["events"] = record.events.size();
    switch (record.reason) {
        case Termination::Completed: j["termination"] = "completed"; break;
        case Termination::TangencyAbort: j["termination"] = "tangency-abort"; break;
        case Termination::NoHit: j["termination"] = "no-hit"; break;
    }
    return j;
}

std::string tangency_csv(const std::vector<TangencySolution>& solutions) {
    std::ostringstream out;
    if (solutions.empty()) return "p_0,v_0,t_star,res_F,res_dF\n";
    const int d = static_cast<int>(solutions.front().line.p.size());
    for (int i = 0; i < d; ++i) out << (i ? "," : "") << "p_" << i;
    for (int i = 0; i < d; ++i) out << ",v_" << i;
    out << ",t_star,res_F,res_dF\n";
    for (const TangencySolution& s : solutions) {
        for (int i = 0; i < d; ++i) out << (i ? "," : "") << dtos(s.line.p[i]);
        for (int i = 0; i < d; ++i) out << ',' << dtos(s.line.v[i]);
        out << ',' << dtos(s.t_star) << ',' << dtos(s.res_f) << ',' << dtos(s.res_df) << '\n';
    }
    return out.str();
}

std::string census_csv(const std::vector<CensusRow>& rows) {
    std::ostringstream out;
    out << "j,trials,converged,best_residual,median_iters\n";
    for (const CensusRow& r : rows)
        out << r.j << ',' << r.trials << ',' << r.converged << ',' << dtos(r.best_residual) << ','
            << dtos(r.median_iters) << '\n';
    return out.str();
}

json scaling_report_json(const ScalingReport& report) {
    json j;
    j["deltas"] = report.xs;
    j["fractions"] = report.ys;
    j["ci"] = report.ci;
    j["slope"] = report.slope;
    j["intercept"] = report.intercept;
    j["r2"] = report.r2;
    j["degenerate"] = report.degenerate;
    j["n_samples"] = report.n_samples;
    j["seed"] = report.seed;
    return j;
}

json resolution_table_json(const ResolutionTable& table) {
    json j;
    j["tau"] = table.tau;
    j["G_plus"] = table.g_plus;
    j["G_minus"] = table.g_minus;
    j["reconstruction_residual"] = table.recon_residual;
    return j;
}

json validation_report_json(const ValidationReport& report) {
    json j;
    j["min_gap"] = report.min_gap;
    j["lambda0"] = report.lambda0;
    j["max_flight"] = report.max_flight;
    j["min_flight"] = report.min_flight;
    j["flights_sampled"] = report.flights_sampled;
    j["flags"] = {{"convexity_violated", report.flags.convexity_violated},
                  {"disjointness_violated", report.flags.disjointness_violated},
                  {"finite_horizon_violated", report.flags.finite_horizon_violated},
                  {"min_flight_violated", report.flags.min_flight_violated}};
    j["notes"] = report.notes;
    if (report.free_corridor_p) {
        j["free_corridor"] = {{"p", vec_to_json(*report.free_corridor_p)},
                              {"v", vec_to_json(*report.free_corridor_v)}};
    }
    return j;
}

std::uint64_t content_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

json manifest_json(const RunManifest& m) {
    json j;
    j["command"] = m.command;
    j["scene_path"] = m.scene_path;
    j["scene_hash"] = m.scene_hash;
    j["seed"] = m.seed;
    j["tolerances"] = {{"on_surface", m.tolerances.on_surface},
                       {"gradient_floor", m.tolerances.gradient_floor},
                       {"tangency_cos", m.tolerances.tangency_cos},
                       {"newton_residual", m.tolerances.newton_residual},
                       {"newton_max_iter", m.tolerances.newton_max_iter}};
    j["version"] = m.version;
    j["duration_seconds"] = m.duration_seconds;
    return j;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(errc::bad_input, "cannot write file: " + path);
    out << bytes;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(errc::bad_input, "cannot read file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace disperse
