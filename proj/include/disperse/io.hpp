#pragma once

#include "disperse/billiard.hpp"
#include "disperse/genericity.hpp"
#include "disperse/measure.hpp"
#include "disperse/singularity.hpp"

#include <json.hpp>

#include <string>

namespace disperse {

using json = nlohmann::json;

/// Shortest round-trip decimal representation of a double.
std::string dtos(double v);

// -- Scene configuration --------------------------------------------------------

BilliardConfig scene_from_json(const json& j);
json scene_to_json(const BilliardConfig& cfg);
BilliardConfig load_scene(const std::string& path);

// -- Result serialization --------------------------------------------------------

/// Header: step,scatterer_id,shift_0..,q_0..,v_0..,t_flight,cos_phi,tangency.
/// q is wrapped into the instance cell (cover coordinates = q + shift).
std::string trajectory_csv(const BilliardConfig& cfg, const TrajectoryRecord& record);
json trajectory_sidecar(const BilliardConfig& cfg, const TrajectoryRecord& record);

/// Header: p_0..,v_0..,t_star,res_F,res_dF.
std::string tangency_csv(const std::vector<TangencySolution>& solutions);

/// Header: j,trials,converged,best_residual,median_iters.
std::string census_csv(const std::vector<CensusRow>& rows);

json scaling_report_json(const ScalingReport& report);
json resolution_table_json(const ResolutionTable& table);
json validation_report_json(const ValidationReport& report);

// -- Run manifest -----------------------------------------------------------------

/// FNV-1a 64-bit content hash.
std::uint64_t content_hash(const std::string& bytes);

struct RunManifest {
    std::string command;
    std::string scene_path;
    std::uint64_t scene_hash = 0;
    std::uint64_t seed = 0;
    Tolerances tolerances;
    std::string version;
    double duration_seconds = 0.0;
};

json manifest_json(const RunManifest& m);

void write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace disperse
