#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dive/config.hpp"
#include "dive/voxelset.hpp"

namespace dive {

// Per-command overrides passed on top of the run config. They never enter the
// config hash; the manifest records what was actually used.
struct StageOverrides {
    double gamma = -1.0;    // >= 0: fixed guidance scale, calibration off
    std::string voxel_set;  // restrict generate to one set / redirect cluster
    int k = 0;              // > 0: cluster count override
    int tier = 0;           // > 0: additional specificity tier (image count)
};

const std::vector<std::string>& stage_names();

// Runs one stage end to end: lock the output directory, check the stored
// config, validate input artifacts, work, then fold outputs + scalars into
// the manifest atomically.
void run_stage(const RunConfig& cfg, const std::string& stage, const StageOverrides& ov = {});

// All stages in pipeline order.
void run_all(const RunConfig& cfg, const StageOverrides& ov = {});

// voxel_sets.json: named index sets with provenance, sorted by name.
void save_voxel_sets(const std::filesystem::path& path,
                     const std::map<std::string, VoxelSet>& sets);
std::map<std::string, VoxelSet> load_voxel_sets(const std::filesystem::path& path);

}  // namespace dive
