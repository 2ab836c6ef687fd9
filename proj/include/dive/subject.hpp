#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dive/checkpoint.hpp"
#include "dive/features.hpp"
#include "dive/voxelset.hpp"
#include "dive/world.hpp"

namespace dive {

// Ground-truth tuning: each region's voxels carry unit readout rows drawn
// around their category's prototype direction (the normalized mean category
// embedding). The patches region instead splits 50/50 across two planted
// directions a fixed angle apart, aligned with the vivid/muted palette halves
// of the rendered patches so the sub-clusters correspond to a real image
// property.
struct SubjectConfig {
    int voxels = 500;
    int region_voxels = 100;        // per category; remainder is non-selective
    double kappa = 50.0;            // tuning concentration
    double offrow_norm = 0.1;       // norm of non-selective rows
    double bias_sd = 0.1;
    double noise_sd = 0.15;
    double session_offset_sd = 0.1;
    int subclusters = 2;            // planted in the patches region
    double subcluster_angle_deg = 60.0;
    int sessions = 4;
    int repeats = 3;
};

struct GroundTruthSubject {
    Eigen::MatrixXd W;              // voxels x feature_dim
    Eigen::VectorXd b;
    std::vector<int> region;        // category id, -1 for non-selective voxels
    std::vector<int> subcluster;    // -1 outside the sub-clustered region
    Eigen::MatrixXd prototype_dirs; // categories x feature_dim
    Eigen::MatrixXd subcluster_dirs;// subclusters x feature_dim (row 0 = vivid)
    double noise_sd = 0.0;
    double session_offset_sd = 0.0;

    long voxel_count() const { return W.rows(); }
    VoxelSet region_voxels(int category, const std::string& provenance_note = "") const;
    VoxelSet subcluster_voxels(int sub) const;

    void save_to(Checkpoint& cp, const std::string& prefix = "subject.") const;
    static GroundTruthSubject load_from(const Checkpoint& cp, const std::string& prefix = "subject.");
};

GroundTruthSubject make_subject(const World& world, const FeatureExtractor& fx,
                                const SubjectConfig& cfg, std::uint64_t seed);

struct Presentation {
    int image = 0;
    int session = 0;
    int repeat = 0;
};

struct SubjectDataset {
    std::vector<Presentation> presentations;  // one per column until averaged
    Eigen::MatrixXd betas;                    // voxels x columns
    bool normalized = false;
    bool averaged = false;
    std::vector<int> image_ids;                       // per column, once averaged
    std::vector<std::pair<int, int>> zero_variance;   // (voxel, session) pairs flagged

    // voxels with any flagged session, deduplicated ascending
    std::vector<int> flagged_voxels() const;
};

SubjectDataset simulate_recordings(const GroundTruthSubject& subject, const World& world,
                                   const FeatureExtractor& fx, int sessions, int repeats,
                                   std::uint64_t seed, int threads = 1);

// Per voxel, per session z-scoring with the population-sd convention.
// Zero-variance (voxel, session) pairs are flagged and their values set to 0.
// Idempotent.
void normalize_sessions(SubjectDataset& ds);

// Collapses presentations to one column per image (mean over repeats).
// Requires a normalized dataset.
void average_repeats(SubjectDataset& ds);

// Two-sample pooled-variance t of (category images) vs (rest), per voxel,
// on an averaged dataset. Positive t means category-preferring. Voxels with
// zero pooled variance get NaN.
Eigen::VectorXd compute_tstats(const SubjectDataset& ds, const std::vector<int>& image_category,
                               int category);

// Indices with t > threshold, minus `excluded`, intersected with `mask` when
// given. NaN t never selects. An empty result is allowed.
VoxelSet select_voxels(const Eigen::VectorXd& tstats, double threshold,
                       const VoxelSet* mask = nullptr,
                       const std::vector<int>* excluded = nullptr,
                       const std::string& provenance = "");

// Dataset container: betas.bin (float32 little-endian, row-major voxels x
// columns) + meta.json. Ground truth is saved separately by the caller.
void save_dataset(const std::filesystem::path& dir, const SubjectDataset& ds,
                  const std::vector<int>& image_category);
SubjectDataset load_dataset(const std::filesystem::path& dir,
                            std::vector<int>* image_category = nullptr);

}  // namespace dive
