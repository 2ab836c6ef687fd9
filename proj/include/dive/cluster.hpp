#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dive/error.hpp"
#include "dive/rng.hpp"
#include "dive/voxelset.hpp"

namespace dive {

// Spherical k-means over unit rows (the shared-concentration special case of a
// von Mises-Fisher mixture): assignment by max cosine, centers as normalized
// member means, greedy farthest-point seeding, multiple restarts.
struct ClusterModel {
    int k = 0;
    Eigen::MatrixXd centers;              // k x dim, unit rows
    std::vector<int> assignment;          // per input row
    double objective = 0.0;               // sum of cosines to own center
    int iterations = 0;
    std::vector<double> objective_history;  // per recorded iteration of the winning restart
    std::vector<int> reseeded_centers;      // centers that went empty and were re-seeded
};

struct NormalizedRows {
    Eigen::MatrixXd rows;        // retained rows, unit norm
    std::vector<int> kept;       // original row index per retained row
    std::vector<int> dropped;    // rows excluded for near-zero norm
};

NormalizedRows normalize_rows(const Eigen::MatrixXd& W, double floor = 1e-8);

ClusterModel vmf_cluster(const Eigen::MatrixXd& unit_rows, int k, std::uint64_t seed,
                         int max_iters = 100, int restarts = 10);

// Pairwise 1 - cos(center_i, center_j). k must be >= 2.
Eigen::MatrixXd cluster_gap(const ClusterModel& model);

struct RankedImages {
    std::vector<int> ids;
    std::vector<double> scores;  // non-increasing
    std::string source;          // "recorded" or "generated"
};

// scores = mean over the voxel set of each column; descending, ties by id.
// `ids` names the columns; defaults to 0..n-1 when empty.
RankedImages rank_images(const Eigen::MatrixXd& matrix, const VoxelSet& S, int top_k,
                         const std::vector<int>& ids = {}, const std::string& source = "recorded");

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

// Mean silhouette on cosine distance for a given assignment (diagnostic only).
double mean_silhouette_cosine(const Eigen::MatrixXd& unit_rows, const std::vector<int>& assignment);

}  // namespace dive
