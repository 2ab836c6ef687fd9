#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dive/autoencoder.hpp"
#include "dive/denoiser.hpp"
#include "dive/encoder.hpp"
#include "dive/schedule.hpp"
#include "dive/voxelset.hpp"

namespace dive {

// Brain-guided sampling: at each reverse step the predicted noise is perturbed
// against the gradient of the mean predicted response over a voxel set,
// evaluated on a partially denoised image. The denoiser output is treated as a
// constant when differentiating; only the objective path (blend -> decode ->
// features -> normalize -> readout) is differentiated, and that path is exact.

// Convex move from the noisy state toward the clean estimate:
//   x' = sqrt(1 - abar_t) * x0_hat + (1 - sqrt(1 - abar_t)) * x_t
template <typename XD, typename ED>
typename XD::PlainObject blend_euler(const Eigen::MatrixBase<XD>& x_t,
                                     const Eigen::MatrixBase<ED>& x0_hat, int t,
                                     const NoiseSchedule& s) {
    if (x_t.rows() != x0_hat.rows() || x_t.cols() != x0_hat.cols()) {
        throw ArgumentError("blend_euler: shapes differ");
    }
    const double w = std::sqrt(1.0 - s.alpha_bar_at(t));
    return w * x0_hat + (1.0 - w) * x_t;
}

// Mean predicted response over the voxel set at a decoded image.
double region_objective(const EncoderHead& head, const FeatureExtractor& fx, const VoxelSet& region,
                        const Eigen::VectorXd& image);

struct ObjectiveGradient {
    double value = 0.0;
    Eigen::VectorXd grad;  // d value / d x_t, in model space
};

// Differentiates the region objective with respect to the *noisy* model-space
// state x_t, through predict_x0 (eps held constant), blend_euler, the decoder,
// the feature extractor, and the embedding normalization. The resulting total
// gradient equals the average of the per-voxel response gradients.
ObjectiveGradient objective_gradient(const EncoderHead& head, const FeatureExtractor& fx,
                                     const Autoencoder& ae, const VoxelSet& region,
                                     const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_pred,
                                     int t, const NoiseSchedule& s);

// eps' = eps - sqrt(1 - abar_t) * gamma * grad
template <typename ED, typename GD>
typename ED::PlainObject perturb_epsilon(const Eigen::MatrixBase<ED>& eps,
                                         const Eigen::MatrixBase<GD>& grad, int t, double gamma,
                                         const NoiseSchedule& s) {
    if (eps.rows() != grad.rows() || eps.cols() != grad.cols()) {
        throw ArgumentError("perturb_epsilon: shapes differ");
    }
    return eps - std::sqrt(1.0 - s.alpha_bar_at(t)) * gamma * grad;
}

struct GuidanceConfig {
    double gamma = 130.0;        // used as-is when calibrate is off
    bool calibrate = true;       // pick gamma from a pilot chain instead
    double target_ratio = 0.2;   // first-step ||perturbation|| / ||eps||
    int sample_steps = 50;
    double eta = 0.0;
    int trace_every = 4;         // snapshot cadence (steps); 0 disables snapshots
    int snapshot_chains = 1;     // record snapshots for this many leading chains
};

struct GuidanceTrace {
    std::vector<int> timesteps;          // t at every sampler step
    std::vector<double> objective;       // region objective per step
    std::vector<double> grad_norm;       // model-space gradient norm per step
    std::vector<int> snapshot_steps;     // sampler step index of each snapshot
    std::vector<Eigen::VectorXd> snapshots;  // decoded clean estimates
};

struct GuidedBatch {
    Eigen::MatrixXd images;              // pixel space, columns are samples
    Eigen::VectorXd final_objective;     // region objective of each final image
    std::vector<GuidanceTrace> traces;   // one per chain (snapshots only on leading chains)
    double gamma_used = 0.0;
};

GuidedBatch generate_guided(const DenoiserModel& model, const NoiseSchedule& schedule,
                            const Autoencoder& ae, const EncoderHead& head,
                            const FeatureExtractor& fx, const VoxelSet& region,
                            const GuidanceConfig& cfg, int n, std::uint64_t seed,
                            int threads = 1);

// Diagnostic: plain gradient ascent of the region objective directly in pixel
// space. `alignment` is the cosine between the final unit embedding and the
// normalized sum of the region's readout rows (the analytic optimum under a
// norm constraint).
struct AscentResult {
    Eigen::VectorXd image;
    double alignment = 0.0;
    std::vector<double> objective_history;
};

AscentResult ascent_diagnostic(const EncoderHead& head, const FeatureExtractor& fx,
                               const VoxelSet& region, const Eigen::VectorXd& init_image,
                               int steps, double step_size);

}  // namespace dive
