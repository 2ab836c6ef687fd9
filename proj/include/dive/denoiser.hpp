#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dive/checkpoint.hpp"
#include "dive/nn.hpp"
#include "dive/schedule.hpp"

namespace dive {

// Epsilon-prediction network over flat data vectors (pixel or latent space).
// Timestep enters through a sinusoidal embedding of t / steps.
struct DenoiserConfig {
    long data_dim = 0;
    std::vector<int> hidden{256, 256};
    int time_embed_dim = 16;  // even: sin/cos pairs
};

struct DenoiserModel {
    DenoiserConfig cfg;
    int schedule_steps = 0;  // the schedule the model was trained against
    Mlp net;

    Eigen::VectorXd time_embedding(int t) const;
    Eigen::VectorXd predict_eps(const Eigen::VectorXd& x_t, int t) const;
    // columns are samples; ts gives the timestep per column
    Eigen::MatrixXd predict_eps_batch(const Eigen::MatrixXd& X, const std::vector<int>& ts) const;

    void save_to(Checkpoint& cp, const std::string& prefix = "model.") const;
    static DenoiserModel load_from(const Checkpoint& cp, const std::string& prefix = "model.");
};

struct DenoiserTrainConfig {
    int steps = 8000;
    int batch = 128;
    double lr = 1e-3;
    double lr_final = 1e-4;  // cosine decay target
    double grad_clip = 1.0;  // global-norm clip; 0 disables
    std::uint64_t seed = 0;
};

struct DenoiserTrainResult {
    std::vector<double> loss_history;  // one entry per optimization step
};

// Initializes from the seed and runs `steps` epsilon-MSE steps over the corpus
// (columns are items, already in model space). steps == 0 returns the seeded
// initialization untouched. Throws TrainingError (naming the step) if the loss
// goes non-finite.
DenoiserModel train_denoiser(const Eigen::MatrixXd& corpus, const NoiseSchedule& schedule,
                             const DenoiserConfig& cfg, const DenoiserTrainConfig& train,
                             DenoiserTrainResult* result = nullptr);

// Reverse process without guidance. Returns data_dim x n samples. Chains use
// per-index RNG streams, so results do not depend on `threads`.
Eigen::MatrixXd sample_unguided(const DenoiserModel& model, const NoiseSchedule& schedule,
                                int n, int sample_steps, double eta, std::uint64_t seed,
                                int threads = 1);

}  // namespace dive
