#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dive/checkpoint.hpp"
#include "dive/error.hpp"
#include "dive/rng.hpp"

namespace dive {

// Small fully connected net: SiLU hidden layers, linear output. Batches are
// columns. Enough capacity for the latent denoiser at desk scale.
struct MlpConfig {
    int input = 0;
    int output = 0;
    std::vector<int> hidden;
};

struct Mlp {
    MlpConfig cfg;
    std::vector<Eigen::MatrixXd> W;  // layer l: out x in
    std::vector<Eigen::VectorXd> b;

    static Mlp init(const MlpConfig& cfg, RandomStream& rng);
    static Mlp zeros_like(const Mlp& other);

    int layer_count() const { return static_cast<int>(W.size()); }
    long parameter_count() const;

    Eigen::MatrixXd forward(const Eigen::MatrixXd& X) const;

    struct Cache {
        std::vector<Eigen::MatrixXd> inputs;  // input to each layer
        std::vector<Eigen::MatrixXd> pre;     // pre-activation of hidden layers
    };
    Eigen::MatrixXd forward(const Eigen::MatrixXd& X, Cache& cache) const;
    // Accumulates parameter gradients for cotangent dY into `grads`.
    void backward(const Cache& cache, const Eigen::MatrixXd& dY, Mlp& grads) const;

    void save_to(Checkpoint& cp, const std::string& prefix) const;
    static Mlp load_from(const Checkpoint& cp, const std::string& prefix);

    bool same_shape(const Mlp& other) const;
    double max_abs_difference(const Mlp& other) const;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; applied to W only, never b
};

struct AdamState {
    std::vector<Eigen::MatrixXd> mW, vW;
    std::vector<Eigen::VectorXd> mb, vb;
    long step = 0;

    static AdamState zeros_like(const Mlp& params);
};

void adam_step(Mlp& params, const Mlp& grads, AdamState& state, const AdamConfig& cfg);

}  // namespace dive
