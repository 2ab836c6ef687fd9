#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dive/checkpoint.hpp"
#include "dive/features.hpp"
#include "dive/rng.hpp"

namespace dive {

// Voxel-wise linear readout on unit-normalized embeddings:
//   prediction(I) = W * (f(I) / ||f(I)||) + b
struct EncoderHead {
    Eigen::MatrixXd W;  // voxels x feature_dim
    Eigen::VectorXd b;  // voxels
    std::string extractor_id;

    long voxel_count() const { return W.rows(); }

    void save_to(Checkpoint& cp, const std::string& prefix = "encoder.") const;
    static EncoderHead load_from(const Checkpoint& cp, const std::string& prefix = "encoder.");
};

// Training-time image augmentation: mild intensity scale, small spatial
// offset with edge-replicate padding, and pixel noise.
struct AugmentConfig {
    bool enabled = true;
    double scale_min = 0.95;
    double scale_max = 1.05;
    int max_offset = -1;      // < 0: round(4 L / 224), at least 1
    double noise_sd = 0.05;

    int resolved_offset(int width) const {
        if (max_offset >= 0) return max_offset;
        const int px = static_cast<int>(std::lround(4.0 * width / 224.0));
        return std::max(1, px);
    }
};

Eigen::VectorXd augment_image(const Eigen::VectorXd& image, const ImageShape& shape,
                              const AugmentConfig& cfg, RandomStream& rng);

struct EncoderFitConfig {
    double lr_init = 3e-4;
    double lr_final = 1.5e-4;   // exponential decay per epoch, hit at the last epoch
    int epochs = 100;
    int batch = 128;
    double weight_decay = 2e-2; // decoupled, applied to W only
    AugmentConfig augment;
    std::uint64_t seed = 0;
};

struct EncoderFitResult {
    std::vector<double> epoch_loss;  // mean squared error per epoch
};

// Fits W, b from zero initialization with AdamW on the MSE between predictions
// and responses. `images` columns are pixel vectors aligned with `responses`
// columns (voxels x items). The returned W is the min-norm representative:
// components in the null space of the training embeddings are projected out,
// which leaves predictions unchanged.
EncoderHead fit_head(const std::vector<Eigen::VectorXd>& images, const Eigen::MatrixXd& responses,
                     const FeatureExtractor& fx, const EncoderFitConfig& cfg,
                     EncoderFitResult* result = nullptr);

Eigen::VectorXd predict_responses(const EncoderHead& head, const FeatureExtractor& fx,
                                  const Eigen::VectorXd& image);

// Per-voxel R^2 on held-out data. Voxels whose held-out responses have zero
// variance get NaN and are listed in `undefined` if given.
Eigen::VectorXd evaluate_r2(const EncoderHead& head, const FeatureExtractor& fx,
                            const std::vector<Eigen::VectorXd>& images,
                            const Eigen::MatrixXd& responses,
                            std::vector<int>* undefined = nullptr);

}  // namespace dive
