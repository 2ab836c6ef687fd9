#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dive/checkpoint.hpp"
#include "dive/error.hpp"
#include "dive/image.hpp"

namespace dive {

// Differentiable image embedding: a fixed bank of smooth measurements standing
// in for a pretrained backbone. Everything is C-infinity in the pixels, so the
// guidance gradient is exact (hand-coded VJP, checked against finite
// differences in the tests).
//
// Channel groups, in feature order:
//   - per-RGB-channel means over a g x g spatial pooling grid        (3 g^2)
//   - per-RGB-channel second moments over the same grid              (3 g^2)
//   - soft color histogram: image-mean Gaussian RBF responses to P
//     reference colors in RGB space                                  (P)
//   - oriented gradient energy (smoothed Sobel pair, 4 orientations)
//     of luminance over the grid                                     (4 g^2)
//   - oriented gradient energy of the two opponent-color channels,
//     pooled globally                                                (8)
//   - global stats: luminance mean, luminance second moment,
//     red-green mean, blue-yellow mean                               (4)
// Defaults (g = 2, P = 12) give K = 64.
struct FeatureExtractorConfig {
    ImageShape shape{3, 24, 24};
    int pool_grid = 2;
    int color_prototypes = 12;
    double color_sigma = 0.35;

    int dim() const {
        return 6 * pool_grid * pool_grid + color_prototypes + 4 * pool_grid * pool_grid + 8 + 4;
    }
};

class FeatureExtractor {
  public:
    explicit FeatureExtractor(FeatureExtractorConfig cfg);

    int dim() const { return cfg_.dim(); }
    const FeatureExtractorConfig& config() const { return cfg_; }
    const Eigen::MatrixXd& prototype_colors() const { return protos_; }

    // Stable identifier for provenance checks between artifacts.
    std::string id() const;

    Eigen::VectorXd extract(const Eigen::VectorXd& image) const;

    // Pullback of a feature-space cotangent to pixel space at `image`:
    // returns d<grad_features, f(.)>/d image. Exact, not approximated.
    Eigen::VectorXd extract_vjp(const Eigen::VectorXd& image,
                                const Eigen::VectorXd& grad_features) const;

    void save_to(Checkpoint& cp, const std::string& prefix = "features.") const;
    static FeatureExtractor load_from(const Checkpoint& cp, const std::string& prefix = "features.");

  private:
    FeatureExtractorConfig cfg_;
    Eigen::MatrixXd protos_;           // P x 3 reference colors
    std::vector<int> cell_of_y_;       // row -> pool cell row
    std::vector<int> cell_of_x_;
    std::vector<long> cell_count_;     // pixels per pool cell
};

// v / ||v||, throwing DegenerateEmbeddingError when ||v|| < floor.
Eigen::VectorXd normalize_embedding(const Eigen::VectorXd& v, double floor = 1e-8);

// Embeddings of a batch of images as unit columns (K x n).
Eigen::MatrixXd embed_images(const FeatureExtractor& fx,
                             const std::vector<Eigen::VectorXd>& images);

}  // namespace dive
