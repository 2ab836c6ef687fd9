#pragma once

#include <string>

#include <Eigen/Dense>

#include "dive/checkpoint.hpp"
#include "dive/error.hpp"

namespace dive {

// Maps between pixel space and the space the diffusion model runs in. Identity
// mode is a pass-through (pixel-space diffusion); learned mode is a whitened
// principal-subspace map fit in closed form:
//   encode(x) = S^-1 U^T (x - mu),   decode(z) = U S z + mu
// with U the top eigenvectors of the corpus covariance and S the per-component
// standard deviations, so latents are zero-mean unit-variance per dimension and
// the decoder Jacobian (needed by guidance) is the exact linear map U S.
enum class AutoencoderMode { Identity, Learned };

struct AutoencoderConfig {
    AutoencoderMode mode = AutoencoderMode::Learned;
    int latent_dim = 96;
    double min_component_sd = 1e-6;  // components below this are dropped
};

class Autoencoder {
  public:
    static Autoencoder identity(long data_dim);
    static Autoencoder fit(const Eigen::MatrixXd& corpus, const AutoencoderConfig& cfg);

    AutoencoderMode mode() const { return mode_; }
    long data_dim() const { return data_dim_; }
    long latent_dim() const { return mode_ == AutoencoderMode::Identity ? data_dim_ : basis_.cols(); }

    Eigen::VectorXd encode(const Eigen::VectorXd& x) const;
    Eigen::VectorXd decode(const Eigen::VectorXd& z) const;
    Eigen::MatrixXd encode_batch(const Eigen::MatrixXd& X) const;
    Eigen::MatrixXd decode_batch(const Eigen::MatrixXd& Z) const;

    // Pullback of a pixel-space cotangent through decode (exact).
    Eigen::VectorXd decode_vjp(const Eigen::VectorXd& grad_image) const;

    // Mean reconstruction MSE over a corpus (columns are items).
    double reconstruction_mse(const Eigen::MatrixXd& X) const;

    void save_to(Checkpoint& cp, const std::string& prefix = "ae.") const;
    static Autoencoder load_from(const Checkpoint& cp, const std::string& prefix = "ae.");

  private:
    AutoencoderMode mode_ = AutoencoderMode::Identity;
    long data_dim_ = 0;
    Eigen::VectorXd mean_;   // data_dim
    Eigen::MatrixXd basis_;  // data_dim x latent (orthonormal columns)
    Eigen::VectorXd sd_;     // latent
};

}  // namespace dive
