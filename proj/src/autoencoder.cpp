#include "dive/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dive {

Autoencoder Autoencoder::identity(long data_dim) {
    if (data_dim < 1) throw ArgumentError("autoencoder: data_dim must be positive");
    Autoencoder ae;
    ae.mode_ = AutoencoderMode::Identity;
    ae.data_dim_ = data_dim;
    return ae;
}

Autoencoder Autoencoder::fit(const Eigen::MatrixXd& corpus, const AutoencoderConfig& cfg) {
    if (cfg.mode == AutoencoderMode::Identity) {
        if (corpus.rows() < 1) throw EmptyInputError("autoencoder: empty corpus");
        return identity(corpus.rows());
    }
    if (corpus.cols() < 2) throw EmptyInputError("autoencoder: need at least 2 items to fit");
    if (cfg.latent_dim < 1) throw ArgumentError("autoencoder: latent_dim must be positive");
    const long D = corpus.rows();
    const long n = corpus.cols();
    if (cfg.latent_dim > std::min<long>(D, n - 1)) {
        throw ArgumentError("autoencoder: latent_dim exceeds corpus rank bound");
    }

    Autoencoder ae;
    ae.mode_ = AutoencoderMode::Learned;
    ae.data_dim_ = D;
    ae.mean_ = corpus.rowwise().mean();
    Eigen::MatrixXd centered = corpus.colwise() - ae.mean_;
    const Eigen::MatrixXd cov = (centered * centered.transpose()) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw TrainingError("autoencoder: eigendecomposition failed");

    // top components, largest eigenvalue first, dropping near-degenerate ones
    std::vector<std::pair<double, long>> order;
    for (long i = 0; i < D; ++i) order.emplace_back(eig.eigenvalues()[i], i);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<long> keep;
    for (long k = 0; k < cfg.latent_dim && k < static_cast<long>(order.size()); ++k) {
        const double lam = order[static_cast<std::size_t>(k)].first;
        if (lam <= cfg.min_component_sd * cfg.min_component_sd) break;
        keep.push_back(order[static_cast<std::size_t>(k)].second);
    }
    if (keep.empty()) throw TrainingError("autoencoder: corpus has no variance to model");

    ae.basis_.resize(D, static_cast<long>(keep.size()));
    ae.sd_.resize(static_cast<long>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        Eigen::VectorXd v = eig.eigenvectors().col(keep[k]);
        // fix sign for reproducibility: largest-magnitude entry positive
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v[imax] < 0) v = -v;
        ae.basis_.col(static_cast<long>(k)) = v;
        ae.sd_[static_cast<long>(k)] = std::sqrt(eig.eigenvalues()[keep[k]]);
    }
    return ae;
}

Eigen::VectorXd Autoencoder::encode(const Eigen::VectorXd& x) const {
    if (x.size() != data_dim_) throw ArgumentError("autoencoder encode: wrong dimension");
    if (mode_ == AutoencoderMode::Identity) return x;
    return (basis_.transpose() * (x - mean_)).cwiseQuotient(sd_);
}

Eigen::VectorXd Autoencoder::decode(const Eigen::VectorXd& z) const {
    if (mode_ == AutoencoderMode::Identity) {
        if (z.size() != data_dim_) throw ArgumentError("autoencoder decode: wrong dimension");
        return z;
    }
    if (z.size() != basis_.cols()) throw ArgumentError("autoencoder decode: wrong dimension");
    return basis_ * z.cwiseProduct(sd_) + mean_;
}

Eigen::MatrixXd Autoencoder::encode_batch(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd Z(latent_dim(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) Z.col(j) = encode(X.col(j));
    return Z;
}

Eigen::MatrixXd Autoencoder::decode_batch(const Eigen::MatrixXd& Z) const {
    Eigen::MatrixXd X(data_dim_, Z.cols());
    for (Eigen::Index j = 0; j < Z.cols(); ++j) X.col(j) = decode(Z.col(j));
    return X;
}

Eigen::VectorXd Autoencoder::decode_vjp(const Eigen::VectorXd& grad_image) const {
    if (grad_image.size() != data_dim_) throw ArgumentError("decode_vjp: wrong dimension");
    if (mode_ == AutoencoderMode::Identity) return grad_image;
    return (basis_.transpose() * grad_image).cwiseProduct(sd_);
}

double Autoencoder::reconstruction_mse(const Eigen::MatrixXd& X) const {
    if (X.cols() < 1) throw EmptyInputError("reconstruction_mse: empty batch");
    double acc = 0.0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        acc += (decode(encode(X.col(j))) - X.col(j)).squaredNorm();
    }
    return acc / static_cast<double>(X.cols() * X.rows());
}

void Autoencoder::save_to(Checkpoint& cp, const std::string& prefix) const {
    Eigen::VectorXd meta(2);
    meta << (mode_ == AutoencoderMode::Identity ? 0.0 : 1.0), static_cast<double>(data_dim_);
    cp.add(prefix + "meta", TensorData::from_vector(meta));
    if (mode_ == AutoencoderMode::Learned) {
        cp.add(prefix + "mean", TensorData::from_vector(mean_));
        cp.add(prefix + "basis", TensorData::from_matrix(basis_));
        cp.add(prefix + "sd", TensorData::from_vector(sd_));
    }
}

Autoencoder Autoencoder::load_from(const Checkpoint& cp, const std::string& prefix) {
    const Eigen::VectorXd meta = cp.vector(prefix + "meta");
    if (meta.size() != 2) throw FormatError("autoencoder: bad meta tensor");
    const long D = static_cast<long>(meta[1]);
    if (meta[0] == 0.0) return identity(D);
    Autoencoder ae;
    ae.mode_ = AutoencoderMode::Learned;
    ae.data_dim_ = D;
    ae.mean_ = cp.vector(prefix + "mean");
    ae.basis_ = cp.matrix(prefix + "basis");
    ae.sd_ = cp.vector(prefix + "sd");
    if (ae.mean_.size() != D || ae.basis_.rows() != D || ae.sd_.size() != ae.basis_.cols()) {
        throw FormatError("autoencoder: inconsistent tensor shapes");
    }
    return ae;
}

}  // namespace dive
