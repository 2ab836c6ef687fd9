#include "dive/encoder.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace dive {

void EncoderHead::save_to(Checkpoint& cp, const std::string& prefix) const {
    cp.add(prefix + "W", TensorData::from_matrix(W));
    cp.add(prefix + "b", TensorData::from_vector(b));
}

EncoderHead EncoderHead::load_from(const Checkpoint& cp, const std::string& prefix) {
    EncoderHead h;
    h.W = cp.matrix(prefix + "W");
    h.b = cp.vector(prefix + "b");
    if (h.b.size() != h.W.rows()) throw FormatError("encoder head: W/b shape mismatch");
    return h;
}

Eigen::VectorXd augment_image(const Eigen::VectorXd& image, const ImageShape& shape,
                              const AugmentConfig& cfg, RandomStream& rng) {
    if (image.size() != shape.size()) throw ArgumentError("augment_image: size mismatch");
    if (!cfg.enabled) return image;
    const int off = cfg.resolved_offset(shape.width);
    // fixed draw order: dy, dx, scale, then per-pixel noise
    const int dy = static_cast<int>(rng.uniform_int(2 * off + 1)) - off;
    const int dx = static_cast<int>(rng.uniform_int(2 * off + 1)) - off;
    const double s = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * rng.uniform();

    Eigen::VectorXd out(image.size());
    for (int c = 0; c < shape.channels; ++c) {
        for (int y = 0; y < shape.height; ++y) {
            const int sy = std::min(shape.height - 1, std::max(0, y - dy));
            for (int x = 0; x < shape.width; ++x) {
                const int sx = std::min(shape.width - 1, std::max(0, x - dx));
                out[image_index(shape, c, y, x)] = s * image[image_index(shape, c, sy, sx)];
            }
        }
    }
    if (cfg.noise_sd > 0.0) {
        for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += cfg.noise_sd * rng.normal();
    }
    return out;
}

EncoderHead fit_head(const std::vector<Eigen::VectorXd>& images, const Eigen::MatrixXd& responses,
                     const FeatureExtractor& fx, const EncoderFitConfig& cfg,
                     EncoderFitResult* result) {
    const long n = static_cast<long>(images.size());
    if (n == 0) throw EmptyInputError("fit_head: no training items");
    if (responses.cols() != n) throw ArgumentError("fit_head: responses do not align with images");
    if (cfg.epochs < 0) throw ArgumentError("fit_head: epochs must be non-negative");
    if (cfg.batch < 1) throw ArgumentError("fit_head: batch must be positive");

    const long V = responses.rows();
    const int K = fx.dim();

    EncoderHead head;
    head.W = Eigen::MatrixXd::Zero(V, K);
    head.b = Eigen::VectorXd::Zero(V);
    head.extractor_id = fx.id();
    if (result) result->epoch_loss.clear();

    // embeddings of the clean images are reused whenever augmentation is off
    Eigen::MatrixXd clean;
    if (!cfg.augment.enabled) {
        clean.resize(K, n);
        for (long i = 0; i < n; ++i) {
            clean.col(i) = normalize_embedding(fx.extract(images[static_cast<std::size_t>(i)]));
        }
    }

    Eigen::MatrixXd mW = Eigen::MatrixXd::Zero(V, K), vW = Eigen::MatrixXd::Zero(V, K);
    Eigen::VectorXd mb = Eigen::VectorXd::Zero(V), vb = Eigen::VectorXd::Zero(V);
    long adam_t = 0;
    const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double frac = cfg.epochs == 1 ? 0.0 : static_cast<double>(epoch) / (cfg.epochs - 1);
        const double lr = cfg.lr_init * std::pow(cfg.lr_final / cfg.lr_init, frac);

        RandomStream shuffle_rng(cfg.seed, "fit-shuffle", static_cast<std::uint64_t>(epoch));
        const std::vector<int> order = shuffled_indices(static_cast<int>(n), shuffle_rng);

        double epoch_sse = 0.0;
        for (long start = 0; start < n; start += cfg.batch) {
            const long B = std::min<long>(cfg.batch, n - start);
            Eigen::MatrixXd U(K, B);
            Eigen::MatrixXd Y(V, B);
            for (long j = 0; j < B; ++j) {
                const int idx = order[static_cast<std::size_t>(start + j)];
                Y.col(j) = responses.col(idx);
                if (cfg.augment.enabled) {
                    RandomStream aug_rng(cfg.seed, "fit-augment",
                                         static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(n) +
                                             static_cast<std::uint64_t>(idx));
                    const Eigen::VectorXd aug = augment_image(images[static_cast<std::size_t>(idx)],
                                                              fx.config().shape, cfg.augment, aug_rng);
                    try {
                        U.col(j) = normalize_embedding(fx.extract(aug));
                    } catch (const DegenerateEmbeddingError& e) {
                        throw DegenerateEmbeddingError(std::string(e.what()) + " (training image " +
                                                       std::to_string(idx) + ")");
                    }
                } else {
                    U.col(j) = clean.col(idx);
                }
            }
            Eigen::MatrixXd R = ((head.W * U).colwise() + head.b) - Y;
            epoch_sse += R.squaredNorm();
            const double scale = 2.0 / static_cast<double>(B * V);
            const Eigen::MatrixXd gW = scale * R * U.transpose();
            const Eigen::VectorXd gb = scale * R.rowwise().sum();

            adam_t += 1;
            const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam_t));
            const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam_t));
            mW = b1 * mW + (1.0 - b1) * gW;
            vW = (b2 * vW.array() + (1.0 - b2) * gW.array().square()).matrix();
            if (cfg.weight_decay > 0.0) head.W *= 1.0 - lr * cfg.weight_decay;
            head.W.array() -= lr * (mW.array() / bc1) / ((vW.array() / bc2).sqrt() + adam_eps);
            mb = b1 * mb + (1.0 - b1) * gb;
            vb = (b2 * vb.array() + (1.0 - b2) * gb.array().square()).matrix();
            head.b.array() -= lr * (mb.array() / bc1) / ((vb.array() / bc2).sqrt() + adam_eps);
        }
        const double mse = epoch_sse / static_cast<double>(n * V);
        if (!std::isfinite(mse)) {
            throw TrainingError("fit_head: non-finite loss at epoch " + std::to_string(epoch));
        }
        if (result) result->epoch_loss.push_back(mse);
    }

    // Min-norm gauge. The feature map obeys exact linear constraints, so W is
    // identified only up to the null space of the training embeddings; Adam's
    // coordinatewise scaling lets stray mass accumulate there. Project it out.
    // Predictions are unchanged for any input honoring the same constraints.
    if (cfg.augment.enabled) {
        clean.resize(K, n);
        for (long i = 0; i < n; ++i) {
            clean.col(i) = normalize_embedding(fx.extract(images[static_cast<std::size_t>(i)]));
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gram_eig(clean * clean.transpose());
    const double gram_lmax = gram_eig.eigenvalues().maxCoeff();
    long null_dims = 0;
    while (null_dims < K && gram_eig.eigenvalues()[null_dims] <= gram_lmax * 1e-12) ++null_dims;
    if (null_dims > 0) {
        const Eigen::MatrixXd basis = gram_eig.eigenvectors().rightCols(K - null_dims);
        head.W = (head.W * basis) * basis.transpose();
    }
    return head;
}

Eigen::VectorXd predict_responses(const EncoderHead& head, const FeatureExtractor& fx,
                                  const Eigen::VectorXd& image) {
    const Eigen::VectorXd u = normalize_embedding(fx.extract(image));
    return head.W * u + head.b;
}

Eigen::VectorXd evaluate_r2(const EncoderHead& head, const FeatureExtractor& fx,
                            const std::vector<Eigen::VectorXd>& images,
                            const Eigen::MatrixXd& responses, std::vector<int>* undefined) {
    const long n = static_cast<long>(images.size());
    if (n == 0) throw EmptyInputError("evaluate_r2: no items");
    if (responses.cols() != n) throw ArgumentError("evaluate_r2: responses do not align with images");
    const long V = responses.rows();

    Eigen::MatrixXd P(V, n);
    for (long i = 0; i < n; ++i) {
        P.col(i) = predict_responses(head, fx, images[static_cast<std::size_t>(i)]);
    }
    Eigen::VectorXd r2(V);
    if (undefined) undefined->clear();
    for (long v = 0; v < V; ++v) {
        const double mean = responses.row(v).mean();
        const double sstot = (responses.row(v).array() - mean).square().sum();
        const double ssres = (responses.row(v) - P.row(v)).squaredNorm();
        if (sstot == 0.0) {
            r2[v] = std::numeric_limits<double>::quiet_NaN();
            if (undefined) undefined->push_back(static_cast<int>(v));
        } else {
            r2[v] = 1.0 - ssres / sstot;
        }
    }
    return r2;
}

}  // namespace dive
