#include "dive/nn.hpp"

#include <cmath>

namespace dive {

namespace {

inline Eigen::ArrayXXd silu(const Eigen::ArrayXXd& x) {
    return x / (1.0 + (-x).exp());
}

inline Eigen::ArrayXXd silu_grad(const Eigen::ArrayXXd& x) {
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
    return s * (1.0 + x * (1.0 - s));
}

}  // namespace

Mlp Mlp::init(const MlpConfig& cfg, RandomStream& rng) {
    if (cfg.input < 1 || cfg.output < 1) throw ArgumentError("mlp: input/output dims must be positive");
    for (int h : cfg.hidden)
        if (h < 1) throw ArgumentError("mlp: hidden dims must be positive");

    Mlp net;
    net.cfg = cfg;
    std::vector<int> dims;
    dims.push_back(cfg.input);
    for (int h : cfg.hidden) dims.push_back(h);
    dims.push_back(cfg.output);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int in = dims[l];
        const int out = dims[l + 1];
        Eigen::MatrixXd W(out, in);
        const double sd = std::sqrt(2.0 / in);
        for (Eigen::Index c = 0; c < W.cols(); ++c)
            for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = sd * rng.normal();
        net.W.push_back(std::move(W));
        net.b.push_back(Eigen::VectorXd::Zero(out));
    }
    return net;
}

Mlp Mlp::zeros_like(const Mlp& other) {
    Mlp z;
    z.cfg = other.cfg;
    for (std::size_t l = 0; l < other.W.size(); ++l) {
        z.W.push_back(Eigen::MatrixXd::Zero(other.W[l].rows(), other.W[l].cols()));
        z.b.push_back(Eigen::VectorXd::Zero(other.b[l].size()));
    }
    return z;
}

long Mlp::parameter_count() const {
    long n = 0;
    for (std::size_t l = 0; l < W.size(); ++l) n += W[l].size() + b[l].size();
    return n;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& X) const {
    Cache cache;
    return forward(X, cache);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& X, Cache& cache) const {
    if (X.rows() != cfg.input) throw ArgumentError("mlp: input has wrong dimension");
    cache.inputs.clear();
    cache.pre.clear();
    Eigen::MatrixXd h = X;
    const int L = layer_count();
    for (int l = 0; l < L; ++l) {
        cache.inputs.push_back(h);
        Eigen::MatrixXd z = (W[static_cast<std::size_t>(l)] * h).colwise() + b[static_cast<std::size_t>(l)];
        if (l + 1 < L) {
            cache.pre.push_back(z);
            h = silu(z.array()).matrix();
        } else {
            h = std::move(z);
        }
    }
    return h;
}

void Mlp::backward(const Cache& cache, const Eigen::MatrixXd& dY, Mlp& grads) const {
    const int L = layer_count();
    if (static_cast<int>(cache.inputs.size()) != L) throw ArgumentError("mlp backward: stale cache");
    Eigen::MatrixXd delta = dY;
    for (int l = L - 1; l >= 0; --l) {
        const auto ul = static_cast<std::size_t>(l);
        if (l < L - 1) {
            delta = (delta.array() * silu_grad(cache.pre[ul].array())).matrix();
        }
        grads.W[ul].noalias() += delta * cache.inputs[ul].transpose();
        grads.b[ul] += delta.rowwise().sum();
        if (l > 0) delta = W[ul].transpose() * delta;
    }
}

void Mlp::save_to(Checkpoint& cp, const std::string& prefix) const {
    Eigen::VectorXd dims(2 + static_cast<Eigen::Index>(cfg.hidden.size()));
    dims[0] = cfg.input;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) dims[static_cast<Eigen::Index>(i) + 1] = cfg.hidden[i];
    dims[dims.size() - 1] = cfg.output;
    cp.add(prefix + "dims", TensorData::from_vector(dims));
    for (int l = 0; l < layer_count(); ++l) {
        const auto ul = static_cast<std::size_t>(l);
        cp.add(prefix + "W" + std::to_string(l), TensorData::from_matrix(W[ul]));
        cp.add(prefix + "b" + std::to_string(l), TensorData::from_vector(b[ul]));
    }
}

Mlp Mlp::load_from(const Checkpoint& cp, const std::string& prefix) {
    const Eigen::VectorXd dims = cp.vector(prefix + "dims");
    if (dims.size() < 2) throw FormatError("mlp: bad dims tensor");
    Mlp net;
    net.cfg.input = static_cast<int>(dims[0]);
    net.cfg.output = static_cast<int>(dims[dims.size() - 1]);
    for (Eigen::Index i = 1; i + 1 < dims.size(); ++i) net.cfg.hidden.push_back(static_cast<int>(dims[i]));
    for (Eigen::Index l = 0; l + 1 < dims.size(); ++l) {
        Eigen::MatrixXd W = cp.matrix(prefix + "W" + std::to_string(l));
        Eigen::VectorXd b = cp.vector(prefix + "b" + std::to_string(l));
        if (W.rows() != static_cast<Eigen::Index>(dims[l + 1]) ||
            W.cols() != static_cast<Eigen::Index>(dims[l]) || b.size() != W.rows()) {
            throw FormatError("mlp: layer " + std::to_string(l) + " shape mismatch");
        }
        net.W.push_back(std::move(W));
        net.b.push_back(std::move(b));
    }
    return net;
}

bool Mlp::same_shape(const Mlp& other) const {
    if (W.size() != other.W.size()) return false;
    for (std::size_t l = 0; l < W.size(); ++l) {
        if (W[l].rows() != other.W[l].rows() || W[l].cols() != other.W[l].cols()) return false;
        if (b[l].size() != other.b[l].size()) return false;
    }
    return true;
}

double Mlp::max_abs_difference(const Mlp& other) const {
    if (!same_shape(other)) throw ArgumentError("mlp: shape mismatch in comparison");
    double m = 0.0;
    for (std::size_t l = 0; l < W.size(); ++l) {
        m = std::max(m, (W[l] - other.W[l]).cwiseAbs().maxCoeff());
        if (b[l].size() > 0) m = std::max(m, (b[l] - other.b[l]).cwiseAbs().maxCoeff());
    }
    return m;
}

AdamState AdamState::zeros_like(const Mlp& params) {
    AdamState s;
    for (std::size_t l = 0; l < params.W.size(); ++l) {
        s.mW.push_back(Eigen::MatrixXd::Zero(params.W[l].rows(), params.W[l].cols()));
        s.vW.push_back(Eigen::MatrixXd::Zero(params.W[l].rows(), params.W[l].cols()));
        s.mb.push_back(Eigen::VectorXd::Zero(params.b[l].size()));
        s.vb.push_back(Eigen::VectorXd::Zero(params.b[l].size()));
    }
    return s;
}

void adam_step(Mlp& params, const Mlp& grads, AdamState& state, const AdamConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < params.W.size(); ++l) {
        state.mW[l] = cfg.beta1 * state.mW[l] + (1.0 - cfg.beta1) * grads.W[l];
        state.vW[l] = (cfg.beta2 * state.vW[l].array() +
                       (1.0 - cfg.beta2) * grads.W[l].array().square()).matrix();
        const Eigen::ArrayXXd mhat = state.mW[l].array() / bc1;
        const Eigen::ArrayXXd vhat = state.vW[l].array() / bc2;
        if (cfg.weight_decay > 0.0) params.W[l] *= 1.0 - cfg.lr * cfg.weight_decay;
        params.W[l].array() -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);

        state.mb[l] = cfg.beta1 * state.mb[l] + (1.0 - cfg.beta1) * grads.b[l];
        state.vb[l] = (cfg.beta2 * state.vb[l].array() +
                       (1.0 - cfg.beta2) * grads.b[l].array().square()).matrix();
        const Eigen::ArrayXd mbh = state.mb[l].array() / bc1;
        const Eigen::ArrayXd vbh = state.vb[l].array() / bc2;
        params.b[l].array() -= cfg.lr * mbh / (vbh.sqrt() + cfg.eps);
    }
}

}  // namespace dive
