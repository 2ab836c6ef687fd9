#include "dive/denoiser.hpp"

#include <cmath>

#include "dive/parallel.hpp"

namespace dive {

Eigen::VectorXd DenoiserModel::time_embedding(int t) const {
    const int F = cfg.time_embed_dim / 2;
    Eigen::VectorXd e(2 * F);
    const double tau = schedule_steps > 0 ? static_cast<double>(t) / schedule_steps : 0.0;
    for (int j = 0; j < F; ++j) {
        const double w = M_PI * std::pow(2.0, j) * tau;
        e[2 * j] = std::sin(w);
        e[2 * j + 1] = std::cos(w);
    }
    return e;
}

Eigen::VectorXd DenoiserModel::predict_eps(const Eigen::VectorXd& x_t, int t) const {
    if (x_t.size() != cfg.data_dim) throw ArgumentError("denoiser: state has wrong dimension");
    Eigen::VectorXd in(cfg.data_dim + cfg.time_embed_dim);
    in.head(cfg.data_dim) = x_t;
    in.tail(cfg.time_embed_dim) = time_embedding(t);
    return net.forward(in);
}

Eigen::MatrixXd DenoiserModel::predict_eps_batch(const Eigen::MatrixXd& X,
                                                 const std::vector<int>& ts) const {
    if (X.rows() != cfg.data_dim) throw ArgumentError("denoiser: batch has wrong dimension");
    if (static_cast<Eigen::Index>(ts.size()) != X.cols()) {
        throw ArgumentError("denoiser: timestep list does not match batch");
    }
    Eigen::MatrixXd in(cfg.data_dim + cfg.time_embed_dim, X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        in.col(j).head(cfg.data_dim) = X.col(j);
        in.col(j).tail(cfg.time_embed_dim) = time_embedding(ts[static_cast<std::size_t>(j)]);
    }
    return net.forward(in);
}

void DenoiserModel::save_to(Checkpoint& cp, const std::string& prefix) const {
    Eigen::VectorXd meta(3);
    meta << static_cast<double>(cfg.data_dim), cfg.time_embed_dim, schedule_steps;
    cp.add(prefix + "meta", TensorData::from_vector(meta));
    net.save_to(cp, prefix + "net.");
}

DenoiserModel DenoiserModel::load_from(const Checkpoint& cp, const std::string& prefix) {
    const Eigen::VectorXd meta = cp.vector(prefix + "meta");
    if (meta.size() != 3) throw FormatError("denoiser: bad meta tensor");
    DenoiserModel m;
    m.cfg.data_dim = static_cast<long>(meta[0]);
    m.cfg.time_embed_dim = static_cast<int>(meta[1]);
    m.schedule_steps = static_cast<int>(meta[2]);
    m.net = Mlp::load_from(cp, prefix + "net.");
    m.cfg.hidden = m.net.cfg.hidden;
    if (m.net.cfg.input != m.cfg.data_dim + m.cfg.time_embed_dim ||
        m.net.cfg.output != m.cfg.data_dim) {
        throw FormatError("denoiser: net dimensions inconsistent with meta");
    }
    return m;
}

DenoiserModel train_denoiser(const Eigen::MatrixXd& corpus, const NoiseSchedule& schedule,
                             const DenoiserConfig& cfg, const DenoiserTrainConfig& train,
                             DenoiserTrainResult* result) {
    if (corpus.cols() < 1) throw EmptyInputError("train_denoiser: corpus is empty");
    if (corpus.rows() != cfg.data_dim) throw ArgumentError("train_denoiser: corpus dim mismatch");
    if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0) {
        throw ArgumentError("train_denoiser: time_embed_dim must be even and >= 2");
    }
    if (train.batch < 1) throw ArgumentError("train_denoiser: batch must be positive");

    MlpConfig mc;
    mc.input = static_cast<int>(cfg.data_dim) + cfg.time_embed_dim;
    mc.output = static_cast<int>(cfg.data_dim);
    mc.hidden = cfg.hidden;

    DenoiserModel model;
    model.cfg = cfg;
    model.schedule_steps = schedule.steps;
    RandomStream init_rng(train.seed, "denoiser-init");
    model.net = Mlp::init(mc, init_rng);

    if (result) result->loss_history.clear();
    if (train.steps == 0) return model;

    AdamState opt = AdamState::zeros_like(model.net);
    const long D = cfg.data_dim;
    const int B = train.batch;

    for (int step = 0; step < train.steps; ++step) {
        RandomStream rng(train.seed, "denoiser-step", static_cast<std::uint64_t>(step));
        Eigen::MatrixXd X0(D, B), Eps(D, B), Xt(D, B);
        std::vector<int> ts(static_cast<std::size_t>(B));
        for (int j = 0; j < B; ++j) {
            const auto idx = rng.uniform_int(corpus.cols());
            X0.col(j) = corpus.col(idx);
            ts[static_cast<std::size_t>(j)] = 1 + static_cast<int>(rng.uniform_int(schedule.steps));
            rng.fill_normal(Eps.col(j));
            Xt.col(j) = forward_diffuse(X0.col(j), Eps.col(j), ts[static_cast<std::size_t>(j)], schedule);
        }

        Eigen::MatrixXd in(mc.input, B);
        for (int j = 0; j < B; ++j) {
            in.col(j).head(D) = Xt.col(j);
            in.col(j).tail(cfg.time_embed_dim) = model.time_embedding(ts[static_cast<std::size_t>(j)]);
        }
        Mlp::Cache cache;
        const Eigen::MatrixXd pred = model.net.forward(in, cache);
        const Eigen::MatrixXd resid = pred - Eps;
        const double loss = resid.squaredNorm() / static_cast<double>(D * B);
        if (!std::isfinite(loss)) {
            throw TrainingError("train_denoiser: non-finite loss at step " + std::to_string(step));
        }
        if (result) result->loss_history.push_back(loss);

        Mlp grads = Mlp::zeros_like(model.net);
        model.net.backward(cache, (2.0 / static_cast<double>(D * B)) * resid, grads);

        if (train.grad_clip > 0.0) {
            double sq = 0.0;
            for (std::size_t l = 0; l < grads.W.size(); ++l) {
                sq += grads.W[l].squaredNorm() + grads.b[l].squaredNorm();
            }
            const double gn = std::sqrt(sq);
            if (gn > train.grad_clip) {
                const double scale = train.grad_clip / gn;
                for (std::size_t l = 0; l < grads.W.size(); ++l) {
                    grads.W[l] *= scale;
                    grads.b[l] *= scale;
                }
            }
        }

        AdamConfig ac;
        const double frac = train.steps == 1 ? 0.0 : static_cast<double>(step) / (train.steps - 1);
        ac.lr = train.lr_final + 0.5 * (train.lr - train.lr_final) * (1.0 + std::cos(M_PI * frac));
        adam_step(model.net, grads, opt, ac);
    }
    return model;
}

Eigen::MatrixXd sample_unguided(const DenoiserModel& model, const NoiseSchedule& schedule,
                                int n, int sample_steps, double eta, std::uint64_t seed,
                                int threads) {
    if (n < 1) throw ArgumentError("sample_unguided: n must be positive");
    if (model.schedule_steps != schedule.steps) {
        throw ArgumentError("sample_unguided: schedule has " + std::to_string(schedule.steps) +
                            " steps but model was trained against " +
                            std::to_string(model.schedule_steps));
    }
    const std::vector<int> ts = sampler_timesteps(schedule.steps, sample_steps);
    Eigen::MatrixXd out(model.cfg.data_dim, n);
    parallel_for(n, threads, [&](long c) {
        RandomStream rng(seed, "chain", static_cast<std::uint64_t>(c));
        Eigen::VectorXd x = rng.normal_vector(model.cfg.data_dim);
        for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
            const int t = ts[i];
            const int t_next = ts[i + 1];
            const Eigen::VectorXd eps = model.predict_eps(x, t);
            if (!eps.allFinite()) {
                throw GenerationError("sample_unguided: non-finite eps at t = " + std::to_string(t) +
                                      " in chain " + std::to_string(c));
            }
            x = denoise_step(x, eps, t, t_next, schedule, eta, rng);
        }
        out.col(c) = x;
    });
    return out;
}

}  // namespace dive
