#include "dive/guidance.hpp"

#include <cmath>

#include "dive/parallel.hpp"

namespace dive {

namespace {

Eigen::VectorXd region_row_mean(const EncoderHead& head, const VoxelSet& region) {
    region.validate_against(head.W.rows());
    Eigen::VectorXd w = Eigen::VectorXd::Zero(head.W.cols());
    for (int i : region.indices) w += head.W.row(i).transpose();
    return w / static_cast<double>(region.indices.size());
}

double region_bias_mean(const EncoderHead& head, const VoxelSet& region) {
    double b = 0.0;
    for (int i : region.indices) b += head.b[i];
    return b / static_cast<double>(region.indices.size());
}

}  // namespace

double region_objective(const EncoderHead& head, const FeatureExtractor& fx, const VoxelSet& region,
                        const Eigen::VectorXd& image) {
    const Eigen::VectorXd u = normalize_embedding(fx.extract(image));
    return region_row_mean(head, region).dot(u) + region_bias_mean(head, region);
}

ObjectiveGradient objective_gradient(const EncoderHead& head, const FeatureExtractor& fx,
                                     const Autoencoder& ae, const VoxelSet& region,
                                     const Eigen::VectorXd& x_t, const Eigen::VectorXd& eps_pred,
                                     int t, const NoiseSchedule& s) {
    if (x_t.size() != ae.latent_dim()) throw ArgumentError("objective_gradient: state dim mismatch");
    if (eps_pred.size() != x_t.size()) throw ArgumentError("objective_gradient: eps dim mismatch");

    // forward: x0_hat -> blended state -> image -> features -> unit embedding
    const Eigen::VectorXd x0_hat = predict_x0(x_t, eps_pred, t, s);
    const Eigen::VectorXd x_blend = blend_euler(x_t, x0_hat, t, s);
    const Eigen::VectorXd image = ae.decode(x_blend);
    const Eigen::VectorXd f = fx.extract(image);
    const double fnorm = f.norm();
    if (!(fnorm >= 1e-8)) {
        throw DegenerateEmbeddingError("objective_gradient: embedding norm " +
                                       std::to_string(fnorm) + " below floor at t = " +
                                       std::to_string(t));
    }
    const Eigen::VectorXd u = f / fnorm;

    const Eigen::VectorXd wbar = region_row_mean(head, region);
    ObjectiveGradient out;
    out.value = wbar.dot(u) + region_bias_mean(head, region);

    // reverse: readout -> normalization -> features -> decoder -> blend/predict_x0
    const Eigen::VectorXd df = (wbar - wbar.dot(u) * u) / fnorm;
    const Eigen::VectorXd dimage = fx.extract_vjp(image, df);
    const Eigen::VectorXd dblend = ae.decode_vjp(dimage);
    // x_blend depends on x_t directly and through x0_hat; eps is held constant,
    // so d x_blend / d x_t is the scalar  sqrt(1-abar)/sqrt(abar) + 1 - sqrt(1-abar)
    const double a = s.alpha_bar_at(t);
    const double w = std::sqrt(1.0 - a);
    const double chain = w / std::sqrt(a) + (1.0 - w);
    out.grad = chain * dblend;
    return out;
}

GuidedBatch generate_guided(const DenoiserModel& model, const NoiseSchedule& schedule,
                            const Autoencoder& ae, const EncoderHead& head,
                            const FeatureExtractor& fx, const VoxelSet& region,
                            const GuidanceConfig& cfg, int n, std::uint64_t seed, int threads) {
    if (n < 1) throw ArgumentError("generate_guided: n must be positive");
    if (model.cfg.data_dim != ae.latent_dim()) {
        throw ArgumentError("generate_guided: model dim does not match autoencoder latent dim");
    }
    if (model.schedule_steps != schedule.steps) {
        throw ArgumentError("generate_guided: schedule does not match the model");
    }
    if (head.W.cols() != fx.dim()) {
        throw ArgumentError("generate_guided: head feature dim does not match extractor");
    }
    if (!head.extractor_id.empty() && head.extractor_id != fx.id()) {
        throw DependencyError("generate_guided: head was fit against extractor '" +
                              head.extractor_id + "' but got '" + fx.id() + "'");
    }
    region.validate_against(head.W.rows());

    const std::vector<int> ts = sampler_timesteps(schedule.steps, cfg.sample_steps);

    double gamma = cfg.gamma;
    if (cfg.calibrate) {
        // pilot draw at the first timestep; the perturbation is linear in gamma,
        // so the target first-step ratio pins it exactly
        RandomStream pilot(seed, "gamma-pilot");
        const Eigen::VectorXd x = pilot.normal_vector(model.cfg.data_dim);
        const int t0 = ts.front();
        const Eigen::VectorXd eps = model.predict_eps(x, t0);
        const ObjectiveGradient og = objective_gradient(head, fx, ae, region, x, eps, t0, schedule);
        const double denom = std::sqrt(1.0 - schedule.alpha_bar_at(t0)) * og.grad.norm();
        const double eps_norm = eps.norm();
        if (denom > 1e-12 && eps_norm > 0.0) {
            gamma = cfg.target_ratio * eps_norm / denom;
        } else {
            gamma = 0.0;  // flat objective; nothing to steer toward
        }
    }

    GuidedBatch batch;
    batch.images.resize(ae.data_dim(), n);
    batch.final_objective.resize(n);
    batch.traces.resize(static_cast<std::size_t>(n));
    batch.gamma_used = gamma;

    parallel_for(n, threads, [&](long c) {
        RandomStream rng(seed, "chain", static_cast<std::uint64_t>(c));
        Eigen::VectorXd x = rng.normal_vector(model.cfg.data_dim);
        GuidanceTrace& trace = batch.traces[static_cast<std::size_t>(c)];
        const bool keep_snapshots = cfg.trace_every > 0 && c < cfg.snapshot_chains;
        for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
            const int t = ts[i];
            const int t_next = ts[i + 1];
            const Eigen::VectorXd eps = model.predict_eps(x, t);
            if (!eps.allFinite()) {
                throw GenerationError("generate_guided: non-finite eps at t = " + std::to_string(t) +
                                      " in chain " + std::to_string(c));
            }
            ObjectiveGradient og;
            try {
                og = objective_gradient(head, fx, ae, region, x, eps, t, schedule);
            } catch (const DegenerateEmbeddingError& e) {
                throw GenerationError("generate_guided: " + std::string(e.what()) + " in chain " +
                                      std::to_string(c));
            }
            trace.timesteps.push_back(t);
            trace.objective.push_back(og.value);
            trace.grad_norm.push_back(og.grad.norm());
            if (keep_snapshots && i % static_cast<std::size_t>(cfg.trace_every) == 0) {
                trace.snapshot_steps.push_back(static_cast<int>(i));
                trace.snapshots.push_back(ae.decode(predict_x0(x, eps, t, schedule)));
            }
            const Eigen::VectorXd eps_prime = perturb_epsilon(eps, og.grad, t, gamma, schedule);
            x = denoise_step(x, eps_prime, t, t_next, schedule, cfg.eta, rng);
            if (!x.allFinite()) {
                throw GenerationError("generate_guided: non-finite state after t = " +
                                      std::to_string(t) + " in chain " + std::to_string(c));
            }
        }
        const Eigen::VectorXd image = ae.decode(x);
        batch.images.col(c) = image;
        batch.final_objective[c] = region_objective(head, fx, region, image);
    });
    return batch;
}

AscentResult ascent_diagnostic(const EncoderHead& head, const FeatureExtractor& fx,
                               const VoxelSet& region, const Eigen::VectorXd& init_image,
                               int steps, double step_size) {
    if (steps < 1) throw ArgumentError("ascent_diagnostic: steps must be positive");
    if (!(step_size > 0.0)) throw ArgumentError("ascent_diagnostic: step size must be positive");
    region.validate_against(head.W.rows());

    Eigen::VectorXd wsum = Eigen::VectorXd::Zero(head.W.cols());
    for (int i : region.indices) wsum += head.W.row(i).transpose();
    const double wn = wsum.norm();
    if (!(wn >= 1e-8)) {
        throw DegenerateEmbeddingError("ascent_diagnostic: region readout rows sum to zero");
    }
    const Eigen::VectorXd target = wsum / wn;
    const Eigen::VectorXd wbar = wsum / static_cast<double>(region.indices.size());
    const double bbar = region_bias_mean(head, region);

    AscentResult res;
    res.image = init_image;
    for (int it = 0; it < steps; ++it) {
        const Eigen::VectorXd f = fx.extract(res.image);
        const double fnorm = f.norm();
        if (!(fnorm >= 1e-8)) {
            throw DegenerateEmbeddingError("ascent_diagnostic: embedding collapsed at step " +
                                           std::to_string(it));
        }
        const Eigen::VectorXd u = f / fnorm;
        res.objective_history.push_back(wbar.dot(u) + bbar);
        const Eigen::VectorXd df = (wbar - wbar.dot(u) * u) / fnorm;
        const Eigen::VectorXd g = fx.extract_vjp(res.image, df);
        const double gn = g.norm();
        if (gn < 1e-14) break;  // at a stationary point
        res.image += step_size * g / gn;
    }
    const Eigen::VectorXd uf = normalize_embedding(fx.extract(res.image));
    res.alignment = uf.dot(target);
    return res;
}

}  // namespace dive
