#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dive/error.hpp"
#include "dive/rng.hpp"

namespace dive {

enum class ScheduleKind { LinearBeta, Cosine };

ScheduleKind schedule_kind_from_string(const std::string& name);
std::string to_string(ScheduleKind kind);

struct ScheduleParams {
    double beta_min = 1e-4;
    double beta_max = 2e-2;
    double cosine_s = 8e-3;   // cosine offset
    double beta_clip = 0.999; // per-step beta ceiling for the cosine schedule
};

// Cumulative signal schedule. alpha_bar[t] is the product of (1 - beta_s) for
// s <= t, with alpha_bar[0] = 1 (t = 0 is the clean image). Timestep indices
// run 0..steps inclusive.
struct NoiseSchedule {
    int steps = 0;
    ScheduleKind kind = ScheduleKind::LinearBeta;
    Eigen::VectorXd alpha_bar;                // size steps + 1
    Eigen::VectorXd sqrt_alpha_bar;           // cached
    Eigen::VectorXd sqrt_one_minus_alpha_bar; // cached

    double alpha_bar_at(int t) const {
        if (t < 0 || t > steps) {
            throw ArgumentError("schedule: timestep " + std::to_string(t) +
                                " outside [0, " + std::to_string(steps) + "]");
        }
        return alpha_bar[t];
    }
};

// Builds the schedule and enforces the hard invariants: every alpha_bar[t] in
// (0, 1] and strictly decreasing for t >= 1. Violations name the offending
// index. Endpoint bounds (near 1 at t=1, near 0 at t=steps) are a property of
// production-scale schedules and are checked by check_endpoints instead, so
// tiny hand schedules stay constructible.
NoiseSchedule build_schedule(int steps, ScheduleKind kind, const ScheduleParams& params = {});

// alpha_bar[1] >= hi and alpha_bar[steps] <= lo, else ScheduleError.
void check_endpoints(const NoiseSchedule& s, double hi = 0.99, double lo = 0.01);

// Descending timestep knots from steps down to 0 for a sampler taking
// `count` denoising moves: result has count + 1 entries, result[0] = steps,
// result[count] = 0, interior knots rounded from the uniform grid.
std::vector<int> sampler_timesteps(int steps, int count);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename XD, typename ED>
typename XD::PlainObject forward_diffuse(const Eigen::MatrixBase<XD>& x0,
                                         const Eigen::MatrixBase<ED>& eps, int t,
                                         const NoiseSchedule& s) {
    if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
        throw ArgumentError("forward_diffuse: x0 and eps shapes differ");
    }
    const double a = s.alpha_bar_at(t);
    return std::sqrt(a) * x0 + std::sqrt(1.0 - a) * eps;
}

// x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
template <typename XD, typename ED>
typename XD::PlainObject predict_x0(const Eigen::MatrixBase<XD>& x_t,
                                    const Eigen::MatrixBase<ED>& eps, int t,
                                    const NoiseSchedule& s) {
    if (x_t.rows() != eps.rows() || x_t.cols() != eps.cols()) {
        throw ArgumentError("predict_x0: x_t and eps shapes differ");
    }
    const double a = s.alpha_bar_at(t);
    const double sa = std::sqrt(a);
    if (!(sa > 1e-6)) {
        throw ScheduleError("predict_x0: sqrt(alpha_bar) vanishes at t = " + std::to_string(t));
    }
    return (x_t - std::sqrt(1.0 - a) * eps) / sa;
}

// DDIM-family noise scale for a t -> t_next move. eta = 0 is deterministic.
inline double ddim_sigma(int t, int t_next, const NoiseSchedule& s, double eta) {
    if (eta < 0.0) throw ArgumentError("ddim_sigma: eta must be non-negative");
    if (eta == 0.0) return 0.0;
    const double a = s.alpha_bar_at(t);
    const double an = s.alpha_bar_at(t_next);
    return eta * std::sqrt((1.0 - an) / (1.0 - a)) * std::sqrt(1.0 - a / an);
}

// One generalized reverse move t -> t_next (t_next < t):
//   x_next = sqrt(abar_next) x0_hat + sqrt(1 - abar_next - sigma^2) eps + sigma z
// Draws z from rng only when sigma > 0.
template <typename XD, typename ED>
typename XD::PlainObject denoise_step(const Eigen::MatrixBase<XD>& x_t,
                                      const Eigen::MatrixBase<ED>& eps, int t, int t_next,
                                      const NoiseSchedule& s, double eta, RandomStream& rng) {
    if (t_next >= t) throw ArgumentError("denoise_step: t_next must be below t");
    const double an = s.alpha_bar_at(t_next);
    const double sigma = ddim_sigma(t, t_next, s, eta);
    const double dir_sq = 1.0 - an - sigma * sigma;
    if (dir_sq < -1e-12) {
        throw ScheduleError("denoise_step: sigma exceeds available noise at t = " + std::to_string(t));
    }
    typename XD::PlainObject x0_hat = predict_x0(x_t, eps, t, s);
    typename XD::PlainObject out =
        std::sqrt(an) * x0_hat + std::sqrt(std::max(0.0, dir_sq)) * eps;
    if (sigma > 0.0) {
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            for (Eigen::Index i = 0; i < out.rows(); ++i) {
                out(i, j) += sigma * rng.normal();
            }
        }
    }
    return out;
}

}  // namespace dive
