#include "dive/schedule.hpp"

namespace dive {

ScheduleKind schedule_kind_from_string(const std::string& name) {
    if (name == "linear-beta") return ScheduleKind::LinearBeta;
    if (name == "cosine") return ScheduleKind::Cosine;
    throw ArgumentError("unknown schedule kind: " + name);
}

std::string to_string(ScheduleKind kind) {
    return kind == ScheduleKind::LinearBeta ? "linear-beta" : "cosine";
}

NoiseSchedule build_schedule(int steps, ScheduleKind kind, const ScheduleParams& params) {
    if (steps < 1) throw ArgumentError("build_schedule: steps must be at least 1");

    Eigen::VectorXd beta(steps);
    if (kind == ScheduleKind::LinearBeta) {
        if (!(params.beta_min > 0.0) || !(params.beta_max < 1.0) ||
            params.beta_min > params.beta_max) {
            throw ArgumentError("build_schedule: beta range must satisfy 0 < min <= max < 1");
        }
        for (int i = 0; i < steps; ++i) {
            const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
            beta[i] = params.beta_min + frac * (params.beta_max - params.beta_min);
        }
    } else {
        // betas derived from the squared-cosine signal curve, clipped per step
        const double s0 = params.cosine_s;
        auto f = [s0](double u) {
            const double v = std::cos((u + s0) / (1.0 + s0) * M_PI / 2.0);
            return v * v;
        };
        const double f0 = f(0.0);
        double prev = 1.0;
        for (int i = 0; i < steps; ++i) {
            const double cur = f(static_cast<double>(i + 1) / steps) / f0;
            double b = 1.0 - cur / prev;
            b = std::min(b, params.beta_clip);
            beta[i] = b;
            prev *= 1.0 - b;
        }
    }

    NoiseSchedule s;
    s.steps = steps;
    s.kind = kind;
    s.alpha_bar.resize(steps + 1);
    s.alpha_bar[0] = 1.0;
    double prod = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double b = beta[t - 1];
        if (!(b > 0.0) || !(b < 1.0)) {
            throw ScheduleError("build_schedule: beta out of (0, 1) at t = " + std::to_string(t));
        }
        prod *= 1.0 - b;
        s.alpha_bar[t] = prod;
        if (!(prod > 0.0) || s.alpha_bar[t] >= s.alpha_bar[t - 1]) {
            throw ScheduleError("build_schedule: alpha_bar not strictly decreasing inside (0, 1] at t = " +
                                std::to_string(t));
        }
    }
    s.sqrt_alpha_bar = s.alpha_bar.array().sqrt();
    s.sqrt_one_minus_alpha_bar = (1.0 - s.alpha_bar.array()).sqrt();
    return s;
}

void check_endpoints(const NoiseSchedule& s, double hi, double lo) {
    if (s.steps < 1) throw ScheduleError("check_endpoints: empty schedule");
    if (s.alpha_bar[1] < hi) {
        throw ScheduleError("schedule endpoint: alpha_bar[1] = " + std::to_string(s.alpha_bar[1]) +
                            " below " + std::to_string(hi));
    }
    if (s.alpha_bar[s.steps] > lo) {
        throw ScheduleError("schedule endpoint: alpha_bar[" + std::to_string(s.steps) +
                            "] = " + std::to_string(s.alpha_bar[s.steps]) + " above " +
                            std::to_string(lo));
    }
}

std::vector<int> sampler_timesteps(int steps, int count) {
    if (count < 1) throw ArgumentError("sampler_timesteps: count must be at least 1");
    if (count > steps) throw ArgumentError("sampler_timesteps: count exceeds schedule steps");
    std::vector<int> ts(static_cast<std::size_t>(count) + 1);
    for (int i = 0; i <= count; ++i) {
        const double u = static_cast<double>(steps) * (1.0 - static_cast<double>(i) / count);
        ts[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(u));
    }
    ts.front() = steps;
    ts.back() = 0;
    // rounding on coarse grids can collide; enforce strict descent
    for (int i = 1; i <= count; ++i) {
        auto& cur = ts[static_cast<std::size_t>(i)];
        const int prev = ts[static_cast<std::size_t>(i - 1)];
        if (cur >= prev) cur = prev - 1;
        if (cur < 0) throw ArgumentError("sampler_timesteps: grid too fine for schedule");
    }
    return ts;
}

}  // namespace dive
