#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "dive/autoencoder.hpp"
#include "dive/denoiser.hpp"
#include "dive/error.hpp"
#include "dive/guidance.hpp"
#include "dive/rng.hpp"
#include "dive/schedule.hpp"
#include "dive/world.hpp"

using namespace dive;

namespace {

NoiseSchedule hand_schedule(std::vector<double> abar_tail) {
    NoiseSchedule s;
    s.steps = static_cast<int>(abar_tail.size());
    s.kind = ScheduleKind::LinearBeta;
    s.alpha_bar.resize(s.steps + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= s.steps; ++t) s.alpha_bar[t] = abar_tail[static_cast<std::size_t>(t - 1)];
    s.sqrt_alpha_bar = s.alpha_bar.array().sqrt();
    s.sqrt_one_minus_alpha_bar = (1.0 - s.alpha_bar.array()).sqrt();
    return s;
}

Eigen::VectorXd scalar(double x) {
    Eigen::VectorXd v(1);
    v[0] = x;
    return v;
}

NoiseSchedule toy_schedule() {
    ScheduleParams p;
    p.beta_min = 1e-3;
    p.beta_max = 0.09;
    return build_schedule(100, ScheduleKind::LinearBeta, p);
}

// world fixture for objective / ascent cases that need real images
struct GuidanceFixture {
    WorldConfig wc;
    World world;
    FeatureExtractor fx;

    GuidanceFixture()
        : wc([] {
              WorldConfig c;
              c.images = 40;
              return c;
          }()),
          world(make_world(wc, 55)),
          fx(FeatureExtractorConfig{wc.shape, 2, 12, 0.35}) {}
};

const GuidanceFixture& fixture() {
    static GuidanceFixture f;
    return f;
}

EncoderHead random_head(const FeatureExtractor& fx, int voxels, std::uint64_t seed) {
    RandomStream rng(seed, "head");
    EncoderHead head;
    head.W = Eigen::MatrixXd::NullaryExpr(voxels, fx.dim(),
                                          [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    head.b = rng.normal_vector(voxels);
    head.extractor_id = fx.id();
    return head;
}

VoxelSet region_of(std::vector<int> idx) {
    VoxelSet s;
    s.indices = std::move(idx);
    s.provenance = "test";
    return s;
}

}  // namespace

TEST_CASE("blend_euler matches the hand value and its weight limits") {
    const auto s = hand_schedule({0.81, 0.25});
    const Eigen::VectorXd out = blend_euler(scalar(4.4641016), scalar(2.0), 2, s);
    CHECK(out[0] == doctest::Approx(2.3301270).epsilon(1e-7));

    // alpha_bar -> 0: weight 1 on x0_hat
    const auto s0 = hand_schedule({0.5, 0.0});
    CHECK(blend_euler(scalar(7.0), scalar(2.0), 2, s0) == scalar(2.0));

    // alpha_bar = 1: weight 0 on x0_hat
    const auto s1 = hand_schedule({1.0, 0.5});
    CHECK(blend_euler(scalar(7.0), scalar(2.0), 1, s1) == scalar(7.0));
}

TEST_CASE("region_objective is the mean predicted response over the set") {
    const auto& f = fixture();
    const EncoderHead head = random_head(f.fx, 5, 41);
    const Eigen::VectorXd& img = f.world.images[7];
    const Eigen::VectorXd u = normalize_embedding(f.fx.extract(img));

    const VoxelSet S = region_of({0, 2, 3});
    double expect = 0.0;
    for (int i : S.indices) expect += head.W.row(i).dot(u) + head.b[i];
    expect /= 3.0;
    CHECK(region_objective(head, f.fx, S, img) == doctest::Approx(expect).epsilon(1e-12));

    SUBCASE("singleton equals that voxel's prediction") {
        const Eigen::VectorXd pred = predict_responses(head, f.fx, img);
        for (int i = 0; i < 5; ++i) {
            CHECK(region_objective(head, f.fx, region_of({i}), img) ==
                  doctest::Approx(pred[i]).epsilon(1e-12));
        }
    }

    SUBCASE("objective equals the mean of its singleton partition") {
        double mean = 0.0;
        for (int i : S.indices) mean += region_objective(head, f.fx, region_of({i}), img);
        mean /= 3.0;
        CHECK(region_objective(head, f.fx, S, img) == doctest::Approx(mean).epsilon(1e-12));
    }

    SUBCASE("empty and out-of-range sets are rejected") {
        CHECK_THROWS_AS(region_objective(head, f.fx, region_of({}), img), EmptyInputError);
        CHECK_THROWS_AS(region_objective(head, f.fx, region_of({5}), img), ArgumentError);
    }
}

TEST_CASE("objective_gradient matches central finite differences") {
    const ImageShape shape{3, 8, 8};
    const FeatureExtractor fx(FeatureExtractorConfig{shape, 2, 12, 0.35});
    const Autoencoder ae = Autoencoder::identity(shape.size());
    const auto s = toy_schedule();

    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        RandomStream rng(100 + (std::uint64_t)trial, "fd");
        const EncoderHead head = random_head(fx, 3, 200 + (std::uint64_t)trial);
        const VoxelSet S = region_of(trial % 3 == 0 ? std::vector<int>{0}
                                     : trial % 3 == 1 ? std::vector<int>{0, 1}
                                                      : std::vector<int>{0, 1, 2});
        const int t = 1 + (int)rng.uniform_int(100);
        const Eigen::VectorXd x =
            (0.5 + 0.25 * rng.normal_vector(shape.size()).array()).matrix();
        const Eigen::VectorXd eps = rng.normal_vector(shape.size());

        const ObjectiveGradient og = objective_gradient(head, fx, ae, S, x, eps, t, s);

        auto phi = [&](const Eigen::VectorXd& xt) {
            return region_objective(head, fx, S,
                                    ae.decode(blend_euler(xt, predict_x0(xt, eps, t, s), t, s)));
        };
        CHECK(og.value == doctest::Approx(phi(x)).epsilon(1e-12));

        const double h = 1e-6;
        Eigen::VectorXd fd(x.size());
        Eigen::VectorXd xp = x;
        for (long i = 0; i < x.size(); ++i) {
            xp[i] = x[i] + h;
            const double up = phi(xp);
            xp[i] = x[i] - h;
            const double dn = phi(xp);
            xp[i] = x[i];
            fd[i] = (up - dn) / (2.0 * h);
        }
        const double scale = std::max(1.0, og.grad.cwiseAbs().maxCoeff());
        worst = std::max(worst, (og.grad - fd).cwiseAbs().maxCoeff() / scale);
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("objective_gradient invariances") {
    const ImageShape shape{3, 8, 8};
    const FeatureExtractor fx(FeatureExtractorConfig{shape, 2, 12, 0.35});
    const Autoencoder ae = Autoencoder::identity(shape.size());
    const auto s = toy_schedule();
    RandomStream rng(7, "inv");
    const Eigen::VectorXd x = (0.5 + 0.25 * rng.normal_vector(shape.size()).array()).matrix();
    const Eigen::VectorXd eps = rng.normal_vector(shape.size());
    const int t = 60;

    SUBCASE("zero W rows give an exactly zero gradient") {
        EncoderHead head = random_head(fx, 3, 8);
        head.W.row(0).setZero();
        head.W.row(2).setZero();
        const ObjectiveGradient og =
            objective_gradient(head, fx, ae, region_of({0, 2}), x, eps, t, s);
        CHECK(og.grad.isZero(0.0));
    }

    SUBCASE("gradient is bit-identical under a bias shift") {
        const EncoderHead head = random_head(fx, 3, 9);
        EncoderHead shifted = head;
        shifted.b.array() += 17.25;
        const VoxelSet S = region_of({0, 1, 2});
        const ObjectiveGradient a = objective_gradient(head, fx, ae, S, x, eps, t, s);
        const ObjectiveGradient b = objective_gradient(shifted, fx, ae, S, x, eps, t, s);
        CHECK(a.grad == b.grad);
        CHECK(b.value == doctest::Approx(a.value + 17.25).epsilon(1e-12));
    }

    SUBCASE("set gradient is the mean of singleton gradients") {
        const EncoderHead head = random_head(fx, 3, 10);
        const VoxelSet S = region_of({0, 1, 2});
        const ObjectiveGradient whole = objective_gradient(head, fx, ae, S, x, eps, t, s);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(x.size());
        double mean_value = 0.0;
        for (int i : S.indices) {
            const ObjectiveGradient one =
                objective_gradient(head, fx, ae, region_of({i}), x, eps, t, s);
            mean += one.grad;
            mean_value += one.value;
        }
        mean /= 3.0;
        mean_value /= 3.0;
        CHECK((whole.grad - mean).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK(whole.value == doctest::Approx(mean_value).epsilon(1e-12));
    }

    SUBCASE("shape mismatches are rejected") {
        const EncoderHead head = random_head(fx, 3, 11);
        const VoxelSet S = region_of({0});
        CHECK_THROWS_AS(
            objective_gradient(head, fx, ae, S, x.head(10), eps, t, s), ArgumentError);
        CHECK_THROWS_AS(
            objective_gradient(head, fx, ae, S, x, eps.head(10), t, s), ArgumentError);
    }
}

TEST_CASE("perturb_epsilon matches the hand value and null cases") {
    const auto s = hand_schedule({0.9, 0.75});
    const Eigen::VectorXd out = perturb_epsilon(scalar(0.5), scalar(0.2), 2, 10.0, s);
    CHECK(out[0] == doctest::Approx(-0.5).epsilon(1e-7));

    CHECK(perturb_epsilon(scalar(0.5), scalar(0.0), 2, 10.0, s) == scalar(0.5));
    CHECK(perturb_epsilon(scalar(0.5), scalar(0.2), 2, 0.0, s) == scalar(0.5));
}

TEST_CASE("perturbation is linear in gamma and anti-parallel to the gradient") {
    const auto s = hand_schedule({0.9, 0.6});
    RandomStream rng(19, "perturb");
    const Eigen::VectorXd eps = rng.normal_vector(64);
    const Eigen::VectorXd grad = rng.normal_vector(64);
    const int t = 2;

    const Eigen::VectorXd d1 = perturb_epsilon(eps, grad, t, 0.3, s) - eps;
    const Eigen::VectorXd d2 = perturb_epsilon(eps, grad, t, 0.6, s) - eps;
    CHECK((d2 - 2.0 * d1).cwiseAbs().maxCoeff() <= 1e-12);

    const double gamma = 1.7;
    const Eigen::VectorXd diff = perturb_epsilon(eps, grad, t, gamma, s) - eps;
    const double lhs = diff.dot(grad);
    const double rhs = -std::sqrt(1.0 - s.alpha_bar_at(t)) * gamma * grad.squaredNorm();
    CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(rhs)));
}

TEST_CASE("generate_guided with gamma 0 reproduces the unguided sampler bit for bit") {
    const ImageShape shape{3, 6, 6};
    const FeatureExtractor fx(FeatureExtractorConfig{shape, 2, 12, 0.35});
    const Autoencoder ae = Autoencoder::identity(shape.size());
    const auto s = toy_schedule();

    DenoiserConfig dc;
    dc.data_dim = (int)shape.size();
    dc.hidden = {32, 32};
    RandomStream rng(3, "corpus");
    const Eigen::MatrixXd corpus = Eigen::MatrixXd::NullaryExpr(
        shape.size(), 50, [&](Eigen::Index, Eigen::Index) { return 0.5 + 0.2 * rng.normal(); });
    DenoiserTrainConfig tc;
    tc.steps = 0;
    tc.seed = 21;
    const DenoiserModel model = train_denoiser(corpus, s, dc, tc);

    const EncoderHead head = random_head(fx, 2, 77);
    const VoxelSet S = region_of({0, 1});

    GuidanceConfig gc;
    gc.gamma = 0.0;
    gc.calibrate = false;
    gc.sample_steps = 20;
    gc.eta = 0.0;

    const GuidedBatch batch = generate_guided(model, s, ae, head, fx, S, gc, 3, 909);
    const Eigen::MatrixXd plain = sample_unguided(model, s, 3, 20, 0.0, 909);
    CHECK(batch.images == plain);
    CHECK(batch.gamma_used == 0.0);

    SUBCASE("thread count does not change the draw") {
        const GuidedBatch threaded = generate_guided(model, s, ae, head, fx, S, gc, 3, 909, 4);
        CHECK(threaded.images == batch.images);
    }

    SUBCASE("positive gamma steers away from the unguided draw") {
        GuidanceConfig on = gc;
        on.gamma = 0.5;
        const GuidedBatch steered = generate_guided(model, s, ae, head, fx, S, on, 3, 909);
        CHECK(steered.images != plain);
        CHECK(steered.gamma_used == 0.5);
    }
}

TEST_CASE("generate_guided bookkeeping: traces, snapshots, determinism") {
    const ImageShape shape{3, 6, 6};
    const FeatureExtractor fx(FeatureExtractorConfig{shape, 2, 12, 0.35});
    const Autoencoder ae = Autoencoder::identity(shape.size());
    const auto s = toy_schedule();

    DenoiserConfig dc;
    dc.data_dim = (int)shape.size();
    dc.hidden = {32, 32};
    RandomStream rng(4, "corpus");
    const Eigen::MatrixXd corpus = Eigen::MatrixXd::NullaryExpr(
        shape.size(), 50, [&](Eigen::Index, Eigen::Index) { return 0.5 + 0.2 * rng.normal(); });
    DenoiserTrainConfig tc;
    tc.steps = 0;
    tc.seed = 22;
    const DenoiserModel model = train_denoiser(corpus, s, dc, tc);

    const EncoderHead head = random_head(fx, 2, 78);
    const VoxelSet S = region_of({0, 1});

    GuidanceConfig gc;
    gc.gamma = 0.3;
    gc.calibrate = false;
    gc.sample_steps = 20;
    gc.trace_every = 4;
    gc.snapshot_chains = 1;

    const GuidedBatch batch = generate_guided(model, s, ae, head, fx, S, gc, 2, 501);
    REQUIRE(batch.traces.size() == 2);
    for (const GuidanceTrace& trace : batch.traces) {
        CHECK(trace.objective.size() == 20);
        CHECK(trace.grad_norm.size() == 20);
        CHECK(trace.timesteps.size() == 20);
        for (double v : trace.objective) CHECK(std::isfinite(v));
        for (double g : trace.grad_norm) CHECK(std::isfinite(g));
        for (std::size_t i = 1; i < trace.timesteps.size(); ++i) {
            CHECK(trace.timesteps[i] < trace.timesteps[i - 1]);
        }
    }
    CHECK(batch.traces[0].snapshot_steps == std::vector<int>{0, 4, 8, 12, 16});
    CHECK(batch.traces[0].snapshots.size() == 5);
    CHECK(batch.traces[1].snapshots.empty());
    for (const Eigen::VectorXd& snap : batch.traces[0].snapshots) {
        CHECK(snap.size() == (long)shape.size());
        CHECK(snap.allFinite());
    }
    CHECK(batch.final_objective.size() == 2);
    for (long c = 0; c < 2; ++c) {
        CHECK(batch.final_objective[c] ==
              doctest::Approx(region_objective(head, fx, S, batch.images.col(c))).epsilon(1e-12));
    }

    SUBCASE("bit-reproducible per seed, different across seeds") {
        const GuidedBatch again = generate_guided(model, s, ae, head, fx, S, gc, 2, 501);
        CHECK(again.images == batch.images);
        CHECK(again.traces[0].objective == batch.traces[0].objective);
        const GuidedBatch other = generate_guided(model, s, ae, head, fx, S, gc, 2, 502);
        CHECK(other.images != batch.images);
    }
}

TEST_CASE("generate_guided calibration pins the first-step perturbation ratio") {
    const ImageShape shape{3, 6, 6};
    const FeatureExtractor fx(FeatureExtractorConfig{shape, 2, 12, 0.35});
    const Autoencoder ae = Autoencoder::identity(shape.size());
    const auto s = toy_schedule();

    DenoiserConfig dc;
    dc.data_dim = (int)shape.size();
    dc.hidden = {32, 32};
    RandomStream rng(5, "corpus");
    const Eigen::MatrixXd corpus = Eigen::MatrixXd::NullaryExpr(
        shape.size(), 40, [&](Eigen::Index, Eigen::Index) { return 0.5 + 0.2 * rng.normal(); });
    DenoiserTrainConfig tc;
    tc.steps = 0;
    tc.seed = 23;
    const DenoiserModel model = train_denoiser(corpus, s, dc, tc);

    const EncoderHead head = random_head(fx, 2, 79);
    const VoxelSet S = region_of({0, 1});

    GuidanceConfig gc;
    gc.calibrate = true;
    gc.target_ratio = 0.2;
    gc.sample_steps = 20;
    const std::uint64_t seed = 611;
    const GuidedBatch batch = generate_guided(model, s, ae, head, fx, S, gc, 1, seed);

    // replay the pilot draw
    RandomStream pilot(seed, "gamma-pilot");
    const Eigen::VectorXd x = pilot.normal_vector(dc.data_dim);
    const int t0 = sampler_timesteps(s.steps, gc.sample_steps).front();
    const Eigen::VectorXd eps = model.predict_eps(x, t0);
    const ObjectiveGradient og = objective_gradient(head, fx, ae, S, x, eps, t0, s);
    const double expected =
        gc.target_ratio * eps.norm() / (std::sqrt(1.0 - s.alpha_bar_at(t0)) * og.grad.norm());
    CHECK(batch.gamma_used == expected);

    const Eigen::VectorXd prime = perturb_epsilon(eps, og.grad, t0, batch.gamma_used, s);
    CHECK((prime - eps).norm() / eps.norm() == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("generate_guided validates its component wiring") {
    const ImageShape shape{3, 6, 6};
    const FeatureExtractor fx(FeatureExtractorConfig{shape, 2, 12, 0.35});
    const Autoencoder ae = Autoencoder::identity(shape.size());
    const auto s = toy_schedule();

    DenoiserConfig dc;
    dc.data_dim = (int)shape.size();
    dc.hidden = {16};
    RandomStream rng(6, "corpus");
    const Eigen::MatrixXd corpus = Eigen::MatrixXd::NullaryExpr(
        shape.size(), 30, [&](Eigen::Index, Eigen::Index) { return 0.5 + 0.2 * rng.normal(); });
    DenoiserTrainConfig tc;
    tc.steps = 0;
    const DenoiserModel model = train_denoiser(corpus, s, dc, tc);

    const EncoderHead head = random_head(fx, 2, 80);
    const VoxelSet S = region_of({0, 1});
    GuidanceConfig gc;
    gc.calibrate = false;

    CHECK_THROWS_AS(generate_guided(model, s, ae, head, fx, S, gc, 0, 1), ArgumentError);
    CHECK_THROWS_AS(
        generate_guided(model, s, Autoencoder::identity(shape.size() - 1), head, fx, S, gc, 1, 1),
        ArgumentError);
    const auto other = build_schedule(80, ScheduleKind::LinearBeta);
    CHECK_THROWS_AS(generate_guided(model, other, ae, head, fx, S, gc, 1, 1), ArgumentError);

    EncoderHead wide = head;
    wide.W = Eigen::MatrixXd::Zero(2, fx.dim() + 1);
    CHECK_THROWS_AS(generate_guided(model, s, ae, wide, fx, S, gc, 1, 1), ArgumentError);

    EncoderHead mislabeled = head;
    mislabeled.extractor_id = "someone-else";
    CHECK_THROWS_AS(generate_guided(model, s, ae, mislabeled, fx, S, gc, 1, 1), DependencyError);

    CHECK_THROWS_AS(generate_guided(model, s, ae, head, fx, region_of({}), gc, 1, 1),
                    EmptyInputError);
}

TEST_CASE("ascent_diagnostic climbs to a planted reachable direction") {
    const auto& f = fixture();
    const Eigen::VectorXd ustar = normalize_embedding(f.fx.extract(f.world.images[5]));
    EncoderHead head;
    head.W = ustar.transpose();
    head.b = Eigen::VectorXd::Zero(1);
    head.extractor_id = f.fx.id();
    const VoxelSet S = region_of({0});

    const AscentResult res = ascent_diagnostic(head, f.fx, S, f.world.images[20], 500, 0.03);
    CHECK(res.alignment >= 0.99);
    CHECK(!res.objective_history.empty());
    CHECK(res.objective_history.size() <= 500);
    for (double o : res.objective_history) CHECK(std::isfinite(o));
    CHECK(res.objective_history.back() >= res.objective_history.front());

    SUBCASE("an already aligned start stays aligned") {
        const AscentResult fixed = ascent_diagnostic(head, f.fx, S, f.world.images[5], 50, 0.01);
        CHECK(fixed.alignment >= 1.0 - 1e-9);
    }

    SUBCASE("cancelling rows are a degenerate region") {
        EncoderHead cancel;
        cancel.W = Eigen::MatrixXd::Zero(2, f.fx.dim());
        cancel.W.row(0) = ustar.transpose();
        cancel.W.row(1) = -ustar.transpose();
        cancel.b = Eigen::VectorXd::Zero(2);
        CHECK_THROWS_AS(ascent_diagnostic(cancel, f.fx, region_of({0, 1}), f.world.images[3], 10, 0.01),
                        DegenerateEmbeddingError);
    }

    SUBCASE("argument validation") {
        CHECK_THROWS_AS(ascent_diagnostic(head, f.fx, S, f.world.images[1], 0, 0.01), ArgumentError);
        CHECK_THROWS_AS(ascent_diagnostic(head, f.fx, S, f.world.images[1], 10, 0.0), ArgumentError);
    }
}
