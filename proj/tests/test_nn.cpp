#include <doctest.h>

#include <cmath>

#include "dive/nn.hpp"

using namespace dive;

namespace {

Mlp tiny_net(std::uint64_t seed) {
    MlpConfig cfg;
    cfg.input = 4;
    cfg.output = 3;
    cfg.hidden = {6, 5};
    RandomStream rng(seed, "nn-init");
    return Mlp::init(cfg, rng);
}

}  // namespace

TEST_CASE("init builds the declared layer shapes") {
    const Mlp net = tiny_net(1);
    REQUIRE(net.layer_count() == 3);
    CHECK(net.W[0].rows() == 6);
    CHECK(net.W[0].cols() == 4);
    CHECK(net.W[1].rows() == 5);
    CHECK(net.W[1].cols() == 6);
    CHECK(net.W[2].rows() == 3);
    CHECK(net.W[2].cols() == 5);
    CHECK(net.b[0].size() == 6);
    CHECK(net.b[2].size() == 3);
    CHECK(net.parameter_count() == 6 * 4 + 6 + 5 * 6 + 5 + 3 * 5 + 3);

    RandomStream r1(1, "nn-init"), r2(1, "nn-init");
    CHECK(Mlp::init(net.cfg, r1).max_abs_difference(Mlp::init(net.cfg, r2)) == 0.0);
    CHECK(net.same_shape(Mlp::zeros_like(net)));
}

TEST_CASE("forward handles batches column-wise") {
    const Mlp net = tiny_net(2);
    RandomStream rng(3, "nn-batch");
    Eigen::MatrixXd X(4, 7);
    for (int c = 0; c < 7; ++c) X.col(c) = rng.normal_vector(4);
    const Eigen::MatrixXd Y = net.forward(X);
    REQUIRE(Y.rows() == 3);
    REQUIRE(Y.cols() == 7);
    for (int c = 0; c < 7; ++c) {
        const Eigen::VectorXd yc = net.forward(X.col(c));
        CHECK((Y.col(c) - yc).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("a one-layer linear net is exactly affine") {
    MlpConfig cfg;
    cfg.input = 3;
    cfg.output = 2;
    RandomStream rng(4, "nn-lin");
    Mlp net = Mlp::init(cfg, rng);
    Eigen::VectorXd x = rng.normal_vector(3);
    const Eigen::VectorXd y = net.forward(x);
    CHECK((y - (net.W[0] * x + net.b[0])).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("backward matches finite differences on every parameter") {
    const Mlp net = tiny_net(5);
    RandomStream rng(6, "nn-fd");
    Eigen::MatrixXd X(4, 3);
    for (int c = 0; c < 3; ++c) X.col(c) = rng.normal_vector(4);
    Eigen::MatrixXd dY(3, 3);
    for (int c = 0; c < 3; ++c) dY.col(c) = rng.normal_vector(3);

    Mlp::Cache cache;
    net.forward(X, cache);
    Mlp grads = Mlp::zeros_like(net);
    net.backward(cache, dY, grads);

    auto loss = [&](const Mlp& p) { return (p.forward(X).array() * dY.array()).sum(); };

    const double h = 1e-6;
    double worst = 0.0;
    for (int l = 0; l < net.layer_count(); ++l) {
        for (Eigen::Index r = 0; r < net.W[static_cast<std::size_t>(l)].rows(); ++r) {
            for (Eigen::Index c = 0; c < net.W[static_cast<std::size_t>(l)].cols(); ++c) {
                Mlp p = net, m = net;
                p.W[static_cast<std::size_t>(l)](r, c) += h;
                m.W[static_cast<std::size_t>(l)](r, c) -= h;
                const double fd = (loss(p) - loss(m)) / (2.0 * h);
                worst = std::max(worst,
                                 std::abs(fd - grads.W[static_cast<std::size_t>(l)](r, c)));
            }
        }
        for (Eigen::Index i = 0; i < net.b[static_cast<std::size_t>(l)].size(); ++i) {
            Mlp p = net, m = net;
            p.b[static_cast<std::size_t>(l)][i] += h;
            m.b[static_cast<std::size_t>(l)][i] -= h;
            const double fd = (loss(p) - loss(m)) / (2.0 * h);
            worst = std::max(worst, std::abs(fd - grads.b[static_cast<std::size_t>(l)][i]));
        }
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("backward accumulates into existing gradients") {
    const Mlp net = tiny_net(7);
    RandomStream rng(8, "nn-acc");
    Eigen::MatrixXd X(4, 2);
    X.col(0) = rng.normal_vector(4);
    X.col(1) = rng.normal_vector(4);
    Eigen::MatrixXd dY = Eigen::MatrixXd::Ones(3, 2);

    Mlp::Cache cache;
    net.forward(X, cache);
    Mlp once = Mlp::zeros_like(net);
    net.backward(cache, dY, once);
    Mlp twice = Mlp::zeros_like(net);
    net.backward(cache, dY, twice);
    net.backward(cache, dY, twice);
    for (int l = 0; l < net.layer_count(); ++l) {
        const auto lu = static_cast<std::size_t>(l);
        CHECK((twice.W[lu] - 2.0 * once.W[lu]).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((twice.b[lu] - 2.0 * once.b[lu]).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("first adam step follows the bias-corrected update") {
    MlpConfig cfg;
    cfg.input = 2;
    cfg.output = 2;
    RandomStream rng(9, "nn-adam");
    Mlp params = Mlp::init(cfg, rng);
    const Mlp before = params;

    Mlp grads = Mlp::zeros_like(params);
    grads.W[0] << 0.5, -0.25, 2.0, 0.0;
    grads.b[0] << 1.0, -3.0;

    AdamState state = AdamState::zeros_like(params);
    AdamConfig acfg;
    acfg.lr = 0.1;
    acfg.eps = 1e-8;

    adam_step(params, grads, state, acfg);
    CHECK(state.step == 1);

    // at step 1 the bias-corrected moments reduce to g and g^2
    for (Eigen::Index r = 0; r < 2; ++r) {
        for (Eigen::Index c = 0; c < 2; ++c) {
            const double g = grads.W[0](r, c);
            const double expect = before.W[0](r, c) - acfg.lr * g / (std::abs(g) + acfg.eps);
            CHECK(params.W[0](r, c) == doctest::Approx(expect).epsilon(1e-12));
        }
        const double g = grads.b[0][r];
        const double expect = before.b[0][r] - acfg.lr * g / (std::abs(g) + acfg.eps);
        CHECK(params.b[0][r] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("decoupled weight decay shrinks W but never b") {
    MlpConfig cfg;
    cfg.input = 2;
    cfg.output = 1;
    RandomStream rng(10, "nn-wd");
    Mlp params = Mlp::init(cfg, rng);
    params.b[0][0] = 0.7;
    const Mlp before = params;

    const Mlp grads = Mlp::zeros_like(params);  // isolate the decay term
    AdamState state = AdamState::zeros_like(params);
    AdamConfig acfg;
    acfg.lr = 0.1;
    acfg.weight_decay = 0.5;

    adam_step(params, grads, state, acfg);
    for (Eigen::Index c = 0; c < 2; ++c) {
        CHECK(params.W[0](0, c) ==
              doctest::Approx(before.W[0](0, c) * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
    }
    CHECK(params.b[0][0] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip preserves parameters bit-exactly") {
    const Mlp net = tiny_net(11);
    Checkpoint cp;
    net.save_to(cp, "net.");
    const Mlp back = Mlp::load_from(cp, "net.");
    CHECK(back.same_shape(net));
    CHECK(back.max_abs_difference(net) == 0.0);
    CHECK(back.cfg.hidden == net.cfg.hidden);
}
