#include <doctest.h>

#include <cmath>

#include "dive/features.hpp"
#include "dive/rng.hpp"

using namespace dive;

namespace {

FeatureExtractorConfig small_config() {
    FeatureExtractorConfig cfg;
    cfg.shape = ImageShape{3, 8, 8};
    return cfg;
}

Eigen::VectorXd random_image(const ImageShape& shape, std::uint64_t index) {
    RandomStream rng(61, "feature-image", index);
    Eigen::VectorXd img(shape.size());
    for (int i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    return img;
}

}  // namespace

TEST_CASE("feature dimension follows the channel-group layout") {
    FeatureExtractorConfig cfg;
    CHECK(cfg.dim() == 64);  // 24 + 24 + 12 + 16 + 8 + 4 with g=2, P=12
    cfg.pool_grid = 3;
    cfg.color_prototypes = 5;
    CHECK(cfg.dim() == 6 * 9 + 5 + 4 * 9 + 8 + 4);
    const FeatureExtractor fx(small_config());
    CHECK(fx.dim() == 64);
}

TEST_CASE("extraction is deterministic and finite on edge-case images") {
    const FeatureExtractor fx(small_config());
    const auto img = random_image(fx.config().shape, 0);
    const Eigen::VectorXd a = fx.extract(img);
    const Eigen::VectorXd b = fx.extract(img);
    CHECK(a == b);
    REQUIRE(a.size() == 64);

    for (double fill : {0.0, 1.0, 0.5}) {
        const Eigen::VectorXd flat = Eigen::VectorXd::Constant(fx.config().shape.size(), fill);
        const Eigen::VectorXd f = fx.extract(flat);
        CHECK(f.allFinite());
    }
}

TEST_CASE("extractor id separates configurations") {
    const FeatureExtractor a(small_config()), b(small_config());
    CHECK(a.id() == b.id());
    auto other = small_config();
    other.pool_grid = 3;
    CHECK(FeatureExtractor(other).id() != a.id());
}

TEST_CASE("checkpoint round trip preserves the extractor") {
    const FeatureExtractor fx(small_config());
    Checkpoint cp;
    fx.save_to(cp);
    const FeatureExtractor back = FeatureExtractor::load_from(cp);
    CHECK(back.id() == fx.id());
    const auto img = random_image(fx.config().shape, 1);
    CHECK(back.extract(img) == fx.extract(img));
}

TEST_CASE("normalize_embedding scales to the unit sphere") {
    Eigen::VectorXd v(2);
    v << 3.0, 4.0;
    const Eigen::VectorXd u = normalize_embedding(v);
    CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-12));

    // positive rescaling changes nothing
    CHECK((normalize_embedding(Eigen::VectorXd(17.5 * v)) - u).norm() < 1e-12);

    CHECK_THROWS_AS(normalize_embedding(Eigen::VectorXd::Zero(4)), DegenerateEmbeddingError);
    Eigen::VectorXd tiny = Eigen::VectorXd::Constant(4, 1e-10);
    CHECK_THROWS_AS(normalize_embedding(tiny), DegenerateEmbeddingError);
}

TEST_CASE("embed_images stacks unit embeddings as columns") {
    const FeatureExtractor fx(small_config());
    std::vector<Eigen::VectorXd> imgs;
    for (int i = 0; i < 3; ++i) imgs.push_back(random_image(fx.config().shape, 10 + i));
    const Eigen::MatrixXd E = embed_images(fx, imgs);
    REQUIRE(E.rows() == 64);
    REQUIRE(E.cols() == 3);
    for (int c = 0; c < 3; ++c) {
        CHECK(E.col(c).norm() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK((E.col(c) - normalize_embedding(fx.extract(imgs[static_cast<std::size_t>(c)]))).norm() <
              1e-15);
    }
}

TEST_CASE("extract_vjp matches central finite differences") {
    const FeatureExtractor fx(small_config());
    const long n = fx.config().shape.size();

    for (int trial = 0; trial < 3; ++trial) {
        const Eigen::VectorXd x = random_image(fx.config().shape, 20 + trial);
        RandomStream rng(67, "cotangent", trial);
        const Eigen::VectorXd u = rng.normal_vector(64);

        const Eigen::VectorXd g = fx.extract_vjp(x, u);
        REQUIRE(g.size() == n);

        const double h = 1e-6;
        double worst = 0.0;
        for (long i = 0; i < n; ++i) {
            Eigen::VectorXd xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double fd = (u.dot(fx.extract(xp)) - u.dot(fx.extract(xm))) / (2.0 * h);
            worst = std::max(worst, std::abs(fd - g[i]));
        }
        const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
        CHECK(worst / scale < 1e-5);
    }
}

TEST_CASE("vjp is linear in the cotangent") {
    const FeatureExtractor fx(small_config());
    const Eigen::VectorXd x = random_image(fx.config().shape, 30);
    RandomStream rng(71, "linearity");
    const Eigen::VectorXd u = rng.normal_vector(64);
    const Eigen::VectorXd v = rng.normal_vector(64);
    const Eigen::VectorXd lhs = fx.extract_vjp(x, 2.0 * u + 3.0 * v);
    const Eigen::VectorXd rhs = 2.0 * fx.extract_vjp(x, u) + 3.0 * fx.extract_vjp(x, v);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
}
