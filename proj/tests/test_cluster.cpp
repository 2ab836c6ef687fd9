#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "dive/cluster.hpp"
#include "dive/encoder.hpp"
#include "dive/error.hpp"
#include "dive/rng.hpp"
#include "dive/subject.hpp"
#include "dive/world.hpp"

using namespace dive;

namespace {

Eigen::VectorXd unit(long dim, long i) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
    v[i] = 1.0;
    return v;
}

// two bundles with disjoint jitter supports: cross cosines are exactly zero
Eigen::MatrixXd orthogonal_bundles(int per_bundle, std::uint64_t seed) {
    const long dim = 64;
    RandomStream rng(seed, "bundles");
    Eigen::MatrixXd X(2 * per_bundle, dim);
    for (int b = 0; b < 2; ++b) {
        for (int i = 0; i < per_bundle; ++i) {
            Eigen::VectorXd v = unit(dim, b);
            Eigen::VectorXd jitter = rng.normal_vector(30);
            jitter *= 0.05 / jitter.norm();
            v.segment(2 + 30 * b, 30) = jitter;
            X.row(b * per_bundle + i) = (v / v.norm()).transpose();
        }
    }
    return X;
}

}  // namespace

TEST_CASE("normalize_rows scales each row to unit norm and reports degenerates") {
    Eigen::MatrixXd W(3, 2);
    W << 3.0, 4.0, 0.0, 0.0, 5.0, 12.0;
    const NormalizedRows out = normalize_rows(W);
    REQUIRE(out.rows.rows() == 2);
    CHECK(out.rows(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out.rows(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(out.kept == std::vector<int>{0, 2});
    CHECK(out.dropped == std::vector<int>{1});

    SUBCASE("unit norms within 1e-12 on random input") {
        RandomStream rng(31, "rows");
        const Eigen::MatrixXd R = Eigen::MatrixXd::NullaryExpr(
            20, 8, [&](Eigen::Index, Eigen::Index) { return rng.normal(); });
        const NormalizedRows nr = normalize_rows(R);
        REQUIRE(nr.rows.rows() == 20);
        for (long r = 0; r < 20; ++r) {
            CHECK(std::abs(nr.rows.row(r).norm() - 1.0) <= 1e-12);
        }
    }

    SUBCASE("all rows degenerate is an error") {
        CHECK_THROWS_AS(normalize_rows(Eigen::MatrixXd::Zero(4, 3)), EmptyInputError);
    }

    SUBCASE("positive per-row rescaling does not change the output") {
        Eigen::MatrixXd scaled = W;
        scaled.row(0) *= 37.0;
        scaled.row(2) *= 0.001;
        const NormalizedRows other = normalize_rows(scaled);
        CHECK((other.rows - out.rows).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(other.kept == out.kept);
    }
}

TEST_CASE("vmf_cluster on identical vectors with k=1") {
    const long dim = 6;
    Eigen::MatrixXd X(7, dim);
    for (int i = 0; i < 7; ++i) X.row(i) = unit(dim, 3).transpose();
    const ClusterModel model = vmf_cluster(X, 1, 42);
    CHECK(model.centers.row(0).transpose() == unit(dim, 3));
    CHECK(model.objective == 7.0);
    for (int a : model.assignment) CHECK(a == 0);
    CHECK(model.iterations == (int)model.objective_history.size());
    CHECK(model.reseeded_centers.empty());
}

TEST_CASE("vmf_cluster separates two orthogonal bundles exactly") {
    const Eigen::MatrixXd X = orthogonal_bundles(50, 8);

    // construction check: tight within, orthogonal across
    double min_within = 1.0, max_cross = 0.0;
    for (int i = 0; i < 100; ++i) {
        for (int j = i + 1; j < 100; ++j) {
            const double c = X.row(i).dot(X.row(j));
            if ((i < 50) == (j < 50)) {
                min_within = std::min(min_within, c);
            } else {
                max_cross = std::max(max_cross, std::abs(c));
            }
        }
    }
    CHECK(min_within >= 0.99);
    CHECK(max_cross <= 1e-15);

    const ClusterModel model = vmf_cluster(X, 2, 17);
    std::vector<int> truth(100);
    for (int i = 50; i < 100; ++i) truth[(std::size_t)i] = 1;
    CHECK(adjusted_rand_index(model.assignment, truth) == 1.0);
    const int first = model.assignment[0];
    for (int i = 0; i < 50; ++i) CHECK(model.assignment[(std::size_t)i] == first);
    for (int i = 50; i < 100; ++i) CHECK(model.assignment[(std::size_t)i] == 1 - first);
}

TEST_CASE("vmf_cluster recovers planted labels at 60 degrees, kappa 50") {
    const long dim = 64;
    const Eigen::VectorXd mu0 = unit(dim, 0);
    const Eigen::VectorXd mu1 =
        std::cos(M_PI / 3.0) * unit(dim, 0) + std::sin(M_PI / 3.0) * unit(dim, 1);
    RandomStream rng(77, "vmf-pair");
    Eigen::MatrixXd X(500, dim);
    std::vector<int> truth(500);
    for (int i = 0; i < 500; ++i) {
        const bool second = i >= 250;
        truth[(std::size_t)i] = second ? 1 : 0;
        X.row(i) = sample_vmf(second ? mu1 : mu0, 50.0, rng).transpose();
    }

    const ClusterModel model = vmf_cluster(X, 2, 5);
    CHECK(adjusted_rand_index(model.assignment, truth) >= 0.95);

    SUBCASE("model invariants") {
        for (int c = 0; c < 2; ++c) {
            CHECK(std::abs(model.centers.row(c).norm() - 1.0) <= 1e-9);
        }
        const Eigen::MatrixXd cos = X * model.centers.transpose();
        for (int i = 0; i < 500; ++i) {
            const int a = model.assignment[(std::size_t)i];
            for (int c = 0; c < 2; ++c) CHECK(cos(i, a) >= cos(i, c) - 1e-12);
        }
        REQUIRE(!model.objective_history.empty());
        for (std::size_t i = 1; i < model.objective_history.size(); ++i) {
            CHECK(model.objective_history[i] >= model.objective_history[i - 1] - 1e-9);
        }
        CHECK(model.objective == model.objective_history.back());

        // fixed point: one more assignment pass changes nothing
        for (int i = 0; i < 500; ++i) {
            int best = 0;
            for (int c = 1; c < 2; ++c) {
                if (cos(i, c) > cos(i, best)) best = c;
            }
            CHECK(best == model.assignment[(std::size_t)i]);
        }
    }

    SUBCASE("center gap reflects the planted separation") {
        const Eigen::MatrixXd gap = cluster_gap(model);
        CHECK(gap(0, 1) >= 0.3);
        CHECK(std::abs(gap(0, 0)) <= 1e-12);
    }

    SUBCASE("deterministic given the seed") {
        const ClusterModel again = vmf_cluster(X, 2, 5);
        CHECK(again.centers == model.centers);
        CHECK(again.assignment == model.assignment);
        CHECK(again.objective == model.objective);
    }
}

TEST_CASE("vmf_cluster rejects bad arguments") {
    Eigen::MatrixXd X(3, 4);
    X.row(0) = unit(4, 0).transpose();
    X.row(1) = unit(4, 1).transpose();
    X.row(2) = unit(4, 2).transpose();
    CHECK_THROWS_AS(vmf_cluster(X, 0, 1), ArgumentError);
    CHECK_THROWS_AS(vmf_cluster(X, 4, 1), ArgumentError);
    CHECK_THROWS_AS(vmf_cluster(X, 2, 1, 0), ArgumentError);
    CHECK_THROWS_AS(vmf_cluster(X, 2, 1, 10, 0), ArgumentError);

    Eigen::MatrixXd bad = X;
    bad.row(1) *= 2.0;
    CHECK_THROWS_AS(vmf_cluster(bad, 2, 1), ArgumentError);

    Eigen::MatrixXd dup(3, 4);
    for (int i = 0; i < 3; ++i) dup.row(i) = unit(4, 1).transpose();
    CHECK_THROWS_AS(vmf_cluster(dup, 2, 1), ArgumentError);
}

TEST_CASE("cluster_gap hand values") {
    ClusterModel model;
    model.k = 2;
    model.centers.resize(2, 3);

    model.centers.row(0) = unit(3, 0).transpose();
    model.centers.row(1) = unit(3, 0).transpose();
    CHECK(cluster_gap(model)(0, 1) == 0.0);

    model.centers.row(1) = unit(3, 1).transpose();
    CHECK(cluster_gap(model)(0, 1) == 1.0);

    model.centers.row(1) = -unit(3, 0).transpose();
    CHECK(cluster_gap(model)(0, 1) == 2.0);

    model.k = 1;
    CHECK_THROWS_AS(cluster_gap(model), ArgumentError);
}

TEST_CASE("rank_images sorts by mean score over the set") {
    Eigen::MatrixXd M(2, 3);
    M << 0.1, 0.8, 0.4, 0.3, 1.0, 0.6;  // column means 0.2, 0.9, 0.5
    VoxelSet S;
    S.indices = {0, 1};
    S.provenance = "test";

    const RankedImages top2 = rank_images(M, S, 2);
    CHECK(top2.ids == std::vector<int>{1, 2});
    CHECK(top2.scores[0] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(top2.scores[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(top2.source == "recorded");

    SUBCASE("top_k=1 is the argmax") {
        CHECK(rank_images(M, S, 1).ids == std::vector<int>{1});
    }

    SUBCASE("custom ids label the columns") {
        const RankedImages named = rank_images(M, S, 3, {7, 3, 9}, "generated");
        CHECK(named.ids == std::vector<int>{3, 9, 7});
        CHECK(named.source == "generated");
    }

    SUBCASE("ties break by lower image id") {
        Eigen::MatrixXd T(1, 3);
        T << 0.5, 0.7, 0.5;
        const RankedImages r = rank_images(T, VoxelSet{{0}, "t"}, 3);
        CHECK(r.ids == std::vector<int>{1, 0, 2});
    }

    SUBCASE("order is invariant under a constant shift") {
        const RankedImages shifted = rank_images((M.array() + 3.25).matrix(), S, 3);
        CHECK(shifted.ids == rank_images(M, S, 3).ids);
    }

    SUBCASE("argument validation") {
        CHECK_THROWS_AS(rank_images(M, S, 0), ArgumentError);
        CHECK_THROWS_AS(rank_images(M, S, 4), ArgumentError);
        CHECK_THROWS_AS(rank_images(M, S, 2, {1, 2}), ArgumentError);
        CHECK_THROWS_AS(rank_images(M, VoxelSet{{}, "empty"}, 1), EmptyInputError);
        CHECK_THROWS_AS(rank_images(M, VoxelSet{{2}, "oob"}, 1), ArgumentError);
    }
}

TEST_CASE("recorded and predicted rankings agree for a noiseless realizable head") {
    WorldConfig wc;
    wc.images = 30;
    const World world = make_world(wc, 55);
    const FeatureExtractor fx(FeatureExtractorConfig{wc.shape, 2, 12, 0.35});

    SubjectConfig sc;
    sc.voxels = 60;
    sc.region_voxels = 10;
    sc.noise_sd = 0.0;
    sc.session_offset_sd = 0.0;
    sc.sessions = 1;
    sc.repeats = 1;
    const GroundTruthSubject subj = make_subject(world, fx, sc, 606);
    const SubjectDataset ds = simulate_recordings(subj, world, fx, 1, 1, 707);

    EncoderHead head;
    head.W = subj.W;
    head.b = subj.b;
    head.extractor_id = fx.id();
    Eigen::MatrixXd predicted(subj.voxel_count(), wc.images);
    std::vector<int> ids(ds.presentations.size());
    for (std::size_t j = 0; j < ds.presentations.size(); ++j) {
        const int img = ds.presentations[j].image;
        ids[j] = img;
        predicted.col((long)j) = predict_responses(head, fx, world.images[(std::size_t)img]);
    }

    const VoxelSet S = subj.region_voxels(0, "region 0");
    const RankedImages rec = rank_images(ds.betas, S, wc.images, ids);
    const RankedImages pred = rank_images(predicted, S, wc.images, ids, "generated");
    CHECK(rec.ids == pred.ids);
}

TEST_CASE("adjusted_rand_index reference values") {
    CHECK(adjusted_rand_index({0, 0, 1, 1}, {1, 1, 0, 0}) == 1.0);
    CHECK(adjusted_rand_index({0, 0, 0}, {2, 2, 2}) == 1.0);
    CHECK(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(adjusted_rand_index({0, 0, 1, 1, 2, 2}, {0, 0, 1, 1, 2, 2}) == 1.0);
    CHECK_THROWS_AS(adjusted_rand_index({0, 1}, {0}), ArgumentError);
    CHECK_THROWS_AS(adjusted_rand_index({}, {}), EmptyInputError);
}

TEST_CASE("mean_silhouette_cosine separates tight bundles from a random split") {
    const Eigen::MatrixXd X = orthogonal_bundles(20, 9);
    std::vector<int> good(40), bad(40);
    for (int i = 0; i < 40; ++i) {
        good[(std::size_t)i] = i < 20 ? 0 : 1;
        bad[(std::size_t)i] = i % 2;
    }
    const double s_good = mean_silhouette_cosine(X, good);
    const double s_bad = mean_silhouette_cosine(X, bad);
    CHECK(s_good >= 0.5);
    CHECK(s_good > s_bad);
    CHECK(std::abs(s_good) <= 1.0);

    CHECK_THROWS_AS(mean_silhouette_cosine(X, std::vector<int>(39, 0)), ArgumentError);
    CHECK_THROWS_AS(mean_silhouette_cosine(X, std::vector<int>(40, 0)), ArgumentError);
}
