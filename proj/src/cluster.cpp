#include "dive/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace dive {

NormalizedRows normalize_rows(const Eigen::MatrixXd& W, double floor) {
    NormalizedRows out;
    std::vector<Eigen::Index> kept;
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
        if (W.row(r).norm() < floor) {
            out.dropped.push_back(static_cast<int>(r));
        } else {
            kept.push_back(r);
        }
    }
    if (kept.empty()) throw EmptyInputError("normalize_rows: every row is degenerate");
    out.rows.resize(static_cast<Eigen::Index>(kept.size()), W.cols());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        out.rows.row(static_cast<Eigen::Index>(i)) = W.row(kept[i]) / W.row(kept[i]).norm();
        out.kept.push_back(static_cast<int>(kept[i]));
    }
    return out;
}

namespace {

struct RestartResult {
    Eigen::MatrixXd centers;
    std::vector<int> assignment;
    double objective = 0.0;
    int iterations = 0;
    std::vector<double> history;
    std::vector<int> reseeded;
};

// greedy farthest-point seeding on cosine distance; first pick from the stream
Eigen::MatrixXd seed_centers(const Eigen::MatrixXd& X, int k, RandomStream& rng) {
    const Eigen::Index n = X.rows();
    std::vector<Eigen::Index> chosen;
    chosen.push_back(static_cast<Eigen::Index>(rng.uniform_int(n)));
    while (static_cast<int>(chosen.size()) < k) {
        Eigen::Index best = -1;
        double best_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double mind = 2.0;
            for (Eigen::Index c : chosen) mind = std::min(mind, 1.0 - X.row(i).dot(X.row(c)));
            if (mind > best_d + 1e-15) {
                best_d = mind;
                best = i;
            }
        }
        chosen.push_back(best);
    }
    Eigen::MatrixXd centers(k, X.cols());
    for (int c = 0; c < k; ++c) centers.row(c) = X.row(chosen[static_cast<std::size_t>(c)]);
    return centers;
}

RestartResult run_restart(const Eigen::MatrixXd& X, int k, int max_iters, RandomStream& rng) {
    const Eigen::Index n = X.rows();
    RestartResult res;
    res.centers = seed_centers(X, k, rng);
    res.assignment.assign(static_cast<std::size_t>(n), -1);

    for (int iter = 0; iter < max_iters; ++iter) {
        // assignment: argmax cosine, ties to the lowest center id
        Eigen::MatrixXd cos = X * res.centers.transpose();  // n x k
        std::vector<int> next(static_cast<std::size_t>(n));
        double obj = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_c = cos(i, 0);
            for (int c = 1; c < k; ++c) {
                if (cos(i, c) > best_c) {
                    best_c = cos(i, c);
                    best = c;
                }
            }
            next[static_cast<std::size_t>(i)] = best;
            obj += best_c;
        }
        res.history.push_back(obj);
        res.objective = obj;
        res.iterations = iter + 1;
        const bool stable = next == res.assignment;
        res.assignment = std::move(next);
        if (stable) break;

        // update: normalized member means; empty clusters re-seed from the
        // point farthest from its own center
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, X.cols());
        std::vector<long> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(res.assignment[static_cast<std::size_t>(i)]) += X.row(i);
            ++counts[static_cast<std::size_t>(res.assignment[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) {
                Eigen::Index far = 0;
                double far_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double d =
                        1.0 - X.row(i).dot(res.centers.row(res.assignment[static_cast<std::size_t>(i)]));
                    if (d > far_d + 1e-15) {
                        far_d = d;
                        far = i;
                    }
                }
                res.centers.row(c) = X.row(far);
                res.reseeded.push_back(c);
                continue;
            }
            const double norm = sums.row(c).norm();
            if (norm < 1e-12) {
                // members cancel exactly; keep the previous center
                continue;
            }
            res.centers.row(c) = sums.row(c) / norm;
        }
    }
    return res;
}

}  // namespace

ClusterModel vmf_cluster(const Eigen::MatrixXd& unit_rows, int k, std::uint64_t seed,
                         int max_iters, int restarts) {
    const Eigen::Index n = unit_rows.rows();
    if (k < 1) throw ArgumentError("vmf_cluster: k must be >= 1");
    if (n < k) throw ArgumentError("vmf_cluster: fewer vectors than clusters");
    if (max_iters < 1) throw ArgumentError("vmf_cluster: max_iters must be >= 1");
    if (restarts < 1) throw ArgumentError("vmf_cluster: restarts must be >= 1");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(unit_rows.row(i).norm() - 1.0) > 1e-6) {
            throw ArgumentError("vmf_cluster: row " + std::to_string(i) + " is not unit norm");
        }
    }
    // need k distinct vectors for a meaningful solution
    {
        std::vector<Eigen::Index> distinct;
        for (Eigen::Index i = 0; i < n && static_cast<int>(distinct.size()) < k; ++i) {
            bool dup = false;
            for (Eigen::Index j : distinct) {
                if (unit_rows.row(i).dot(unit_rows.row(j)) >= 1.0 - 1e-12) {
                    dup = true;
                    break;
                }
            }
            if (!dup) distinct.push_back(i);
        }
        if (static_cast<int>(distinct.size()) < k) {
            throw ArgumentError("vmf_cluster: fewer than k distinct vectors");
        }
    }

    RestartResult best;
    bool have = false;
    for (int r = 0; r < restarts; ++r) {
        RandomStream rng(seed, "cluster-restart", static_cast<std::uint64_t>(r));
        RestartResult res = run_restart(unit_rows, k, max_iters, rng);
        if (!have || res.objective > best.objective) {
            best = std::move(res);
            have = true;
        }
    }

    ClusterModel model;
    model.k = k;
    model.centers = best.centers;
    model.assignment = best.assignment;
    model.objective = best.objective;
    model.iterations = best.iterations;
    model.objective_history = best.history;
    model.reseeded_centers = best.reseeded;
    return model;
}

Eigen::MatrixXd cluster_gap(const ClusterModel& model) {
    if (model.k < 2) throw ArgumentError("cluster_gap: need at least 2 centers");
    Eigen::MatrixXd gap(model.k, model.k);
    for (int i = 0; i < model.k; ++i) {
        for (int j = 0; j < model.k; ++j) {
            gap(i, j) = 1.0 - model.centers.row(i).dot(model.centers.row(j));
        }
    }
    return gap;
}

RankedImages rank_images(const Eigen::MatrixXd& matrix, const VoxelSet& S, int top_k,
                         const std::vector<int>& ids, const std::string& source) {
    S.validate_against(matrix.rows());
    const Eigen::Index n = matrix.cols();
    if (top_k < 1) throw ArgumentError("rank_images: top_k must be >= 1");
    if (top_k > n) throw ArgumentError("rank_images: top_k exceeds image count");
    if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != n) {
        throw ArgumentError("rank_images: id list does not match column count");
    }

    std::vector<std::pair<double, int>> scored(static_cast<std::size_t>(n));
    for (Eigen::Index c = 0; c < n; ++c) {
        double m = 0.0;
        for (int v : S.indices) m += matrix(v, c);
        m /= static_cast<double>(S.indices.size());
        const int id = ids.empty() ? static_cast<int>(c) : ids[static_cast<std::size_t>(c)];
        scored[static_cast<std::size_t>(c)] = {m, id};
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    RankedImages out;
    out.source = source;
    for (int i = 0; i < top_k; ++i) {
        out.scores.push_back(scored[static_cast<std::size_t>(i)].first);
        out.ids.push_back(scored[static_cast<std::size_t>(i)].second);
    }
    return out;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw ArgumentError("adjusted_rand_index: label lists differ in length");
    if (a.empty()) throw EmptyInputError("adjusted_rand_index: empty labels");
    std::map<std::pair<int, int>, long> table;
    std::map<int, long> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++table[{a[i], b[i]}];
        ++ra[a[i]];
        ++rb[b[i]];
    }
    auto comb2 = [](long x) { return 0.5 * static_cast<double>(x) * static_cast<double>(x - 1); };
    double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [key, cnt] : table) sum_ij += comb2(cnt);
    for (const auto& [key, cnt] : ra) sum_a += comb2(cnt);
    for (const auto& [key, cnt] : rb) sum_b += comb2(cnt);
    const double total = comb2(static_cast<long>(a.size()));
    const double expected = sum_a * sum_b / total;
    const double maximum = 0.5 * (sum_a + sum_b);
    if (maximum == expected) return 1.0;  // both partitions trivial
    return (sum_ij - expected) / (maximum - expected);
}

double mean_silhouette_cosine(const Eigen::MatrixXd& unit_rows, const std::vector<int>& assignment) {
    const Eigen::Index n = unit_rows.rows();
    if (static_cast<Eigen::Index>(assignment.size()) != n) {
        throw ArgumentError("silhouette: assignment does not match rows");
    }
    std::map<int, std::vector<Eigen::Index>> members;
    for (Eigen::Index i = 0; i < n; ++i) members[assignment[static_cast<std::size_t>(i)]].push_back(i);
    if (members.size() < 2) throw ArgumentError("silhouette: need at least 2 clusters");

    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int own = assignment[static_cast<std::size_t>(i)];
        double a_dist = 0.0;
        double b_dist = std::numeric_limits<double>::infinity();
        for (const auto& [c, mem] : members) {
            double m = 0.0;
            long cnt = 0;
            for (Eigen::Index j : mem) {
                if (j == i) continue;
                m += 1.0 - unit_rows.row(i).dot(unit_rows.row(j));
                ++cnt;
            }
            if (c == own) {
                if (cnt == 0) {
                    a_dist = -1.0;  // singleton sentinel
                } else {
                    a_dist = m / static_cast<double>(cnt);
                }
            } else if (cnt > 0) {
                b_dist = std::min(b_dist, m / static_cast<double>(cnt));
            }
        }
        if (a_dist < 0.0) continue;  // singleton contributes 0
        const double denom = std::max(a_dist, b_dist);
        if (denom > 0.0 && std::isfinite(b_dist)) acc += (b_dist - a_dist) / denom;
    }
    return acc / static_cast<double>(n);
}

}  // namespace dive
