#include "dive/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "dive/rng.hpp"

namespace dive {

CategoryPrototypes build_prototypes(const FeatureExtractor& fx,
                                    const std::vector<std::vector<Eigen::VectorXd>>& exemplars,
                                    const std::vector<std::string>& names, bool mean_mode) {
    if (exemplars.empty()) throw EmptyInputError("build_prototypes: no categories");
    if (names.size() != exemplars.size()) {
        throw ArgumentError("build_prototypes: name list does not match category count");
    }
    CategoryPrototypes out;
    out.names = names;
    for (std::size_t c = 0; c < exemplars.size(); ++c) {
        if (exemplars[c].empty()) {
            throw ArgumentError("build_prototypes: category " + names[c] + " has no exemplars");
        }
        std::vector<Eigen::VectorXd> units;
        for (std::size_t j = 0; j < exemplars[c].size(); ++j) {
            Eigen::VectorXd u;
            try {
                u = normalize_embedding(fx.extract(exemplars[c][j]));
            } catch (const DegenerateEmbeddingError&) {
                throw DegenerateEmbeddingError("build_prototypes: degenerate exemplar " +
                                               std::to_string(j) + " in category " + names[c]);
            }
            bool dup = false;
            for (const auto& kept : units) {
                if (kept.dot(u) >= 1.0 - 1e-9) {
                    dup = true;
                    break;
                }
            }
            if (!dup) units.push_back(std::move(u));
        }
        Eigen::MatrixXd protos;
        if (mean_mode) {
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(fx.dim());
            for (const auto& u : units) mean += u;
            protos.resize(1, fx.dim());
            protos.row(0) = normalize_embedding(mean).transpose();
        } else {
            protos.resize(static_cast<Eigen::Index>(units.size()), fx.dim());
            for (std::size_t j = 0; j < units.size(); ++j) {
                protos.row(static_cast<Eigen::Index>(j)) = units[j].transpose();
            }
        }
        out.prototypes.push_back(std::move(protos));
    }
    return out;
}

Classification classify(const FeatureExtractor& fx, const std::vector<Eigen::VectorXd>& images,
                        const CategoryPrototypes& prototypes) {
    if (prototypes.categories() == 0) throw EmptyInputError("classify: no prototypes");
    Classification out;
    out.label.resize(images.size(), -1);
    for (std::size_t i = 0; i < images.size(); ++i) {
        Eigen::VectorXd u;
        try {
            u = normalize_embedding(fx.extract(images[i]));
        } catch (const DegenerateEmbeddingError&) {
            out.unclassifiable.push_back(static_cast<int>(i));
            continue;
        }
        int best_cat = 0;
        double best_cos = -2.0;
        for (int c = 0; c < prototypes.categories(); ++c) {
            const Eigen::MatrixXd& P = prototypes.prototypes[static_cast<std::size_t>(c)];
            const double m = (P * u).maxCoeff();
            if (m > best_cos) {  // strict: ties stay with the lowest category id
                best_cos = m;
                best_cat = c;
            }
        }
        out.label[i] = best_cat;
    }
    return out;
}

std::vector<SpecificityRow> specificity_report(const FeatureExtractor& fx,
                                               const std::vector<SpecificityGroup>& groups,
                                               const CategoryPrototypes& prototypes,
                                               const std::vector<int>& tiers) {
    std::vector<SpecificityRow> rows;
    for (const auto& group : groups) {
        const Classification cls = classify(fx, group.ranked_images, prototypes);
        for (int tier : tiers) {
            if (tier < 1 || tier > static_cast<int>(group.ranked_images.size())) {
                throw ArgumentError("specificity_report: tier " + std::to_string(tier) +
                                    " exceeds group " + group.name + " size " +
                                    std::to_string(group.ranked_images.size()));
            }
            SpecificityRow row;
            row.group = group.name;
            row.tier = "top-" + std::to_string(tier);
            row.category = group.target_category;
            for (int i = 0; i < tier; ++i) {
                if (cls.label[static_cast<std::size_t>(i)] < 0) {
                    ++row.excluded;
                    continue;
                }
                ++row.considered;
                if (cls.label[static_cast<std::size_t>(i)] == group.target_category) ++row.matched;
            }
            row.percent = row.considered > 0
                              ? 100.0 * static_cast<double>(row.matched) / row.considered
                              : 0.0;
            rows.push_back(row);
        }
    }
    return rows;
}

namespace {

struct MetricEval {
    // per-image values when the metric is a per-image mean; otherwise empty
    std::vector<double> per_image;
    // Gram matrix of unit embeddings for the dispersion metric
    Eigen::MatrixXd gram;
    bool dispersion = false;

    double statistic(const std::vector<int>& idx) const {
        if (!dispersion) {
            double m = 0.0;
            for (int i : idx) m += per_image[static_cast<std::size_t>(i)];
            return m / static_cast<double>(idx.size());
        }
        const std::size_t n = idx.size();
        if (n < 2) return 0.0;
        double m = 0.0;
        long cnt = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                m += gram(idx[i], idx[j]);
                ++cnt;
            }
        }
        return 1.0 - m / static_cast<double>(cnt);
    }
};

MetricEval prepare_metric(const std::string& metric, const FeatureExtractor& fx,
                          const std::vector<Eigen::VectorXd>& images,
                          const CategoryPrototypes* prototypes) {
    MetricEval ev;
    const ImageShape shape = fx.config().shape;
    if (metric == "mean_saturation") {
        for (const auto& img : images) ev.per_image.push_back(mean_saturation(img, shape));
    } else if (metric == "mean_luminance") {
        for (const auto& img : images) ev.per_image.push_back(mean_luminance(img, shape));
    } else if (metric.rfind("prototype_score:", 0) == 0) {
        if (!prototypes) {
            throw ArgumentError("contrast_report: " + metric + " needs category prototypes");
        }
        const std::string name = metric.substr(std::string("prototype_score:").size());
        int cat = -1;
        for (std::size_t c = 0; c < prototypes->names.size(); ++c) {
            if (prototypes->names[c] == name) cat = static_cast<int>(c);
        }
        if (cat < 0) throw ArgumentError("contrast_report: unknown category in " + metric);
        const Eigen::MatrixXd& P = prototypes->prototypes[static_cast<std::size_t>(cat)];
        for (const auto& img : images) {
            const Eigen::VectorXd u = normalize_embedding(fx.extract(img));
            ev.per_image.push_back((P * u).maxCoeff());
        }
    } else if (metric == "embedding_dispersion") {
        ev.dispersion = true;
        Eigen::MatrixXd U(fx.dim(), static_cast<Eigen::Index>(images.size()));
        for (std::size_t i = 0; i < images.size(); ++i) {
            U.col(static_cast<Eigen::Index>(i)) = normalize_embedding(fx.extract(images[i]));
        }
        ev.gram = U.transpose() * U;
    } else {
        throw ArgumentError("contrast_report: unknown metric " + metric);
    }
    return ev;
}

std::vector<int> resample_indices(int n, RandomStream& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(n));
    return idx;
}

std::vector<int> identity_indices(int n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
}

}  // namespace

std::vector<ContrastMetricResult> contrast_report(const FeatureExtractor& fx,
                                                  const ContrastGroup& group_a,
                                                  const ContrastGroup& group_b,
                                                  const std::vector<std::string>& metrics,
                                                  const CategoryPrototypes* prototypes,
                                                  int bootstrap_resamples, std::uint64_t seed) {
    if (group_a.images.empty() || group_b.images.empty()) {
        throw EmptyInputError("contrast_report: both groups must be non-empty");
    }
    if (bootstrap_resamples < 2) throw ArgumentError("contrast_report: need at least 2 resamples");

    std::vector<ContrastMetricResult> out;
    for (const auto& metric : metrics) {
        const MetricEval ea = prepare_metric(metric, fx, group_a.images, prototypes);
        const MetricEval eb = prepare_metric(metric, fx, group_b.images, prototypes);
        ContrastMetricResult res;
        res.metric = metric;
        res.mean_a = ea.statistic(identity_indices(static_cast<int>(group_a.images.size())));
        res.mean_b = eb.statistic(identity_indices(static_cast<int>(group_b.images.size())));
        res.difference = res.mean_a - res.mean_b;

        // resampling streams are keyed by group name, not argument position,
        // so swapping the groups negates every resampled difference exactly
        std::vector<double> diffs(static_cast<std::size_t>(bootstrap_resamples));
        for (int r = 0; r < bootstrap_resamples; ++r) {
            RandomStream rng_a(seed, "bootstrap:" + group_a.name, static_cast<std::uint64_t>(r));
            RandomStream rng_b(seed, "bootstrap:" + group_b.name, static_cast<std::uint64_t>(r));
            const double sa = ea.statistic(resample_indices(static_cast<int>(group_a.images.size()), rng_a));
            const double sb = eb.statistic(resample_indices(static_cast<int>(group_b.images.size()), rng_b));
            diffs[static_cast<std::size_t>(r)] = sa - sb;
        }
        std::sort(diffs.begin(), diffs.end());
        const int lo = static_cast<int>(std::floor(0.025 * (bootstrap_resamples - 1)));
        const int hi = bootstrap_resamples - 1 - lo;  // symmetric order statistics
        res.ci_lo = diffs[static_cast<std::size_t>(lo)];
        res.ci_hi = diffs[static_cast<std::size_t>(hi)];
        out.push_back(res);
    }
    return out;
}

}  // namespace dive
