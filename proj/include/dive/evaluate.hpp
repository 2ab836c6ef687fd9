#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dive/features.hpp"
#include "dive/world.hpp"

namespace dive {

// Forced-choice classification against embedding prototypes built from
// held-out exemplar renders (the stand-in for per-category prompt lists),
// Table-1-style specificity tiers, and automated group-contrast metrics
// replacing the human studies.

struct CategoryPrototypes {
    std::vector<std::string> names;              // per category
    std::vector<Eigen::MatrixXd> prototypes;     // per category: rows are unit vectors

    int categories() const { return static_cast<int>(prototypes.size()); }
};

// mean_mode collapses each category to its single normalized mean prototype.
// Near-duplicate exemplars (cosine >= 1 - 1e-9) add no prototype.
CategoryPrototypes build_prototypes(const FeatureExtractor& fx,
                                    const std::vector<std::vector<Eigen::VectorXd>>& exemplars,
                                    const std::vector<std::string>& names, bool mean_mode = false);

struct Classification {
    std::vector<int> label;           // -1 for unclassifiable
    std::vector<int> unclassifiable;  // indices with degenerate embeddings
};

Classification classify(const FeatureExtractor& fx, const std::vector<Eigen::VectorXd>& images,
                        const CategoryPrototypes& prototypes);

struct SpecificityGroup {
    std::string name;                         // e.g. "natural" / "guided"
    int target_category = 0;
    std::vector<Eigen::VectorXd> ranked_images;  // best first
};

struct SpecificityRow {
    std::string group;
    std::string tier;      // e.g. "top-20"
    int category = 0;
    double percent = 0.0;  // matches / classifiable * 100
    int matched = 0;
    int considered = 0;    // classifiable images in the tier
    int excluded = 0;      // unclassifiable images in the tier
};

std::vector<SpecificityRow> specificity_report(const FeatureExtractor& fx,
                                               const std::vector<SpecificityGroup>& groups,
                                               const CategoryPrototypes& prototypes,
                                               const std::vector<int>& tiers);

// Built-in contrast metrics. prototype_score:<cat> scores each image by its
// max cosine with that category's prototypes; embedding_dispersion is a
// group-level statistic (1 - mean pairwise cosine of unit embeddings).
struct ContrastMetricResult {
    std::string metric;
    double mean_a = 0.0;
    double mean_b = 0.0;
    double difference = 0.0;  // a - b
    double ci_lo = 0.0;       // 95% bootstrap interval for the difference
    double ci_hi = 0.0;
};

struct ContrastGroup {
    std::string name;
    std::vector<Eigen::VectorXd> images;
};

std::vector<ContrastMetricResult> contrast_report(const FeatureExtractor& fx,
                                                  const ContrastGroup& group_a,
                                                  const ContrastGroup& group_b,
                                                  const std::vector<std::string>& metrics,
                                                  const CategoryPrototypes* prototypes,
                                                  int bootstrap_resamples, std::uint64_t seed);

}  // namespace dive
