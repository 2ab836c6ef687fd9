#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dive/image.hpp"
#include "dive/rng.hpp"

namespace dive {

// Procedural image corpus. Five visually distinct families stand in for the
// semantic categories; the "patches" family carries a bimodal saturation
// continuum (vivid vs muted palettes) that the synthetic subject turns into
// planted sub-clusters.
struct WorldConfig {
    int categories = 5;
    int images = 2000;
    ImageShape shape{3, 24, 24};
    int exemplars_per_category = 9;  // held-out renders for classification prototypes

    std::vector<std::string> category_names() const;
    // category whose renders carry the saturation continuum
    int patches_category() const { return categories - 1; }
};

struct World {
    WorldConfig cfg;
    std::uint64_t seed = 0;
    std::vector<Eigen::VectorXd> images;  // quantized to the 8-bit grid
    std::vector<int> category;            // per image
};

// Renders one image of the given category from the stream (already quantized).
Eigen::VectorXd render_category(const WorldConfig& cfg, int category, RandomStream& rng);

World make_world(const WorldConfig& cfg, std::uint64_t seed);

// Held-out exemplar renders, per category, from streams disjoint from the
// corpus streams of the same seed.
std::vector<std::vector<Eigen::VectorXd>> make_exemplars(const WorldConfig& cfg,
                                                         std::uint64_t seed);

void save_world(const std::filesystem::path& dir, const World& world);
World load_world(const std::filesystem::path& dir);

// Mean pixel saturation: per pixel (max - min) / max over RGB, 0 where max = 0.
double mean_saturation(const Eigen::VectorXd& image, const ImageShape& shape);
double mean_luminance(const Eigen::VectorXd& image, const ImageShape& shape);

}  // namespace dive
