#pragma once

#include <filesystem>

#include <Eigen/Dense>

#include "dive/error.hpp"

namespace dive {

// Images are flat vectors in channel-planar layout: index (c * H + y) * W + x,
// channels RGB, values in [0, 1].
struct ImageShape {
    int channels = 3;
    int height = 0;
    int width = 0;

    long pixel_count() const { return static_cast<long>(height) * width; }
    long size() const { return static_cast<long>(channels) * height * width; }

    bool operator==(const ImageShape&) const = default;
};

inline long image_index(const ImageShape& s, int c, int y, int x) {
    return (static_cast<long>(c) * s.height + y) * s.width + x;
}

// Snap to the 8-bit grid (multiples of 1/255) after clamping to [0, 1], so the
// in-memory corpus and its PNG round-trip are bit-identical.
Eigen::VectorXd quantize_unit(const Eigen::VectorXd& image);

void save_png(const std::filesystem::path& path, const Eigen::VectorXd& image,
              const ImageShape& shape);
Eigen::VectorXd load_png(const std::filesystem::path& path, ImageShape* shape_out = nullptr);

}  // namespace dive
