#include "dive/world.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace dive {

using nlohmann::json;

namespace {

struct Rgb {
    double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    return {r + m, g + m, b + m};
}

void put(Eigen::VectorXd& img, const ImageShape& s, int y, int x, const Rgb& col) {
    img[image_index(s, 0, y, x)] = col.r;
    img[image_index(s, 1, y, x)] = col.g;
    img[image_index(s, 2, y, x)] = col.b;
}

void add(Eigen::VectorXd& img, const ImageShape& s, int y, int x, const Rgb& col, double w) {
    img[image_index(s, 0, y, x)] += w * col.r;
    img[image_index(s, 1, y, x)] += w * col.g;
    img[image_index(s, 2, y, x)] += w * col.b;
}

// soft warm blobs on a dark field
Eigen::VectorXd render_blobs(const ImageShape& s, RandomStream& rng) {
    Eigen::VectorXd img(s.size());
    const Rgb bg = hsv_to_rgb(0.6 + 0.05 * rng.uniform(), 0.4, 0.10 + 0.05 * rng.uniform());
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) put(img, s, y, x, bg);
    const int nblobs = 2 + static_cast<int>(rng.uniform_int(3));
    for (int k = 0; k < nblobs; ++k) {
        const double cy = rng.uniform() * s.height;
        const double cx = rng.uniform() * s.width;
        const double rad = 3.0 + 3.0 * rng.uniform();
        const double hue = rng.uniform() < 0.7 ? 0.02 + 0.12 * rng.uniform()   // reds and oranges
                                               : 0.88 + 0.10 * rng.uniform(); // pinks
        const Rgb col = hsv_to_rgb(hue, 0.75 + 0.2 * rng.uniform(), 0.75 + 0.25 * rng.uniform());
        for (int y = 0; y < s.height; ++y) {
            for (int x = 0; x < s.width; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                add(img, s, y, x, col, std::exp(-d2 / (2.0 * rad * rad * 0.25)));
            }
        }
    }
    return img;
}

// checkerboard lattice in two cool colors
Eigen::VectorXd render_grids(const ImageShape& s, RandomStream& rng) {
    Eigen::VectorXd img(s.size());
    const int cell = 3 + static_cast<int>(rng.uniform_int(4));
    const int py = static_cast<int>(rng.uniform_int(cell));
    const int px = static_cast<int>(rng.uniform_int(cell));
    const double h1 = 0.50 + 0.17 * rng.uniform();  // cyans through blues
    const Rgb c1 = hsv_to_rgb(h1, 0.65 + 0.3 * rng.uniform(), 0.70 + 0.25 * rng.uniform());
    const Rgb c2 = hsv_to_rgb(h1 + 0.45 + 0.1 * rng.uniform(), 0.5 + 0.3 * rng.uniform(),
                              0.15 + 0.15 * rng.uniform());
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            const int parity = (((y + py) / cell) + ((x + px) / cell)) % 2;
            put(img, s, y, x, parity == 0 ? c1 : c2);
        }
    }
    return img;
}

// diagonal sinusoidal stripes between two hues
Eigen::VectorXd render_stripes(const ImageShape& s, RandomStream& rng) {
    Eigen::VectorXd img(s.size());
    const double base = rng.uniform() < 0.5 ? M_PI / 4.0 : 3.0 * M_PI / 4.0;
    const double theta = base + (rng.uniform() - 0.5) * (M_PI / 12.0);
    const double wavelength = 4.0 + 4.0 * rng.uniform();
    const double phase = rng.uniform() * 2.0 * M_PI;
    const Rgb c1 = hsv_to_rgb(0.26 + 0.12 * rng.uniform(), 0.7 + 0.25 * rng.uniform(),
                              0.75 + 0.2 * rng.uniform());  // greens
    const Rgb c2 = hsv_to_rgb(0.76 + 0.10 * rng.uniform(), 0.55 + 0.3 * rng.uniform(),
                              0.25 + 0.2 * rng.uniform());  // purples
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            const double u = x * std::cos(theta) + y * std::sin(theta);
            const double w = 0.5 + 0.5 * std::sin(2.0 * M_PI * u / wavelength + phase);
            put(img, s, y, x,
                {c1.r * w + c2.r * (1 - w), c1.g * w + c2.g * (1 - w), c1.b * w + c2.b * (1 - w)});
        }
    }
    return img;
}

// sparse bright crosses on a mid-grey field
Eigen::VectorXd render_glyphs(const ImageShape& s, RandomStream& rng) {
    Eigen::VectorXd img(s.size());
    const double bgv = 0.38 + 0.1 * rng.uniform();
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) put(img, s, y, x, {bgv, bgv, bgv});
    const int nglyphs = 5 + static_cast<int>(rng.uniform_int(4));
    for (int k = 0; k < nglyphs; ++k) {
        const int cy = 2 + static_cast<int>(rng.uniform_int(s.height - 4));
        const int cx = 2 + static_cast<int>(rng.uniform_int(s.width - 4));
        const int arm = 1 + static_cast<int>(rng.uniform_int(3));
        const bool diagonal = rng.uniform() < 0.5;
        const Rgb col = hsv_to_rgb(0.12 + 0.05 * rng.uniform(), 0.05 + 0.15 * rng.uniform(),
                                   0.92 + 0.08 * rng.uniform());  // near-white
        for (int d = -arm; d <= arm; ++d) {
            const int y1 = diagonal ? cy + d : cy, x1 = cx + d;
            const int y2 = cy + d, x2 = diagonal ? cx - d : cx;
            if (y1 >= 0 && y1 < s.height && x1 >= 0 && x1 < s.width) put(img, s, y1, x1, col);
            if (y2 >= 0 && y2 < s.height && x2 >= 0 && x2 < s.width) put(img, s, y2, x2, col);
        }
    }
    return img;
}

// rectangular color patches with a bimodal saturation level
Eigen::VectorXd render_patches(const ImageShape& s, RandomStream& rng) {
    Eigen::VectorXd img(s.size());
    const bool vivid = rng.uniform() < 0.5;
    const int grid = 3 + static_cast<int>(rng.uniform_int(2));
    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            const double hue = rng.uniform();
            const double sat = vivid ? 0.75 + 0.20 * rng.uniform() : 0.10 + 0.22 * rng.uniform();
            const double val = 0.55 + 0.40 * rng.uniform();
            const Rgb col = hsv_to_rgb(hue, sat, val);
            const int y0 = gy * s.height / grid, y1 = (gy + 1) * s.height / grid;
            const int x0 = gx * s.width / grid, x1 = (gx + 1) * s.width / grid;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) put(img, s, y, x, col);
        }
    }
    return img;
}

}  // namespace

std::vector<std::string> WorldConfig::category_names() const {
    static const std::vector<std::string> base = {"blobs", "grids", "stripes", "glyphs", "patches"};
    std::vector<std::string> names;
    for (int c = 0; c < categories; ++c) {
        names.push_back(c == patches_category() ? base.back()
                                                : base[static_cast<std::size_t>(c) % (base.size() - 1)]);
    }
    return names;
}

Eigen::VectorXd render_category(const WorldConfig& cfg, int category, RandomStream& rng) {
    if (cfg.categories < 2 || cfg.categories > 5) {
        throw ConfigError("world: category count must be in [2, 5]");
    }
    if (cfg.shape.height < 12 || cfg.shape.width < 12) {
        throw ConfigError("world: images must be at least 12x12 for the renderers");
    }
    if (category < 0 || category >= cfg.categories) {
        throw ArgumentError("render_category: category out of range");
    }
    Eigen::VectorXd img;
    if (category == cfg.patches_category()) {
        img = render_patches(cfg.shape, rng);
    } else {
        switch (category) {
            case 0: img = render_blobs(cfg.shape, rng); break;
            case 1: img = render_grids(cfg.shape, rng); break;
            case 2: img = render_stripes(cfg.shape, rng); break;
            default: img = render_glyphs(cfg.shape, rng); break;
        }
    }
    return quantize_unit(img);
}

World make_world(const WorldConfig& cfg, std::uint64_t seed) {
    if (cfg.images < cfg.categories) throw ConfigError("world: need at least one image per category");
    World w;
    w.cfg = cfg;
    w.seed = seed;
    w.images.resize(static_cast<std::size_t>(cfg.images));
    w.category.resize(static_cast<std::size_t>(cfg.images));
    for (int i = 0; i < cfg.images; ++i) {
        const int cat = i % cfg.categories;  // balanced within +-1 by construction
        RandomStream rng(seed, "world-image", static_cast<std::uint64_t>(i));
        w.images[static_cast<std::size_t>(i)] = render_category(cfg, cat, rng);
        w.category[static_cast<std::size_t>(i)] = cat;
    }
    return w;
}

std::vector<std::vector<Eigen::VectorXd>> make_exemplars(const WorldConfig& cfg,
                                                         std::uint64_t seed) {
    std::vector<std::vector<Eigen::VectorXd>> ex(static_cast<std::size_t>(cfg.categories));
    for (int c = 0; c < cfg.categories; ++c) {
        for (int j = 0; j < cfg.exemplars_per_category; ++j) {
            RandomStream rng(seed, "world-exemplar",
                             static_cast<std::uint64_t>(c) * 1000 + static_cast<std::uint64_t>(j));
            ex[static_cast<std::size_t>(c)].push_back(render_category(cfg, c, rng));
        }
    }
    return ex;
}

void save_world(const std::filesystem::path& dir, const World& world) {
    std::filesystem::create_directories(dir / "images");
    char name[32];
    for (std::size_t i = 0; i < world.images.size(); ++i) {
        std::snprintf(name, sizeof(name), "img_%05zu.png", i);
        save_png(dir / "images" / name, world.images[i], world.cfg.shape);
    }
    json doc{{"format", "world-v1"},
             {"categories", world.cfg.categories},
             {"images", world.cfg.images},
             {"height", world.cfg.shape.height},
             {"width", world.cfg.shape.width},
             {"exemplars_per_category", world.cfg.exemplars_per_category},
             {"seed", world.seed},
             {"category_names", world.cfg.category_names()},
             {"category", world.category}};
    std::ofstream out(dir / "world.json", std::ios::trunc);
    if (!out) throw FormatError("save_world: cannot write " + (dir / "world.json").string());
    out << doc.dump(2) << "\n";
}

World load_world(const std::filesystem::path& dir) {
    std::ifstream in(dir / "world.json");
    if (!in) throw DependencyError("load_world: missing " + (dir / "world.json").string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("load_world: bad world.json: " + std::string(e.what()));
    }
    if (doc.value("format", "") != "world-v1") throw FormatError("load_world: unknown format");
    World w;
    w.cfg.categories = doc.at("categories").get<int>();
    w.cfg.images = doc.at("images").get<int>();
    w.cfg.shape = ImageShape{3, doc.at("height").get<int>(), doc.at("width").get<int>()};
    w.cfg.exemplars_per_category = doc.value("exemplars_per_category", 9);
    w.seed = doc.at("seed").get<std::uint64_t>();
    w.category = doc.at("category").get<std::vector<int>>();
    if (static_cast<int>(w.category.size()) != w.cfg.images) {
        throw FormatError("load_world: category list does not match image count");
    }
    w.images.resize(static_cast<std::size_t>(w.cfg.images));
    char name[32];
    for (std::size_t i = 0; i < w.images.size(); ++i) {
        std::snprintf(name, sizeof(name), "img_%05zu.png", i);
        ImageShape shape;
        w.images[i] = load_png(dir / "images" / name, &shape);
        if (!(shape == w.cfg.shape)) {
            throw FormatError("load_world: image " + std::to_string(i) + " has unexpected shape");
        }
    }
    return w;
}

double mean_saturation(const Eigen::VectorXd& image, const ImageShape& shape) {
    if (image.size() != shape.size()) throw ArgumentError("mean_saturation: size mismatch");
    double acc = 0.0;
    for (int y = 0; y < shape.height; ++y) {
        for (int x = 0; x < shape.width; ++x) {
            const double r = image[image_index(shape, 0, y, x)];
            const double g = image[image_index(shape, 1, y, x)];
            const double b = image[image_index(shape, 2, y, x)];
            const double hi = std::max({r, g, b});
            const double lo = std::min({r, g, b});
            acc += hi > 0.0 ? (hi - lo) / hi : 0.0;
        }
    }
    return acc / static_cast<double>(shape.pixel_count());
}

double mean_luminance(const Eigen::VectorXd& image, const ImageShape& shape) {
    if (image.size() != shape.size()) throw ArgumentError("mean_luminance: size mismatch");
    return image.mean();
}

}  // namespace dive
