#include "dive/features.hpp"

#include <cmath>

namespace dive {

namespace {

// smoothed derivative pair, scaled so responses stay O(1) on unit-range data
constexpr double kSobelX[3][3] = {{-0.25, 0.0, 0.25}, {-0.5, 0.0, 0.5}, {-0.25, 0.0, 0.25}};
constexpr double kSobelY[3][3] = {{-0.25, -0.5, -0.25}, {0.0, 0.0, 0.0}, {0.25, 0.5, 0.25}};

constexpr double kInvSqrt2 = 0.70710678118654752440;

// default reference colors for the soft histogram
const double kDefaultColors[12][3] = {
    {0.0, 0.0, 0.0},   {1.0, 1.0, 1.0},  {0.5, 0.5, 0.5},   {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},   {0.0, 0.0, 1.0},  {1.0, 1.0, 0.0},   {0.0, 1.0, 1.0},
    {1.0, 0.0, 1.0},   {1.0, 0.5, 0.0},  {0.45, 0.3, 0.15}, {1.0, 0.7, 0.75},
};

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace

FeatureExtractor::FeatureExtractor(FeatureExtractorConfig cfg) : cfg_(cfg) {
    if (cfg_.shape.channels != 3) throw ArgumentError("feature extractor: expected 3 channels");
    if (cfg_.shape.height < 3 || cfg_.shape.width < 3) {
        throw ArgumentError("feature extractor: image must be at least 3x3");
    }
    if (cfg_.pool_grid < 1 || cfg_.pool_grid > cfg_.shape.height ||
        cfg_.pool_grid > cfg_.shape.width) {
        throw ArgumentError("feature extractor: pool grid does not fit image");
    }
    if (cfg_.color_prototypes < 1 || cfg_.color_prototypes > 12) {
        throw ArgumentError("feature extractor: color prototype count must be in [1, 12]");
    }
    if (!(cfg_.color_sigma > 0.0)) throw ArgumentError("feature extractor: color sigma must be positive");

    protos_.resize(cfg_.color_prototypes, 3);
    for (int j = 0; j < cfg_.color_prototypes; ++j)
        for (int c = 0; c < 3; ++c) protos_(j, c) = kDefaultColors[j][c];

    const int g = cfg_.pool_grid;
    cell_of_y_.resize(static_cast<std::size_t>(cfg_.shape.height));
    cell_of_x_.resize(static_cast<std::size_t>(cfg_.shape.width));
    for (int y = 0; y < cfg_.shape.height; ++y)
        cell_of_y_[static_cast<std::size_t>(y)] = static_cast<int>(static_cast<long>(y) * g / cfg_.shape.height);
    for (int x = 0; x < cfg_.shape.width; ++x)
        cell_of_x_[static_cast<std::size_t>(x)] = static_cast<int>(static_cast<long>(x) * g / cfg_.shape.width);
    cell_count_.assign(static_cast<std::size_t>(g) * g, 0);
    for (int y = 0; y < cfg_.shape.height; ++y)
        for (int x = 0; x < cfg_.shape.width; ++x)
            ++cell_count_[static_cast<std::size_t>(cell_of_y_[static_cast<std::size_t>(y)] * g +
                                                   cell_of_x_[static_cast<std::size_t>(x)])];
}

std::string FeatureExtractor::id() const {
    return "pooled-color-gradient-v1:" + std::to_string(cfg_.shape.channels) + "x" +
           std::to_string(cfg_.shape.height) + "x" + std::to_string(cfg_.shape.width) +
           ":g=" + std::to_string(cfg_.pool_grid) + ":P=" + std::to_string(cfg_.color_prototypes) +
           ":sigma=" + std::to_string(cfg_.color_sigma);
}

namespace {

struct Fields {
    Eigen::MatrixXd lum, o1, o2;  // H x W scalar fields
};

Fields make_fields(const Eigen::VectorXd& img, const ImageShape& s) {
    Fields f;
    f.lum.resize(s.height, s.width);
    f.o1.resize(s.height, s.width);
    f.o2.resize(s.height, s.width);
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            const double r = img[image_index(s, 0, y, x)];
            const double g = img[image_index(s, 1, y, x)];
            const double b = img[image_index(s, 2, y, x)];
            f.lum(y, x) = (r + g + b) / 3.0;
            f.o1(y, x) = r - g;
            f.o2(y, x) = 0.5 * (r + g) - b;
        }
    }
    return f;
}

// replicate-padded smoothed gradients of a scalar field
void sobel(const Eigen::MatrixXd& F, Eigen::MatrixXd& gx, Eigen::MatrixXd& gy) {
    const int H = static_cast<int>(F.rows());
    const int W = static_cast<int>(F.cols());
    gx.resize(H, W);
    gy.resize(H, W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double sx = 0.0, sy = 0.0;
            for (int dy = -1; dy <= 1; ++dy) {
                const int cy = clampi(y + dy, 0, H - 1);
                for (int dx = -1; dx <= 1; ++dx) {
                    const int cx = clampi(x + dx, 0, W - 1);
                    const double v = F(cy, cx);
                    sx += kSobelX[dy + 1][dx + 1] * v;
                    sy += kSobelY[dy + 1][dx + 1] * v;
                }
            }
            gx(y, x) = sx;
            gy(y, x) = sy;
        }
    }
}

// adjoint of `sobel`: scatter cotangents dgx, dgy back onto the field
void sobel_adjoint(const Eigen::MatrixXd& dgx, const Eigen::MatrixXd& dgy, Eigen::MatrixXd& dF) {
    const int H = static_cast<int>(dgx.rows());
    const int W = static_cast<int>(dgx.cols());
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double ax = dgx(y, x);
            const double ay = dgy(y, x);
            if (ax == 0.0 && ay == 0.0) continue;
            for (int dy = -1; dy <= 1; ++dy) {
                const int cy = clampi(y + dy, 0, H - 1);
                for (int dx = -1; dx <= 1; ++dx) {
                    const int cx = clampi(x + dx, 0, W - 1);
                    dF(cy, cx) += kSobelX[dy + 1][dx + 1] * ax + kSobelY[dy + 1][dx + 1] * ay;
                }
            }
        }
    }
}

// orientation responses from the gradient pair
inline void orient4(double gx, double gy, double out[4]) {
    out[0] = gx;
    out[1] = gy;
    out[2] = (gx + gy) * kInvSqrt2;
    out[3] = (gx - gy) * kInvSqrt2;
}

}  // namespace

Eigen::VectorXd FeatureExtractor::extract(const Eigen::VectorXd& image) const {
    const ImageShape& s = cfg_.shape;
    if (image.size() != s.size()) {
        throw ArgumentError("feature extractor: image has " + std::to_string(image.size()) +
                            " values, expected " + std::to_string(s.size()));
    }
    const int g = cfg_.pool_grid;
    const int g2 = g * g;
    const int P = cfg_.color_prototypes;
    const long npix = s.pixel_count();
    const double sigma2 = cfg_.color_sigma * cfg_.color_sigma;

    Eigen::VectorXd f = Eigen::VectorXd::Zero(dim());
    const int ofs_mean = 0;
    const int ofs_sq = 3 * g2;
    const int ofs_rbf = 6 * g2;
    const int ofs_lum = ofs_rbf + P;
    const int ofs_opp = ofs_lum + 4 * g2;
    const int ofs_glob = ofs_opp + 8;

    // pooled channel stats + color RBF + global color stats
    for (int y = 0; y < s.height; ++y) {
        const int cy = cell_of_y_[static_cast<std::size_t>(y)];
        for (int x = 0; x < s.width; ++x) {
            const int cell = cy * g + cell_of_x_[static_cast<std::size_t>(x)];
            const double r = image[image_index(s, 0, y, x)];
            const double gc = image[image_index(s, 1, y, x)];
            const double b = image[image_index(s, 2, y, x)];
            const double ch[3] = {r, gc, b};
            for (int c = 0; c < 3; ++c) {
                f[ofs_mean + c * g2 + cell] += ch[c];
                f[ofs_sq + c * g2 + cell] += ch[c] * ch[c];
            }
            for (int j = 0; j < P; ++j) {
                const double dr = r - protos_(j, 0);
                const double dg = gc - protos_(j, 1);
                const double db = b - protos_(j, 2);
                f[ofs_rbf + j] += std::exp(-(dr * dr + dg * dg + db * db) / (2.0 * sigma2));
            }
            const double lum = (r + gc + b) / 3.0;
            f[ofs_glob + 0] += lum;
            f[ofs_glob + 1] += lum * lum;
            f[ofs_glob + 2] += r - gc;
            f[ofs_glob + 3] += 0.5 * (r + gc) - b;
        }
    }
    for (int c = 0; c < 3; ++c) {
        for (int cell = 0; cell < g2; ++cell) {
            const double n = static_cast<double>(cell_count_[static_cast<std::size_t>(cell)]);
            f[ofs_mean + c * g2 + cell] /= n;
            f[ofs_sq + c * g2 + cell] /= n;
        }
    }
    for (int j = 0; j < P; ++j) f[ofs_rbf + j] /= static_cast<double>(npix);
    for (int k = 0; k < 4; ++k) f[ofs_glob + k] /= static_cast<double>(npix);

    // oriented gradient energies
    const Fields fields = make_fields(image, s);
    Eigen::MatrixXd gx, gy;
    sobel(fields.lum, gx, gy);
    for (int y = 0; y < s.height; ++y) {
        const int cy = cell_of_y_[static_cast<std::size_t>(y)];
        for (int x = 0; x < s.width; ++x) {
            const int cell = cy * g + cell_of_x_[static_cast<std::size_t>(x)];
            double resp[4];
            orient4(gx(y, x), gy(y, x), resp);
            for (int o = 0; o < 4; ++o) f[ofs_lum + o * g2 + cell] += resp[o] * resp[o];
        }
    }
    for (int o = 0; o < 4; ++o)
        for (int cell = 0; cell < g2; ++cell)
            f[ofs_lum + o * g2 + cell] /= static_cast<double>(cell_count_[static_cast<std::size_t>(cell)]);

    const Eigen::MatrixXd* opp[2] = {&fields.o1, &fields.o2};
    for (int ch = 0; ch < 2; ++ch) {
        sobel(*opp[ch], gx, gy);
        for (int y = 0; y < s.height; ++y) {
            for (int x = 0; x < s.width; ++x) {
                double resp[4];
                orient4(gx(y, x), gy(y, x), resp);
                for (int o = 0; o < 4; ++o) f[ofs_opp + ch * 4 + o] += resp[o] * resp[o];
            }
        }
    }
    for (int k = 0; k < 8; ++k) f[ofs_opp + k] /= static_cast<double>(npix);

    return f;
}

Eigen::VectorXd FeatureExtractor::extract_vjp(const Eigen::VectorXd& image,
                                              const Eigen::VectorXd& grad_features) const {
    const ImageShape& s = cfg_.shape;
    if (image.size() != s.size()) throw ArgumentError("extract_vjp: image size mismatch");
    if (grad_features.size() != dim()) throw ArgumentError("extract_vjp: cotangent size mismatch");

    const int g = cfg_.pool_grid;
    const int g2 = g * g;
    const int P = cfg_.color_prototypes;
    const long npix = s.pixel_count();
    const double sigma2 = cfg_.color_sigma * cfg_.color_sigma;

    const int ofs_mean = 0;
    const int ofs_sq = 3 * g2;
    const int ofs_rbf = 6 * g2;
    const int ofs_lum = ofs_rbf + P;
    const int ofs_opp = ofs_lum + 4 * g2;
    const int ofs_glob = ofs_opp + 8;

    Eigen::VectorXd gimg = Eigen::VectorXd::Zero(s.size());
    Eigen::MatrixXd glum = Eigen::MatrixXd::Zero(s.height, s.width);
    Eigen::MatrixXd go1 = Eigen::MatrixXd::Zero(s.height, s.width);
    Eigen::MatrixXd go2 = Eigen::MatrixXd::Zero(s.height, s.width);

    // direct pixel-statistics terms
    for (int y = 0; y < s.height; ++y) {
        const int cy = cell_of_y_[static_cast<std::size_t>(y)];
        for (int x = 0; x < s.width; ++x) {
            const int cell = cy * g + cell_of_x_[static_cast<std::size_t>(x)];
            const double n = static_cast<double>(cell_count_[static_cast<std::size_t>(cell)]);
            const double r = image[image_index(s, 0, y, x)];
            const double gc = image[image_index(s, 1, y, x)];
            const double b = image[image_index(s, 2, y, x)];
            const double ch[3] = {r, gc, b};
            for (int c = 0; c < 3; ++c) {
                double d = grad_features[ofs_mean + c * g2 + cell] / n;
                d += grad_features[ofs_sq + c * g2 + cell] * 2.0 * ch[c] / n;
                gimg[image_index(s, c, y, x)] += d;
            }
            for (int j = 0; j < P; ++j) {
                const double dr = r - protos_(j, 0);
                const double dg = gc - protos_(j, 1);
                const double db = b - protos_(j, 2);
                const double e = std::exp(-(dr * dr + dg * dg + db * db) / (2.0 * sigma2));
                const double w = grad_features[ofs_rbf + j] * e / (static_cast<double>(npix) * sigma2);
                gimg[image_index(s, 0, y, x)] -= w * dr;
                gimg[image_index(s, 1, y, x)] -= w * dg;
                gimg[image_index(s, 2, y, x)] -= w * db;
            }
            const double lum = (r + gc + b) / 3.0;
            glum(y, x) += grad_features[ofs_glob + 0] / static_cast<double>(npix);
            glum(y, x) += grad_features[ofs_glob + 1] * 2.0 * lum / static_cast<double>(npix);
            go1(y, x) += grad_features[ofs_glob + 2] / static_cast<double>(npix);
            go2(y, x) += grad_features[ofs_glob + 3] / static_cast<double>(npix);
        }
    }

    // gradient-energy terms, pulled back through orientations and the kernels
    const Fields fields = make_fields(image, s);
    Eigen::MatrixXd gx, gy, dgx(s.height, s.width), dgy(s.height, s.width);

    sobel(fields.lum, gx, gy);
    dgx.setZero();
    dgy.setZero();
    for (int y = 0; y < s.height; ++y) {
        const int cy = cell_of_y_[static_cast<std::size_t>(y)];
        for (int x = 0; x < s.width; ++x) {
            const int cell = cy * g + cell_of_x_[static_cast<std::size_t>(x)];
            const double n = static_cast<double>(cell_count_[static_cast<std::size_t>(cell)]);
            double resp[4];
            orient4(gx(y, x), gy(y, x), resp);
            double ax = 0.0, ay = 0.0;
            for (int o = 0; o < 4; ++o) {
                const double d = grad_features[ofs_lum + o * g2 + cell] * 2.0 * resp[o] / n;
                switch (o) {
                    case 0: ax += d; break;
                    case 1: ay += d; break;
                    case 2: ax += d * kInvSqrt2; ay += d * kInvSqrt2; break;
                    default: ax += d * kInvSqrt2; ay -= d * kInvSqrt2; break;
                }
            }
            dgx(y, x) = ax;
            dgy(y, x) = ay;
        }
    }
    sobel_adjoint(dgx, dgy, glum);

    const Eigen::MatrixXd* opp[2] = {&fields.o1, &fields.o2};
    Eigen::MatrixXd* gopp[2] = {&go1, &go2};
    for (int ch = 0; ch < 2; ++ch) {
        sobel(*opp[ch], gx, gy);
        dgx.setZero();
        dgy.setZero();
        for (int y = 0; y < s.height; ++y) {
            for (int x = 0; x < s.width; ++x) {
                double resp[4];
                orient4(gx(y, x), gy(y, x), resp);
                double ax = 0.0, ay = 0.0;
                for (int o = 0; o < 4; ++o) {
                    const double d =
                        grad_features[ofs_opp + ch * 4 + o] * 2.0 * resp[o] / static_cast<double>(npix);
                    switch (o) {
                        case 0: ax += d; break;
                        case 1: ay += d; break;
                        case 2: ax += d * kInvSqrt2; ay += d * kInvSqrt2; break;
                        default: ax += d * kInvSqrt2; ay -= d * kInvSqrt2; break;
                    }
                }
                dgx(y, x) = ax;
                dgy(y, x) = ay;
            }
        }
        sobel_adjoint(dgx, dgy, *gopp[ch]);
    }

    // scalar fields back to RGB
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) {
            const double dl = glum(y, x) / 3.0;
            const double d1 = go1(y, x);
            const double d2 = go2(y, x);
            gimg[image_index(s, 0, y, x)] += dl + d1 + 0.5 * d2;
            gimg[image_index(s, 1, y, x)] += dl - d1 + 0.5 * d2;
            gimg[image_index(s, 2, y, x)] += dl - d2;
        }
    }
    return gimg;
}

void FeatureExtractor::save_to(Checkpoint& cp, const std::string& prefix) const {
    Eigen::VectorXd meta(5);
    meta << cfg_.shape.height, cfg_.shape.width, cfg_.pool_grid, cfg_.color_prototypes,
        cfg_.color_sigma;
    cp.add(prefix + "meta", TensorData::from_vector(meta));
    cp.add(prefix + "prototype_colors", TensorData::from_matrix(protos_));
}

FeatureExtractor FeatureExtractor::load_from(const Checkpoint& cp, const std::string& prefix) {
    const Eigen::VectorXd meta = cp.vector(prefix + "meta");
    if (meta.size() != 5) throw FormatError("feature extractor: bad meta tensor");
    FeatureExtractorConfig cfg;
    cfg.shape = ImageShape{3, static_cast<int>(meta[0]), static_cast<int>(meta[1])};
    cfg.pool_grid = static_cast<int>(meta[2]);
    cfg.color_prototypes = static_cast<int>(meta[3]);
    cfg.color_sigma = meta[4];
    FeatureExtractor fx(cfg);
    const Eigen::MatrixXd protos = cp.matrix(prefix + "prototype_colors");
    if (protos.rows() != fx.protos_.rows() || protos.cols() != 3) {
        throw FormatError("feature extractor: prototype color table shape mismatch");
    }
    fx.protos_ = protos;
    return fx;
}

Eigen::VectorXd normalize_embedding(const Eigen::VectorXd& v, double floor) {
    const double n = v.norm();
    if (!(n >= floor)) {
        throw DegenerateEmbeddingError("embedding norm " + std::to_string(n) +
                                       " below floor " + std::to_string(floor));
    }
    return v / n;
}

Eigen::MatrixXd embed_images(const FeatureExtractor& fx,
                             const std::vector<Eigen::VectorXd>& images) {
    Eigen::MatrixXd U(fx.dim(), static_cast<Eigen::Index>(images.size()));
    for (std::size_t i = 0; i < images.size(); ++i) {
        try {
            U.col(static_cast<Eigen::Index>(i)) = normalize_embedding(fx.extract(images[i]));
        } catch (const DegenerateEmbeddingError& e) {
            throw DegenerateEmbeddingError(std::string(e.what()) + " (image " + std::to_string(i) + ")");
        }
    }
    return U;
}

}  // namespace dive
