#include "dive/rng.hpp"

#include <cmath>
#include <vector>

#include "dive/error.hpp"

namespace dive {

namespace {

constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;  // golden ratio
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;  // sqrt(3) - 1
constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;

inline void philox_round(std::array<std::uint32_t, 4>& ctr, const std::array<std::uint32_t, 2>& key) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

inline std::array<std::uint32_t, 4> philox10(std::array<std::uint32_t, 4> ctr,
                                             std::array<std::uint32_t, 2> key) {
    for (int r = 0; r < 10; ++r) {
        philox_round(ctr, key);
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

std::uint64_t hash64(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    std::uint64_t h = fnv1a64(tag);
    h = splitmix64(h ^ splitmix64(seed));
    h = splitmix64(h ^ splitmix64(index ^ 0xA5A5A5A5A5A5A5A5ull));
    return h;
}

RandomStream::RandomStream(std::uint64_t seed, std::string_view tag, std::uint64_t index)
    : counter_{{0, 0, 0, 0}},
      block_pos_(4),
      have_cached_normal_(false),
      cached_normal_(0.0) {
    const std::uint64_t k = hash64(seed, tag, index);
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

void RandomStream::refill() {
    block_ = philox10(counter_, key_);
    // 128-bit counter increment
    for (int i = 0; i < 4; ++i) {
        if (++counter_[i] != 0) break;
    }
    block_pos_ = 0;
}

std::uint32_t RandomStream::next_u32() {
    if (block_pos_ >= 4) refill();
    return block_[block_pos_++];
}

std::uint64_t RandomStream::next_u64() {
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
}

double RandomStream::uniform() {
    // 53-bit mantissa from one u64
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform_pos() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

std::int64_t RandomStream::uniform_int(std::int64_t n) {
    if (n <= 0) throw ArgumentError("uniform_int: n must be positive");
    // rejection to avoid modulo bias
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return static_cast<std::int64_t>(v % un);
}

double RandomStream::normal() {
    if (have_cached_normal_) {
        have_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(theta);
    have_cached_normal_ = true;
    return r * std::cos(theta);
}

void RandomStream::fill_normal(Eigen::Ref<Eigen::VectorXd> out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal();
}

Eigen::VectorXd RandomStream::normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    fill_normal(v);
    return v;
}

double RandomStream::gamma(double shape) {
    if (shape <= 0.0) throw ArgumentError("gamma: shape must be positive");
    if (shape < 1.0) {
        // boost to shape+1, then scale back
        const double u = uniform_pos();
        return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform_pos();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double RandomStream::beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
}

Eigen::VectorXd sample_vmf(const Eigen::VectorXd& mu, double kappa, RandomStream& rng) {
    const Eigen::Index d = mu.size();
    if (d < 2) throw ArgumentError("sample_vmf: dimension must be at least 2");
    if (kappa < 0.0) throw ArgumentError("sample_vmf: kappa must be non-negative");
    const double mu_norm = mu.norm();
    if (std::abs(mu_norm - 1.0) > 1e-6) {
        throw ArgumentError("sample_vmf: mean direction must be unit norm");
    }

    double w;
    if (kappa == 0.0) {
        // uniform on the sphere: cosine has density prop. to (1-w^2)^((d-3)/2)
        w = 2.0 * rng.beta(0.5 * (d - 1), 0.5 * (d - 1)) - 1.0;
    } else {
        const double dm1 = static_cast<double>(d - 1);
        const double bb = (-2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1)) / dm1;
        const double x0 = (1.0 - bb) / (1.0 + bb);
        const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);
        for (;;) {
            const double z = rng.beta(0.5 * dm1, 0.5 * dm1);
            const double u = rng.uniform_pos();
            w = (1.0 - (1.0 + bb) * z) / (1.0 - (1.0 - bb) * z);
            if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
        }
    }

    // uniform tangent direction orthogonal to mu
    Eigen::VectorXd t = rng.normal_vector(d);
    t -= mu * mu.dot(t);
    double tn = t.norm();
    while (tn < 1e-12) {  // astronomically unlikely; redraw to stay well-defined
        t = rng.normal_vector(d);
        t -= mu * mu.dot(t);
        tn = t.norm();
    }
    t /= tn;
    return w * mu + std::sqrt(std::max(0.0, 1.0 - w * w)) * t;
}

std::vector<int> shuffled_indices(int n, RandomStream& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng.uniform_int(i + 1));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    return idx;
}

}  // namespace dive
