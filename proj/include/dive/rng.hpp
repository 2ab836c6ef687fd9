#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dive {

// Philox4x32-10 counter-based generator. Streams are cheap to construct and
// independent by key, so every parallel unit of work (chain, presentation,
// epoch x image, ...) gets its own stream derived from (seed, tag, index).
// That makes results independent of thread count and schedule.
class RandomStream {
  public:
    RandomStream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    // Uniform on [0, 1).
    double uniform();
    // Uniform on (0, 1]; used where log(u) must stay finite.
    double uniform_pos();
    // Uniform integer on [0, n), n > 0.
    std::int64_t uniform_int(std::int64_t n);

    // Standard normal via Box-Muller (second draw cached).
    double normal();
    void fill_normal(Eigen::Ref<Eigen::VectorXd> out);
    Eigen::VectorXd normal_vector(Eigen::Index n);

    // Gamma(shape, 1), shape > 0. Marsaglia-Tsang squeeze.
    double gamma(double shape);
    // Beta(a, b) via two gammas.
    double beta(double a, double b);

  private:
    void refill();

    std::array<std::uint32_t, 4> counter_;
    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> block_;
    int block_pos_;
    bool have_cached_normal_;
    double cached_normal_;
};

// 64-bit key derivation used for stream keying and config hashing.
std::uint64_t hash64(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);
std::uint64_t fnv1a64(std::string_view bytes);

// Draw from a von Mises-Fisher distribution with mean direction mu (unit norm)
// and concentration kappa >= 0 (kappa == 0 gives the uniform sphere).
// Wood's rejection sampler for the cosine, uniform tangent for the rest.
Eigen::VectorXd sample_vmf(const Eigen::VectorXd& mu, double kappa, RandomStream& rng);

// Fisher-Yates shuffle of 0..n-1.
std::vector<int> shuffled_indices(int n, RandomStream& rng);

}  // namespace dive
