#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dive/error.hpp"

namespace dive {

// Single-file tensor container: magic "DIVE", u32 format version, u64 header
// length, JSON header listing (name, dtype, shape, offset), then a raw
// little-endian payload. Round-trips are bit-exact.

constexpr std::uint32_t kCheckpointFormatVersion = 1;

enum class Dtype { F32, F64 };

struct TensorData {
    Dtype dtype = Dtype::F64;
    std::vector<long> shape;
    std::vector<float> f32;
    std::vector<double> f64;

    long element_count() const;

    // Matrices are stored row-major regardless of Eigen's in-memory order.
    static TensorData from_matrix(const Eigen::MatrixXd& m, Dtype dtype = Dtype::F64);
    static TensorData from_vector(const Eigen::VectorXd& v, Dtype dtype = Dtype::F64);
    static TensorData from_scalar(double x);
    static TensorData from_ints(const std::vector<int>& v);

    Eigen::MatrixXd as_matrix() const;
    Eigen::VectorXd as_vector() const;
    double as_scalar() const;
    std::vector<int> as_ints() const;
};

class Checkpoint {
  public:
    void add(const std::string& name, TensorData tensor);
    bool has(const std::string& name) const;
    const TensorData& get(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }

    // Convenience: require + typed access.
    Eigen::MatrixXd matrix(const std::string& name) const { return get(name).as_matrix(); }
    Eigen::VectorXd vector(const std::string& name) const { return get(name).as_vector(); }
    double scalar(const std::string& name) const { return get(name).as_scalar(); }
    std::vector<int> ints(const std::string& name) const { return get(name).as_ints(); }

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

  private:
    std::map<std::string, TensorData> tensors_;
    std::vector<std::string> order_;
};

}  // namespace dive
