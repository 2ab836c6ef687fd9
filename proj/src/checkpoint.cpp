#include "dive/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace dive {

using nlohmann::json;

long TensorData::element_count() const {
    long n = 1;
    for (long d : shape) {
        if (d < 0) throw FormatError("tensor shape has negative dimension");
        n *= d;
    }
    return n;
}

TensorData TensorData::from_matrix(const Eigen::MatrixXd& m, Dtype dtype) {
    TensorData t;
    t.dtype = dtype;
    t.shape = {static_cast<long>(m.rows()), static_cast<long>(m.cols())};
    const long n = t.element_count();
    if (dtype == Dtype::F64) {
        t.f64.resize(static_cast<std::size_t>(n));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                t.f64[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    } else {
        t.f32.resize(static_cast<std::size_t>(n));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                t.f32[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
    }
    return t;
}

TensorData TensorData::from_vector(const Eigen::VectorXd& v, Dtype dtype) {
    TensorData t;
    t.dtype = dtype;
    t.shape = {static_cast<long>(v.size())};
    if (dtype == Dtype::F64) {
        t.f64.assign(v.data(), v.data() + v.size());
    } else {
        t.f32.resize(static_cast<std::size_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) t.f32[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    }
    return t;
}

TensorData TensorData::from_scalar(double x) {
    TensorData t;
    t.dtype = Dtype::F64;
    t.shape = {};
    t.f64 = {x};
    return t;
}

TensorData TensorData::from_ints(const std::vector<int>& v) {
    TensorData t;
    t.dtype = Dtype::F64;
    t.shape = {static_cast<long>(v.size())};
    t.f64.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) t.f64[i] = static_cast<double>(v[i]);
    return t;
}

Eigen::MatrixXd TensorData::as_matrix() const {
    if (shape.size() != 2) throw FormatError("tensor is not rank 2");
    Eigen::MatrixXd m(shape[0], shape[1]);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const auto i = static_cast<std::size_t>(r * m.cols() + c);
            m(r, c) = dtype == Dtype::F64 ? f64[i] : static_cast<double>(f32[i]);
        }
    return m;
}

Eigen::VectorXd TensorData::as_vector() const {
    if (shape.size() != 1) throw FormatError("tensor is not rank 1");
    Eigen::VectorXd v(shape[0]);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        v[i] = dtype == Dtype::F64 ? f64[k] : static_cast<double>(f32[k]);
    }
    return v;
}

double TensorData::as_scalar() const {
    if (element_count() != 1) throw FormatError("tensor is not a scalar");
    return dtype == Dtype::F64 ? f64[0] : static_cast<double>(f32[0]);
}

std::vector<int> TensorData::as_ints() const {
    if (shape.size() != 1) throw FormatError("tensor is not rank 1");
    std::vector<int> v(static_cast<std::size_t>(shape[0]));
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = dtype == Dtype::F64 ? f64[i] : static_cast<double>(f32[i]);
        v[i] = static_cast<int>(std::lround(x));
    }
    return v;
}

void Checkpoint::add(const std::string& name, TensorData tensor) {
    if (name.empty()) throw ArgumentError("checkpoint: tensor name may not be empty");
    if (tensors_.count(name)) throw ArgumentError("checkpoint: duplicate tensor name " + name);
    const long n = tensor.element_count();
    const std::size_t have = tensor.dtype == Dtype::F64 ? tensor.f64.size() : tensor.f32.size();
    if (have != static_cast<std::size_t>(n)) {
        throw ArgumentError("checkpoint: tensor " + name + " data size does not match shape");
    }
    tensors_.emplace(name, std::move(tensor));
    order_.push_back(name);
}

bool Checkpoint::has(const std::string& name) const { return tensors_.count(name) > 0; }

const TensorData& Checkpoint::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw FormatError("checkpoint: missing tensor " + name);
    return it->second;
}

namespace {

std::size_t dtype_bytes(Dtype d) { return d == Dtype::F64 ? 8 : 4; }

const char* dtype_name(Dtype d) { return d == Dtype::F64 ? "f64" : "f32"; }

Dtype dtype_from_name(const std::string& s) {
    if (s == "f64") return Dtype::F64;
    if (s == "f32") return Dtype::F32;
    throw FormatError("checkpoint: unknown dtype " + s);
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
    json entries = json::array();
    std::uint64_t offset = 0;
    for (const auto& name : order_) {
        const TensorData& t = tensors_.at(name);
        const std::uint64_t bytes = static_cast<std::uint64_t>(t.element_count()) * dtype_bytes(t.dtype);
        entries.push_back({{"name", name},
                           {"dtype", dtype_name(t.dtype)},
                           {"shape", t.shape},
                           {"offset", offset},
                           {"bytes", bytes}});
        offset += bytes;
    }
    const std::string header = json{{"entries", entries}}.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
    out.write("DIVE", 4);
    const std::uint32_t ver = kCheckpointFormatVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const std::uint64_t hlen = header.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& name : order_) {
        const TensorData& t = tensors_.at(name);
        if (t.dtype == Dtype::F64) {
            out.write(reinterpret_cast<const char*>(t.f64.data()),
                      static_cast<std::streamsize>(t.f64.size() * 8));
        } else {
            out.write(reinterpret_cast<const char*>(t.f32.data()),
                      static_cast<std::streamsize>(t.f32.size() * 4));
        }
    }
    if (!out) throw FormatError("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DIVE", 4) != 0) {
        throw FormatError("checkpoint: bad magic in " + path.string());
    }
    std::uint32_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (!in) throw FormatError("checkpoint: truncated header in " + path.string());
    if (ver != kCheckpointFormatVersion) {
        throw FormatError("checkpoint: format version " + std::to_string(ver) + " in " +
                          path.string() + "; this build reads version " +
                          std::to_string(kCheckpointFormatVersion) +
                          " (regenerate the artifact or use a matching build)");
    }
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in) throw FormatError("checkpoint: truncated header in " + path.string());
    if (hlen > (1ull << 30)) throw FormatError("checkpoint: implausible header length");
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw FormatError("checkpoint: truncated header in " + path.string());

    json doc;
    try {
        doc = json::parse(header);
    } catch (const json::exception& e) {
        throw FormatError("checkpoint: header parse error in " + path.string() + ": " + e.what());
    }
    if (!doc.contains("entries") || !doc["entries"].is_array()) {
        throw FormatError("checkpoint: header missing entries array");
    }

    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Checkpoint cp;
    std::uint64_t max_end = 0;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
    for (const auto& e : doc["entries"]) {
        TensorData t;
        const std::string name = e.at("name").get<std::string>();
        t.dtype = dtype_from_name(e.at("dtype").get<std::string>());
        t.shape = e.at("shape").get<std::vector<long>>();
        const auto offset = e.at("offset").get<std::uint64_t>();
        const auto bytes = e.at("bytes").get<std::uint64_t>();
        const std::uint64_t expect = static_cast<std::uint64_t>(t.element_count()) * dtype_bytes(t.dtype);
        if (bytes != expect) throw FormatError("checkpoint: tensor " + name + " byte count mismatch");
        if (offset + bytes > payload.size()) {
            throw FormatError("checkpoint: tensor " + name + " extends past end of file (truncated?)");
        }
        for (const auto& [so, se] : spans) {
            if (offset < se && so < offset + bytes) {
                throw FormatError("checkpoint: tensor " + name + " overlaps another tensor");
            }
        }
        spans.emplace_back(offset, offset + bytes);
        max_end = std::max(max_end, offset + bytes);
        const long n = t.element_count();
        if (t.dtype == Dtype::F64) {
            t.f64.resize(static_cast<std::size_t>(n));
            std::memcpy(t.f64.data(), payload.data() + offset, bytes);
        } else {
            t.f32.resize(static_cast<std::size_t>(n));
            std::memcpy(t.f32.data(), payload.data() + offset, bytes);
        }
        cp.add(name, std::move(t));
    }
    if (max_end != payload.size()) {
        throw FormatError("checkpoint: payload size " + std::to_string(payload.size()) +
                          " does not match header total " + std::to_string(max_end));
    }
    return cp;
}

}  // namespace dive
