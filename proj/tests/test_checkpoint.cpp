#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dive/checkpoint.hpp"
#include "dive/rng.hpp"

using namespace dive;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "dive-checkpoint-tests";
    fs::create_directories(dir);
    return dir / name;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint sample_checkpoint() {
    RandomStream rng(99, "checkpoint");
    Checkpoint cp;
    Eigen::MatrixXd m(3, 5);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 5; ++c) m(r, c) = rng.normal();
    cp.add("weights", TensorData::from_matrix(m));
    cp.add("weights32", TensorData::from_matrix(m, Dtype::F32));
    cp.add("bias", TensorData::from_vector(rng.normal_vector(7)));
    cp.add("scale", TensorData::from_scalar(0.1234567890123456789));
    cp.add("labels", TensorData::from_ints({3, 1, 4, 1, 5}));
    return cp;
}

}  // namespace

TEST_CASE("save then load round-trips bit-exactly") {
    const auto path = temp_file("roundtrip.ckpt");
    const Checkpoint cp = sample_checkpoint();
    cp.save(path);
    const Checkpoint back = Checkpoint::load(path);

    REQUIRE(back.names() == cp.names());
    for (const auto& name : cp.names()) {
        const TensorData& a = cp.get(name);
        const TensorData& b = back.get(name);
        CHECK(a.dtype == b.dtype);
        CHECK(a.shape == b.shape);
        CHECK(a.f64 == b.f64);  // bitwise: vector equality on doubles
        CHECK(a.f32 == b.f32);
    }
    CHECK(back.matrix("weights") == cp.matrix("weights"));
    CHECK(back.vector("bias") == cp.vector("bias"));
    CHECK(back.scalar("scale") == 0.1234567890123456789);
    CHECK(back.ints("labels") == std::vector<int>{3, 1, 4, 1, 5});

    // a second save is byte-identical
    const auto path2 = temp_file("roundtrip2.ckpt");
    back.save(path2);
    CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("names keep insertion order") {
    Checkpoint cp;
    cp.add("zeta", TensorData::from_scalar(1.0));
    cp.add("alpha", TensorData::from_scalar(2.0));
    cp.add("mid", TensorData::from_scalar(3.0));
    CHECK(cp.names() == std::vector<std::string>{"zeta", "alpha", "mid"});

    const auto path = temp_file("order.ckpt");
    cp.save(path);
    CHECK(Checkpoint::load(path).names() == std::vector<std::string>{"zeta", "alpha", "mid"});
}

TEST_CASE("duplicate and malformed additions are rejected") {
    Checkpoint cp;
    cp.add("x", TensorData::from_scalar(1.0));
    CHECK_THROWS_AS(cp.add("x", TensorData::from_scalar(2.0)), ArgumentError);
    CHECK_THROWS_AS(cp.add("", TensorData::from_scalar(2.0)), ArgumentError);

    TensorData bad;
    bad.dtype = Dtype::F64;
    bad.shape = {4};
    bad.f64 = {1.0, 2.0};  // size disagrees with shape
    CHECK_THROWS_AS(cp.add("bad", std::move(bad)), ArgumentError);

    CHECK_THROWS_AS(cp.get("missing"), FormatError);
    CHECK(!cp.has("missing"));
    CHECK(cp.has("x"));
}

TEST_CASE("bad magic is rejected") {
    const auto path = temp_file("magic.ckpt");
    sample_checkpoint().save(path);
    std::string bytes = read_bytes(path);
    bytes[0] = 'X';
    write_bytes(path, bytes);
    CHECK_THROWS_AS(Checkpoint::load(path), FormatError);
}

TEST_CASE("version mismatch names both versions") {
    const auto path = temp_file("version.ckpt");
    sample_checkpoint().save(path);
    std::string bytes = read_bytes(path);
    bytes[4] = 99;  // little-endian u32 version field
    write_bytes(path, bytes);
    try {
        Checkpoint::load(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("version 99") != std::string::npos);
        CHECK(msg.find("version 1") != std::string::npos);
    }
}

TEST_CASE("truncated files never load partially") {
    const auto full = temp_file("full.ckpt");
    sample_checkpoint().save(full);
    const std::string bytes = read_bytes(full);

    const auto path = temp_file("truncated.ckpt");
    // cut at several depths: inside magic, header fields, header JSON, payload
    for (std::size_t keep : {2ul, 6ul, 12ul, 40ul, bytes.size() - 9, bytes.size() - 1}) {
        write_bytes(path, bytes.substr(0, keep));
        CHECK_THROWS_AS(Checkpoint::load(path), FormatError);
    }
}

TEST_CASE("overlapping tensor offsets are rejected") {
    const auto path = temp_file("overlap.ckpt");
    const std::string header =
        R"({"entries":[)"
        R"({"name":"a","dtype":"f64","shape":[2],"offset":0,"bytes":16},)"
        R"({"name":"b","dtype":"f64","shape":[2],"offset":8,"bytes":16}]})";
    std::string bytes = "DIVE";
    const std::uint32_t ver = kCheckpointFormatVersion;
    bytes.append(reinterpret_cast<const char*>(&ver), 4);
    const std::uint64_t hlen = header.size();
    bytes.append(reinterpret_cast<const char*>(&hlen), 8);
    bytes += header;
    bytes.append(24, '\0');
    write_bytes(path, bytes);
    try {
        Checkpoint::load(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("overlap") != std::string::npos);
    }
}

TEST_CASE("f32 storage quantizes doubles once and round-trips stably") {
    Checkpoint cp;
    Eigen::VectorXd v(3);
    v << 0.1, 0.2, 0.3;
    cp.add("v", TensorData::from_vector(v, Dtype::F32));
    const auto path = temp_file("f32.ckpt");
    cp.save(path);
    const Eigen::VectorXd back = Checkpoint::load(path).vector("v");
    for (int i = 0; i < 3; ++i) {
        CHECK(back[i] == static_cast<double>(static_cast<float>(v[i])));
    }
}
