#include "dive/manifest.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dive/error.hpp"
#include "dive/rng.hpp"

namespace dive {

using nlohmann::json;

std::string hash_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string file_hash_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("file_hash_hex: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return hash_hex(fnv1a64(buf.str()));
}

RunManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("manifest: cannot open " + path.string());
    json j;
    try {
        std::ostringstream buf;
        buf << in.rdbuf();
        j = json::parse(buf.str());
    } catch (const json::exception& e) {
        throw FormatError("manifest: invalid JSON in " + path.string() + ": " + e.what());
    }
    RunManifest m;
    try {
        m.tool_version = j.at("tool_version").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("stages")) {
            for (auto it = j.at("stages").begin(); it != j.at("stages").end(); ++it) {
                StageRecord rec;
                const json& s = it.value();
                rec.completed_at = s.value("completed_at", std::string());
                rec.duration_s = s.value("duration_s", 0.0);
                if (s.contains("outputs")) {
                    for (auto o = s.at("outputs").begin(); o != s.at("outputs").end(); ++o) {
                        rec.outputs[o.key()] = o.value().get<std::string>();
                    }
                }
                if (s.contains("numbers")) {
                    for (auto n = s.at("numbers").begin(); n != s.at("numbers").end(); ++n) {
                        rec.numbers[n.key()] = n.value().get<double>();
                    }
                }
                m.stages[it.key()] = std::move(rec);
            }
        }
    } catch (const json::exception& e) {
        throw FormatError("manifest: bad field in " + path.string() + ": " + e.what());
    }
    return m;
}

void save_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
    json j;
    j["tool_version"] = manifest.tool_version;
    j["config_hash"] = manifest.config_hash;
    j["seed"] = manifest.seed;
    json stages = json::object();
    for (const auto& [name, rec] : manifest.stages) {
        json s;
        s["completed_at"] = rec.completed_at;
        s["duration_s"] = rec.duration_s;
        s["outputs"] = json::object();
        for (const auto& [rel, hash] : rec.outputs) s["outputs"][rel] = hash;
        s["numbers"] = json::object();
        for (const auto& [key, value] : rec.numbers) s["numbers"][key] = value;
        stages[name] = std::move(s);
    }
    j["stages"] = std::move(stages);

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("manifest: cannot write " + tmp.string());
        out << j.dump(2) << "\n";
        if (!out) throw Error("manifest: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

DirLock::DirLock(const std::filesystem::path& dir) : path_(dir / "dive.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        throw Error("output directory is locked by " + path_.string() +
                    "; remove the file if no other run is active");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    const ssize_t written = ::write(fd, pid.data(), pid.size());
    ::close(fd);
    if (written != static_cast<ssize_t>(pid.size())) {
        std::filesystem::remove(path_);
        throw Error("could not write lock file " + path_.string());
    }
}

DirLock::~DirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
}

}  // namespace dive
