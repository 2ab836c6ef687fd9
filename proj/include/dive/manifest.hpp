#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace dive {

// Per-stage record inside the run manifest. Output hashes are FNV-1a64 of the
// file bytes, hex-encoded; `numbers` carries stage scalars such as the
// calibrated guidance scale or held-out fit quality.
struct StageRecord {
    std::string completed_at;  // UTC, informational only
    double duration_s = 0.0;
    std::map<std::string, std::string> outputs;  // out-dir-relative path -> hash
    std::map<std::string, double> numbers;
};

struct RunManifest {
    std::string tool_version;
    std::string config_hash;  // hex of config_hash(RunConfig)
    std::uint64_t seed = 0;
    std::map<std::string, StageRecord> stages;
};

std::string hash_hex(std::uint64_t value);
std::string file_hash_hex(const std::filesystem::path& path);

RunManifest load_manifest(const std::filesystem::path& path);
// Writes to a temp file in the same directory, then renames into place.
void save_manifest(const RunManifest& manifest, const std::filesystem::path& path);

// Single-writer guard for an output directory: creates `dive.lock` exclusively,
// removes it on destruction. A pre-existing lock fails fast and names the file.
class DirLock {
  public:
    explicit DirLock(const std::filesystem::path& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    std::filesystem::path path_;
};

}  // namespace dive
