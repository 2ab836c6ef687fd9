#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <string>

#include "dive/config.hpp"
#include "dive/error.hpp"

using namespace dive;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "dive-config-tests";
    fs::create_directories(dir);
    return dir / name;
}

std::string thrown_message(const std::string& json_text) {
    try {
        parse_config(json_text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("parse_config fills defaults from an empty object") {
    const RunConfig cfg = parse_config("{}");
    CHECK(cfg.seed == 2026);
    CHECK(cfg.threads == 1);
    CHECK(cfg.out == "runs/default");
    CHECK(cfg.world.categories == 5);
    CHECK(cfg.diffusion.steps == 1000);
    CHECK(cfg.generate.guidance.gamma == 130.0);
    CHECK(cfg.clustering.k == 2);
}

TEST_CASE("unknown keys are rejected with their full path") {
    CHECK(thrown_message(R"({"bogus": 1})") == "config.bogus: unknown key");
    CHECK(thrown_message(R"({"world": {"palette": 3}})") == "world.palette: unknown key");
    CHECK(thrown_message(R"({"subject": {"voxel": 1}})") == "subject.voxel: unknown key");
    CHECK(thrown_message(R"({"autoencoder": {"depth": 2}})") == "autoencoder.depth: unknown key");
    CHECK(thrown_message(R"({"diffusion": {"betas": []}})") == "diffusion.betas: unknown key");
    CHECK(thrown_message(R"({"encoder_fit": {"lr": 0.1}})") == "encoder_fit.lr: unknown key");
    CHECK(thrown_message(R"({"encoder_fit": {"augment": {"flips": true}}})") ==
          "encoder_fit.augment.flips: unknown key");
    CHECK(thrown_message(R"({"generate": {"strength": 2}})") == "generate.strength: unknown key");
    CHECK(thrown_message(R"({"clustering": {"kmeans": 2}})") == "clustering.kmeans: unknown key");
    CHECK(thrown_message(R"({"evaluation": {"tiers": []}})") == "evaluation.tiers: unknown key");
}

TEST_CASE("wrong types and malformed JSON are named") {
    CHECK(thrown_message(R"({"threads": "four"})") == "config.threads: wrong type");
    CHECK(thrown_message(R"({"world": {"images": "many"}})") == "world.images: wrong type");
    CHECK(thrown_message(R"({"diffusion": {"hidden": 256}})") == "diffusion.hidden: wrong type");
    CHECK(thrown_message(R"({"world": 7})") == "world: expected an object");
    CHECK(thrown_message("{not json").find("invalid JSON") != std::string::npos);
    CHECK(thrown_message(R"({"seed": -3})") == "config.seed: must be non-negative");
    CHECK(thrown_message(R"({"seed": 1.5})") == "config.seed: expected an unsigned integer");
}

TEST_CASE("seed accepts the full unsigned 64-bit range") {
    const RunConfig cfg = parse_config(R"({"seed": 18446744073709551615})");
    CHECK(cfg.seed == UINT64_MAX);
}

TEST_CASE("canonical serialization round-trips") {
    const std::string overrides = R"({
        "seed": 7,
        "threads": 3,
        "out": "runs/x",
        "world": {"categories": 3, "images": 120, "size": 16},
        "subject": {"voxels": 80, "region_voxels": 12, "noise_sd": 0.05},
        "autoencoder": {"mode": "learned", "latent_dim": 40},
        "diffusion": {"schedule": "cosine", "steps": 250, "hidden": [64, 32], "train_steps": 10},
        "encoder_fit": {"epochs": 5, "augment": {"enabled": false, "noise_sd": 0.0}},
        "generate": {"gamma": 55.5, "calibrate": false, "sample_steps": 25},
        "clustering": {"k": 3, "voxel_set": "region-0"},
        "evaluation": {"natural_percents": [5.0], "bootstrap_resamples": 50}
    })";
    const RunConfig cfg = parse_config(overrides);
    CHECK(cfg.world.shape.height == 16);
    CHECK(cfg.autoencoder.mode == AutoencoderMode::Learned);
    CHECK(cfg.diffusion.hidden == std::vector<int>{64, 32});
    CHECK(cfg.encoder_fit.fit.augment.enabled == false);

    const std::string canon = config_json(cfg);
    const RunConfig again = parse_config(canon);
    CHECK(config_json(again) == canon);
    CHECK(config_hash(again) == config_hash(cfg));
}

TEST_CASE("config_hash ignores threads and out but nothing else") {
    RunConfig base;
    RunConfig moved = base;
    moved.threads = 8;
    moved.out = "elsewhere/run";
    CHECK(config_hash(moved) == config_hash(base));

    RunConfig reseeded = base;
    reseeded.seed = 3;
    CHECK(config_hash(reseeded) != config_hash(base));

    RunConfig retuned = base;
    retuned.generate.guidance.gamma = 131.0;
    CHECK(config_hash(retuned) != config_hash(base));

    RunConfig renoised = base;
    renoised.subject.cfg.noise_sd = 0.2;
    CHECK(config_hash(renoised) != config_hash(base));
}

TEST_CASE("validate_config enforces cross-field constraints") {
    CHECK_NOTHROW(validate_config(RunConfig{}));

    RunConfig cfg;
    cfg.world.categories = 6;
    CHECK_THROWS_AS(validate_config(cfg), ConfigError);

    cfg = RunConfig{};
    cfg.subject.cfg.voxels = 100;  // 5 regions of 100 voxels no longer fit
    CHECK_THROWS_AS(validate_config(cfg), ConfigError);

    cfg = RunConfig{};
    cfg.generate.guidance.sample_steps = cfg.diffusion.steps + 1;
    CHECK_THROWS_AS(validate_config(cfg), ConfigError);

    cfg = RunConfig{};
    cfg.subject.cfg.subclusters = 3;
    CHECK_THROWS_AS(validate_config(cfg), ConfigError);

    cfg = RunConfig{};
    cfg.encoder_fit.fit.lr_final = cfg.encoder_fit.fit.lr_init * 2.0;
    CHECK_THROWS_AS(validate_config(cfg), ConfigError);

    cfg = RunConfig{};
    cfg.evaluation.guided_percents = {0.0};
    CHECK_THROWS_AS(validate_config(cfg), ConfigError);

    CHECK(thrown_message(R"({"diffusion": {"schedule": "banana"}})").find("diffusion.schedule") == 0);
    CHECK(thrown_message(R"({"autoencoder": {"mode": "frozen"}})").find("autoencoder.mode") == 0);
}

TEST_CASE("save_config and load_config round-trip through a file") {
    RunConfig cfg;
    cfg.seed = 99;
    cfg.world.images = 64;
    const fs::path path = temp_file("roundtrip.json");
    save_config(cfg, path);
    const RunConfig loaded = load_config(path);
    CHECK(config_json(loaded) == config_json(cfg));
    CHECK(loaded.seed == 99);

    CHECK_THROWS_AS(load_config(temp_file("missing.json")), ConfigError);
}
