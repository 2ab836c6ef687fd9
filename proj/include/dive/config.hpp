#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dive/autoencoder.hpp"
#include "dive/denoiser.hpp"
#include "dive/encoder.hpp"
#include "dive/guidance.hpp"
#include "dive/schedule.hpp"
#include "dive/subject.hpp"
#include "dive/world.hpp"

namespace dive {

// Diffusion section: schedule plus model shape plus training knobs.
struct DiffusionSection {
    std::string schedule = "linear-beta";
    int steps = 1000;
    ScheduleParams params;
    std::vector<int> hidden{256, 256};
    int time_embed_dim = 16;
    DenoiserTrainConfig train;
};

struct EncoderSection {
    EncoderFitConfig fit;
    double holdout_fraction = 0.2;  // of the averaged images, split off for R2
};

struct SubjectSection {
    SubjectConfig cfg;
    double t_threshold = 2.0;  // category-vs-rest selection cutoff
};

struct GenerateSection {
    GuidanceConfig guidance;
    int samples_per_set = 100;
    int unguided_samples = 100;
};

struct ClusterSection {
    int k = 2;
    int restarts = 10;
    int max_iters = 100;
    std::string voxel_set = "region-patches";
};

struct EvalSection {
    std::vector<double> natural_percents{1.0, 2.0};  // of the corpus, by recorded betas
    std::vector<double> guided_percents{10.0, 20.0}; // of the guided batch, self-ranked
    int bootstrap_resamples = 1000;
    bool mean_prototypes = false;
};

struct RunConfig {
    std::uint64_t seed = 2026;
    int threads = 1;
    std::string out = "runs/default";
    WorldConfig world;
    SubjectSection subject;
    AutoencoderConfig autoencoder;
    DiffusionSection diffusion;
    EncoderSection encoder_fit;
    GenerateSection generate;
    ClusterSection clustering;
    EvalSection evaluation;
};

// Parse with unknown-key rejection; every error names the offending key path.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical serialization (sorted keys, every field explicit). Hash and
// round-trip both run over this form.
std::string config_json(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);
// Run identity: hash of the canonical form with threads and the output path
// neutralized (neither changes any numerical output).
std::uint64_t config_hash(const RunConfig& cfg);

// Cross-section validation run before any stage does work.
void validate_config(const RunConfig& cfg);

}  // namespace dive
