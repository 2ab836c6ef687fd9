#include "dive/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dive/error.hpp"
#include "dive/rng.hpp"

namespace dive {

namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
}

void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) throw ConfigError(path + "." + it.key() + ": unknown key");
    }
}

template <typename T>
void read_field(const json& j, const std::string& path, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + "." + key + ": wrong type");
    }
}

void read_seed(const json& j, const std::string& path, const char* key, std::uint64_t& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_number_unsigned() && !v.is_number_integer()) {
        throw ConfigError(path + "." + key + ": expected an unsigned integer");
    }
    if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
        throw ConfigError(path + "." + key + ": must be non-negative");
    }
    out = v.get<std::uint64_t>();
}

void parse_world(const json& j, WorldConfig& out) {
    require_object(j, "world");
    reject_unknown(j, "world", {"categories", "images", "size", "exemplars_per_category"});
    read_field(j, "world", "categories", out.categories);
    read_field(j, "world", "images", out.images);
    int size = out.shape.height;
    read_field(j, "world", "size", size);
    out.shape = ImageShape{3, size, size};
    read_field(j, "world", "exemplars_per_category", out.exemplars_per_category);
}

void parse_subject(const json& j, SubjectSection& out) {
    require_object(j, "subject");
    reject_unknown(j, "subject",
                   {"voxels", "region_voxels", "kappa", "offrow_norm", "bias_sd", "noise_sd",
                    "session_offset_sd", "subclusters", "subcluster_angle_deg", "sessions",
                    "repeats", "t_threshold"});
    read_field(j, "subject", "voxels", out.cfg.voxels);
    read_field(j, "subject", "region_voxels", out.cfg.region_voxels);
    read_field(j, "subject", "kappa", out.cfg.kappa);
    read_field(j, "subject", "offrow_norm", out.cfg.offrow_norm);
    read_field(j, "subject", "bias_sd", out.cfg.bias_sd);
    read_field(j, "subject", "noise_sd", out.cfg.noise_sd);
    read_field(j, "subject", "session_offset_sd", out.cfg.session_offset_sd);
    read_field(j, "subject", "subclusters", out.cfg.subclusters);
    read_field(j, "subject", "subcluster_angle_deg", out.cfg.subcluster_angle_deg);
    read_field(j, "subject", "sessions", out.cfg.sessions);
    read_field(j, "subject", "repeats", out.cfg.repeats);
    read_field(j, "subject", "t_threshold", out.t_threshold);
}

void parse_autoencoder(const json& j, AutoencoderConfig& out) {
    require_object(j, "autoencoder");
    reject_unknown(j, "autoencoder", {"mode", "latent_dim", "min_component_sd"});
    std::string mode = out.mode == AutoencoderMode::Identity ? "identity" : "learned";
    read_field(j, "autoencoder", "mode", mode);
    if (mode == "identity") {
        out.mode = AutoencoderMode::Identity;
    } else if (mode == "learned") {
        out.mode = AutoencoderMode::Learned;
    } else {
        throw ConfigError("autoencoder.mode: expected \"identity\" or \"learned\", got \"" + mode +
                          "\"");
    }
    read_field(j, "autoencoder", "latent_dim", out.latent_dim);
    read_field(j, "autoencoder", "min_component_sd", out.min_component_sd);
}

void parse_diffusion(const json& j, DiffusionSection& out) {
    require_object(j, "diffusion");
    reject_unknown(j, "diffusion",
                   {"schedule", "steps", "beta_min", "beta_max", "cosine_s", "beta_clip", "hidden",
                    "time_embed_dim", "train_steps", "batch", "lr", "lr_final", "grad_clip"});
    read_field(j, "diffusion", "schedule", out.schedule);
    read_field(j, "diffusion", "steps", out.steps);
    read_field(j, "diffusion", "beta_min", out.params.beta_min);
    read_field(j, "diffusion", "beta_max", out.params.beta_max);
    read_field(j, "diffusion", "cosine_s", out.params.cosine_s);
    read_field(j, "diffusion", "beta_clip", out.params.beta_clip);
    read_field(j, "diffusion", "hidden", out.hidden);
    read_field(j, "diffusion", "time_embed_dim", out.time_embed_dim);
    read_field(j, "diffusion", "train_steps", out.train.steps);
    read_field(j, "diffusion", "batch", out.train.batch);
    read_field(j, "diffusion", "lr", out.train.lr);
    read_field(j, "diffusion", "lr_final", out.train.lr_final);
    read_field(j, "diffusion", "grad_clip", out.train.grad_clip);
}

void parse_encoder_fit(const json& j, EncoderSection& out) {
    require_object(j, "encoder_fit");
    reject_unknown(j, "encoder_fit",
                   {"lr_init", "lr_final", "epochs", "batch", "weight_decay", "holdout_fraction",
                    "augment"});
    read_field(j, "encoder_fit", "lr_init", out.fit.lr_init);
    read_field(j, "encoder_fit", "lr_final", out.fit.lr_final);
    read_field(j, "encoder_fit", "epochs", out.fit.epochs);
    read_field(j, "encoder_fit", "batch", out.fit.batch);
    read_field(j, "encoder_fit", "weight_decay", out.fit.weight_decay);
    read_field(j, "encoder_fit", "holdout_fraction", out.holdout_fraction);
    if (j.contains("augment")) {
        const json& a = j.at("augment");
        require_object(a, "encoder_fit.augment");
        reject_unknown(a, "encoder_fit.augment",
                       {"enabled", "scale_min", "scale_max", "max_offset", "noise_sd"});
        read_field(a, "encoder_fit.augment", "enabled", out.fit.augment.enabled);
        read_field(a, "encoder_fit.augment", "scale_min", out.fit.augment.scale_min);
        read_field(a, "encoder_fit.augment", "scale_max", out.fit.augment.scale_max);
        read_field(a, "encoder_fit.augment", "max_offset", out.fit.augment.max_offset);
        read_field(a, "encoder_fit.augment", "noise_sd", out.fit.augment.noise_sd);
    }
}

void parse_generate(const json& j, GenerateSection& out) {
    require_object(j, "generate");
    reject_unknown(j, "generate",
                   {"gamma", "calibrate", "target_ratio", "sample_steps", "eta", "trace_every",
                    "snapshot_chains", "samples_per_set", "unguided_samples"});
    read_field(j, "generate", "gamma", out.guidance.gamma);
    read_field(j, "generate", "calibrate", out.guidance.calibrate);
    read_field(j, "generate", "target_ratio", out.guidance.target_ratio);
    read_field(j, "generate", "sample_steps", out.guidance.sample_steps);
    read_field(j, "generate", "eta", out.guidance.eta);
    read_field(j, "generate", "trace_every", out.guidance.trace_every);
    read_field(j, "generate", "snapshot_chains", out.guidance.snapshot_chains);
    read_field(j, "generate", "samples_per_set", out.samples_per_set);
    read_field(j, "generate", "unguided_samples", out.unguided_samples);
}

void parse_clustering(const json& j, ClusterSection& out) {
    require_object(j, "clustering");
    reject_unknown(j, "clustering", {"k", "restarts", "max_iters", "voxel_set"});
    read_field(j, "clustering", "k", out.k);
    read_field(j, "clustering", "restarts", out.restarts);
    read_field(j, "clustering", "max_iters", out.max_iters);
    read_field(j, "clustering", "voxel_set", out.voxel_set);
}

void parse_evaluation(const json& j, EvalSection& out) {
    require_object(j, "evaluation");
    reject_unknown(j, "evaluation",
                   {"natural_percents", "guided_percents", "bootstrap_resamples",
                    "mean_prototypes"});
    read_field(j, "evaluation", "natural_percents", out.natural_percents);
    read_field(j, "evaluation", "guided_percents", out.guided_percents);
    read_field(j, "evaluation", "bootstrap_resamples", out.bootstrap_resamples);
    read_field(j, "evaluation", "mean_prototypes", out.mean_prototypes);
}

void check(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    require_object(j, "config");
    reject_unknown(j, "config",
                   {"seed", "threads", "out", "world", "subject", "autoencoder", "diffusion",
                    "encoder_fit", "generate", "clustering", "evaluation"});
    RunConfig cfg;
    read_seed(j, "config", "seed", cfg.seed);
    read_field(j, "config", "threads", cfg.threads);
    read_field(j, "config", "out", cfg.out);
    if (j.contains("world")) parse_world(j.at("world"), cfg.world);
    if (j.contains("subject")) parse_subject(j.at("subject"), cfg.subject);
    if (j.contains("autoencoder")) parse_autoencoder(j.at("autoencoder"), cfg.autoencoder);
    if (j.contains("diffusion")) parse_diffusion(j.at("diffusion"), cfg.diffusion);
    if (j.contains("encoder_fit")) parse_encoder_fit(j.at("encoder_fit"), cfg.encoder_fit);
    if (j.contains("generate")) parse_generate(j.at("generate"), cfg.generate);
    if (j.contains("clustering")) parse_clustering(j.at("clustering"), cfg.clustering);
    if (j.contains("evaluation")) parse_evaluation(j.at("evaluation"), cfg.evaluation);
    validate_config(cfg);
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string config_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["out"] = cfg.out;
    j["world"] = {{"categories", cfg.world.categories},
                  {"images", cfg.world.images},
                  {"size", cfg.world.shape.height},
                  {"exemplars_per_category", cfg.world.exemplars_per_category}};
    j["subject"] = {{"voxels", cfg.subject.cfg.voxels},
                    {"region_voxels", cfg.subject.cfg.region_voxels},
                    {"kappa", cfg.subject.cfg.kappa},
                    {"offrow_norm", cfg.subject.cfg.offrow_norm},
                    {"bias_sd", cfg.subject.cfg.bias_sd},
                    {"noise_sd", cfg.subject.cfg.noise_sd},
                    {"session_offset_sd", cfg.subject.cfg.session_offset_sd},
                    {"subclusters", cfg.subject.cfg.subclusters},
                    {"subcluster_angle_deg", cfg.subject.cfg.subcluster_angle_deg},
                    {"sessions", cfg.subject.cfg.sessions},
                    {"repeats", cfg.subject.cfg.repeats},
                    {"t_threshold", cfg.subject.t_threshold}};
    j["autoencoder"] = {
        {"mode", cfg.autoencoder.mode == AutoencoderMode::Identity ? "identity" : "learned"},
        {"latent_dim", cfg.autoencoder.latent_dim},
        {"min_component_sd", cfg.autoencoder.min_component_sd}};
    j["diffusion"] = {{"schedule", cfg.diffusion.schedule},
                      {"steps", cfg.diffusion.steps},
                      {"beta_min", cfg.diffusion.params.beta_min},
                      {"beta_max", cfg.diffusion.params.beta_max},
                      {"cosine_s", cfg.diffusion.params.cosine_s},
                      {"beta_clip", cfg.diffusion.params.beta_clip},
                      {"hidden", cfg.diffusion.hidden},
                      {"time_embed_dim", cfg.diffusion.time_embed_dim},
                      {"train_steps", cfg.diffusion.train.steps},
                      {"batch", cfg.diffusion.train.batch},
                      {"lr", cfg.diffusion.train.lr},
                      {"lr_final", cfg.diffusion.train.lr_final},
                      {"grad_clip", cfg.diffusion.train.grad_clip}};
    j["encoder_fit"] = {{"lr_init", cfg.encoder_fit.fit.lr_init},
                        {"lr_final", cfg.encoder_fit.fit.lr_final},
                        {"epochs", cfg.encoder_fit.fit.epochs},
                        {"batch", cfg.encoder_fit.fit.batch},
                        {"weight_decay", cfg.encoder_fit.fit.weight_decay},
                        {"holdout_fraction", cfg.encoder_fit.holdout_fraction},
                        {"augment",
                         {{"enabled", cfg.encoder_fit.fit.augment.enabled},
                          {"scale_min", cfg.encoder_fit.fit.augment.scale_min},
                          {"scale_max", cfg.encoder_fit.fit.augment.scale_max},
                          {"max_offset", cfg.encoder_fit.fit.augment.max_offset},
                          {"noise_sd", cfg.encoder_fit.fit.augment.noise_sd}}}};
    j["generate"] = {{"gamma", cfg.generate.guidance.gamma},
                     {"calibrate", cfg.generate.guidance.calibrate},
                     {"target_ratio", cfg.generate.guidance.target_ratio},
                     {"sample_steps", cfg.generate.guidance.sample_steps},
                     {"eta", cfg.generate.guidance.eta},
                     {"trace_every", cfg.generate.guidance.trace_every},
                     {"snapshot_chains", cfg.generate.guidance.snapshot_chains},
                     {"samples_per_set", cfg.generate.samples_per_set},
                     {"unguided_samples", cfg.generate.unguided_samples}};
    j["clustering"] = {{"k", cfg.clustering.k},
                       {"restarts", cfg.clustering.restarts},
                       {"max_iters", cfg.clustering.max_iters},
                       {"voxel_set", cfg.clustering.voxel_set}};
    j["evaluation"] = {{"natural_percents", cfg.evaluation.natural_percents},
                       {"guided_percents", cfg.evaluation.guided_percents},
                       {"bootstrap_resamples", cfg.evaluation.bootstrap_resamples},
                       {"mean_prototypes", cfg.evaluation.mean_prototypes}};
    return j.dump(2) + "\n";
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("config: cannot write " + path.string());
    out << config_json(cfg);
    if (!out) throw ConfigError("config: write failed for " + path.string());
}

std::uint64_t config_hash(const RunConfig& cfg) {
    // threads and the output path never change numerical results, so they are
    // excluded from the run's identity
    RunConfig canon = cfg;
    canon.threads = 1;
    canon.out = "out";
    return fnv1a64(config_json(canon));
}

void validate_config(const RunConfig& cfg) {
    check(cfg.threads >= 1, "threads: must be at least 1");
    check(!cfg.out.empty(), "out: must be non-empty");
    check(cfg.world.categories >= 2 && cfg.world.categories <= 5,
          "world.categories: must be in [2, 5]");
    check(cfg.world.images >= 1, "world.images: must be at least 1");
    check(cfg.world.shape.height >= 12, "world.size: must be at least 12");
    check(cfg.world.exemplars_per_category >= 1,
          "world.exemplars_per_category: must be at least 1");

    const SubjectConfig& s = cfg.subject.cfg;
    check(s.voxels >= 1, "subject.voxels: must be at least 1");
    check(s.region_voxels >= 2, "subject.region_voxels: must be at least 2");
    check(static_cast<long>(s.region_voxels) * cfg.world.categories <= s.voxels,
          "subject.region_voxels: regions exceed the voxel count");
    check(s.kappa > 0.0, "subject.kappa: must be positive");
    check(s.offrow_norm >= 0.0, "subject.offrow_norm: must be non-negative");
    check(s.bias_sd >= 0.0, "subject.bias_sd: must be non-negative");
    check(s.noise_sd >= 0.0, "subject.noise_sd: must be non-negative");
    check(s.session_offset_sd >= 0.0, "subject.session_offset_sd: must be non-negative");
    check(s.subclusters == 2, "subject.subclusters: only 2 is supported");
    check(s.subcluster_angle_deg > 0.0 && s.subcluster_angle_deg < 180.0,
          "subject.subcluster_angle_deg: must lie in (0, 180)");
    check(s.sessions >= 1, "subject.sessions: must be at least 1");
    check(s.repeats >= 1, "subject.repeats: must be at least 1");
    check(std::isfinite(cfg.subject.t_threshold), "subject.t_threshold: must be finite");

    check(cfg.autoencoder.latent_dim >= 1, "autoencoder.latent_dim: must be at least 1");
    check(cfg.autoencoder.min_component_sd > 0.0,
          "autoencoder.min_component_sd: must be positive");

    try {
        schedule_kind_from_string(cfg.diffusion.schedule);
    } catch (const Error& e) {
        throw ConfigError(std::string("diffusion.schedule: ") + e.what());
    }
    check(cfg.diffusion.steps >= 2, "diffusion.steps: must be at least 2");
    check(cfg.diffusion.params.beta_min > 0.0, "diffusion.beta_min: must be positive");
    check(cfg.diffusion.params.beta_max > cfg.diffusion.params.beta_min,
          "diffusion.beta_max: must exceed beta_min");
    check(cfg.diffusion.params.beta_max < 1.0, "diffusion.beta_max: must be below 1");
    check(cfg.diffusion.params.cosine_s > 0.0, "diffusion.cosine_s: must be positive");
    check(cfg.diffusion.params.beta_clip > 0.0 && cfg.diffusion.params.beta_clip < 1.0,
          "diffusion.beta_clip: must lie in (0, 1)");
    check(!cfg.diffusion.hidden.empty(), "diffusion.hidden: must be non-empty");
    for (int h : cfg.diffusion.hidden) check(h >= 1, "diffusion.hidden: widths must be positive");
    check(cfg.diffusion.time_embed_dim >= 2 && cfg.diffusion.time_embed_dim % 2 == 0,
          "diffusion.time_embed_dim: must be even and at least 2");
    check(cfg.diffusion.train.steps >= 0, "diffusion.train_steps: must be non-negative");
    check(cfg.diffusion.train.batch >= 1, "diffusion.batch: must be at least 1");
    check(cfg.diffusion.train.lr > 0.0, "diffusion.lr: must be positive");
    check(cfg.diffusion.train.lr_final > 0.0, "diffusion.lr_final: must be positive");
    check(cfg.diffusion.train.grad_clip >= 0.0, "diffusion.grad_clip: must be non-negative");

    const EncoderFitConfig& f = cfg.encoder_fit.fit;
    check(f.lr_init > 0.0, "encoder_fit.lr_init: must be positive");
    check(f.lr_final > 0.0 && f.lr_final <= f.lr_init,
          "encoder_fit.lr_final: must lie in (0, lr_init]");
    check(f.epochs >= 1, "encoder_fit.epochs: must be at least 1");
    check(f.batch >= 1, "encoder_fit.batch: must be at least 1");
    check(f.weight_decay >= 0.0, "encoder_fit.weight_decay: must be non-negative");
    check(cfg.encoder_fit.holdout_fraction > 0.0 && cfg.encoder_fit.holdout_fraction <= 0.9,
          "encoder_fit.holdout_fraction: must lie in (0, 0.9]");
    check(f.augment.scale_min > 0.0 && f.augment.scale_min <= f.augment.scale_max,
          "encoder_fit.augment.scale_min: must lie in (0, scale_max]");
    check(f.augment.noise_sd >= 0.0, "encoder_fit.augment.noise_sd: must be non-negative");

    const GuidanceConfig& g = cfg.generate.guidance;
    check(g.gamma >= 0.0, "generate.gamma: must be non-negative");
    check(g.target_ratio > 0.0, "generate.target_ratio: must be positive");
    check(g.sample_steps >= 1 && g.sample_steps <= cfg.diffusion.steps,
          "generate.sample_steps: must lie in [1, diffusion.steps]");
    check(g.eta >= 0.0 && g.eta <= 1.0, "generate.eta: must lie in [0, 1]");
    check(g.trace_every >= 0, "generate.trace_every: must be non-negative");
    check(g.snapshot_chains >= 0, "generate.snapshot_chains: must be non-negative");
    check(cfg.generate.samples_per_set >= 1, "generate.samples_per_set: must be at least 1");
    check(cfg.generate.unguided_samples >= 1, "generate.unguided_samples: must be at least 1");

    check(cfg.clustering.k >= 1, "clustering.k: must be at least 1");
    check(cfg.clustering.restarts >= 1, "clustering.restarts: must be at least 1");
    check(cfg.clustering.max_iters >= 1, "clustering.max_iters: must be at least 1");
    check(!cfg.clustering.voxel_set.empty(), "clustering.voxel_set: must be non-empty");

    check(!cfg.evaluation.natural_percents.empty(),
          "evaluation.natural_percents: must be non-empty");
    check(!cfg.evaluation.guided_percents.empty(), "evaluation.guided_percents: must be non-empty");
    for (double p : cfg.evaluation.natural_percents) {
        check(p > 0.0 && p <= 100.0, "evaluation.natural_percents: must lie in (0, 100]");
    }
    for (double p : cfg.evaluation.guided_percents) {
        check(p > 0.0 && p <= 100.0, "evaluation.guided_percents: must lie in (0, 100]");
    }
    check(cfg.evaluation.bootstrap_resamples >= 2,
          "evaluation.bootstrap_resamples: must be at least 2");
}

}  // namespace dive
