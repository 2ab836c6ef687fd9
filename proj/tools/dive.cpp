#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "dive/config.hpp"
#include "dive/error.hpp"
#include "dive/pipeline.hpp"
#include "dive/version.hpp"

namespace {

// exit codes: 0 ok, 2 config, 3 validation/dependency, 4 runtime
constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kValidationError = 3;
constexpr int kRuntimeError = 4;

int resolve_threads_from_env() {
    const char* env = std::getenv("DIVE_THREADS");
    if (!env || !*env) return 0;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (!end || *end != '\0' || v < 1) {
        throw dive::ConfigError(std::string("DIVE_THREADS: expected a positive integer, got \"") +
                                env + "\"");
    }
    return static_cast<int>(v);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"brain-guided diffusion laboratory: synthetic world, simulated subject, "
                 "encoder-guided image generation, and its evaluation"};
    app.set_version_flag("--version", std::string(dive::kVersion));
    app.require_subcommand(1);

    std::string config_path, out_dir, voxel_set;
    std::uint64_t seed = 0;
    int threads = 0, k = 0, tier = 0;
    double gamma = 0.0;

    auto* opt_config = app.add_option("--config", config_path, "run config JSON");
    auto* opt_seed = app.add_option("--seed", seed, "global seed override");
    auto* opt_threads = app.add_option("--threads", threads, "worker thread count");
    auto* opt_out = app.add_option("--out", out_dir, "output directory override");

    const struct {
        const char* name;
        const char* help;
    } stages[] = {
        {"world-gen", "render the procedural image corpus"},
        {"subject-sim", "plant the subject, record sessions, select voxel sets"},
        {"fit-encoder", "fit the voxel-wise linear head on recorded betas"},
        {"train-ae", "fit the latent autoencoder on the corpus"},
        {"train-diffusion", "train the latent denoiser"},
        {"generate", "sample guided + unguided images per voxel set"},
        {"cluster", "spherical k-means of normalized encoder rows"},
        {"rank", "rank corpus and generated images per region"},
        {"evaluate", "specificity, guidance effect, and contrast reports"},
        {"report", "aggregate the evaluation into CSV + SVG"},
    };
    CLI::Option *opt_gamma = nullptr, *opt_set_gen = nullptr, *opt_set_cluster = nullptr,
                *opt_k = nullptr, *opt_tier = nullptr;
    for (const auto& s : stages) {
        auto* sub = app.add_subcommand(s.name, s.help);
        sub->fallthrough();  // global flags may follow the subcommand
        const std::string name(s.name);
        if (name == "generate") {
            opt_gamma = sub->add_option("--gamma", gamma,
                                        "fixed guidance scale (disables calibration)");
            opt_set_gen = sub->add_option("--voxel-set", voxel_set, "generate for this set only");
        } else if (name == "cluster") {
            opt_set_cluster = sub->add_option("--voxel-set", voxel_set, "cluster this set");
            opt_k = sub->add_option("--k", k, "cluster count override");
        } else if (name == "evaluate") {
            opt_tier = sub->add_option("--tier", tier, "extra specificity tier (image count)");
        }
    }
    app.add_subcommand("all", "run every stage in order")->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        dive::RunConfig cfg;
        if (opt_config->count() > 0) cfg = dive::load_config(config_path);
        if (opt_seed->count() > 0) cfg.seed = seed;
        if (opt_threads->count() > 0) {
            cfg.threads = threads;
        } else if (const int env_threads = resolve_threads_from_env(); env_threads > 0) {
            cfg.threads = env_threads;
        }
        if (opt_out->count() > 0) cfg.out = out_dir;

        dive::StageOverrides ov;
        if (opt_gamma && opt_gamma->count() > 0) ov.gamma = gamma;
        if ((opt_set_gen && opt_set_gen->count() > 0) ||
            (opt_set_cluster && opt_set_cluster->count() > 0)) {
            ov.voxel_set = voxel_set;
        }
        if (opt_k && opt_k->count() > 0) ov.k = k;
        if (opt_tier && opt_tier->count() > 0) ov.tier = tier;

        const std::string chosen = app.get_subcommands().front()->get_name();
        if (chosen == "all") {
            for (const auto& name : dive::stage_names()) {
                std::printf("[%s] running...\n", name.c_str());
                std::fflush(stdout);
                dive::run_stage(cfg, name, ov);
                std::printf("[%s] done\n", name.c_str());
            }
        } else {
            dive::run_stage(cfg, chosen, ov);
            std::printf("[%s] done\n", chosen.c_str());
        }
        return kOk;
    } catch (const dive::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigError;
    } catch (const dive::DependencyError& e) {
        std::fprintf(stderr, "dependency error: %s\n", e.what());
        return kValidationError;
    } catch (const dive::ArgumentError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kValidationError;
    } catch (const dive::FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return kValidationError;
    } catch (const dive::ScheduleError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kValidationError;
    } catch (const dive::EmptyInputError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kValidationError;
    } catch (const dive::DegenerateEmbeddingError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kValidationError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntimeError;
    }
}
