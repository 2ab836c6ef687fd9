#include "dive/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dive/autoencoder.hpp"
#include "dive/checkpoint.hpp"
#include "dive/cluster.hpp"
#include "dive/denoiser.hpp"
#include "dive/encoder.hpp"
#include "dive/error.hpp"
#include "dive/evaluate.hpp"
#include "dive/guidance.hpp"
#include "dive/image.hpp"
#include "dive/manifest.hpp"
#include "dive/rng.hpp"
#include "dive/schedule.hpp"
#include "dive/subject.hpp"
#include "dive/svg.hpp"
#include "dive/version.hpp"
#include "dive/world.hpp"

namespace dive {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string now_utc() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string dir_hash_hex(const fs::path& dir) {
    std::vector<std::string> rels;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            rels.push_back(fs::relative(entry.path(), dir).generic_string());
        }
    }
    std::sort(rels.begin(), rels.end());
    std::string acc;
    for (const auto& rel : rels) acc += rel + ":" + file_hash_hex(dir / rel) + "\n";
    return hash_hex(fnv1a64(acc));
}

// Stage workspace: the run directory plus the record being assembled.
struct Ctx {
    const RunConfig& cfg;
    const StageOverrides& ov;
    fs::path out;
    StageRecord rec;

    fs::path p(const std::string& rel) const { return out / rel; }

    void need(const std::string& rel, const std::string& producer) const {
        if (!fs::exists(p(rel))) {
            throw DependencyError("missing " + p(rel).string() + "; run `" + producer +
                                  "` first");
        }
    }

    void output_file(const std::string& rel) { rec.outputs[rel] = file_hash_hex(p(rel)); }
    void output_dir(const std::string& rel) { rec.outputs[rel + "/"] = dir_hash_hex(p(rel)); }
};

FeatureExtractor make_extractor(const RunConfig& cfg) {
    FeatureExtractorConfig fc;
    fc.shape = cfg.world.shape;
    return FeatureExtractor(fc);
}

NoiseSchedule make_schedule(const RunConfig& cfg) {
    NoiseSchedule s = build_schedule(cfg.diffusion.steps,
                                     schedule_kind_from_string(cfg.diffusion.schedule),
                                     cfg.diffusion.params);
    check_endpoints(s);
    return s;
}

Eigen::MatrixXd corpus_matrix(const World& world) {
    if (world.images.empty()) throw EmptyInputError("world has no images");
    Eigen::MatrixXd X(world.images[0].size(), static_cast<Eigen::Index>(world.images.size()));
    for (std::size_t i = 0; i < world.images.size(); ++i) {
        X.col(static_cast<Eigen::Index>(i)) = world.images[i];
    }
    return X;
}

std::vector<Eigen::VectorXd> load_png_dir(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png" &&
            entry.path().filename().string().rfind("img_", 0) == 0) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DependencyError("no images under " + dir.string());
    std::vector<Eigen::VectorXd> images;
    images.reserve(files.size());
    for (const auto& f : files) images.push_back(load_png(f));
    return images;
}

void save_image_batch(const fs::path& dir, const Eigen::MatrixXd& X, const ImageShape& shape) {
    fs::create_directories(dir);
    char name[32];
    for (Eigen::Index i = 0; i < X.cols(); ++i) {
        std::snprintf(name, sizeof(name), "img_%04d.png", static_cast<int>(i));
        save_png(dir / name, X.col(i), shape);
    }
}

std::ofstream open_csv(const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

// Rows of a CSV written by this tool: comment lines skipped, header returned
// separately.
std::vector<std::vector<std::string>> read_csv(const fs::path& path,
                                               std::vector<std::string>* header = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ls(line);
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (!have_header) {
            have_header = true;
            if (header) *header = fields;
            continue;
        }
        rows.push_back(std::move(fields));
    }
    return rows;
}

GroundTruthSubject load_subject(const Ctx& ctx) {
    ctx.need("subject.ckpt", "subject-sim");
    const Checkpoint cp = Checkpoint::load(ctx.p("subject.ckpt"));
    return GroundTruthSubject::load_from(cp);
}

EncoderHead load_head(const Ctx& ctx) {
    ctx.need("encoder.ckpt", "fit-encoder");
    const Checkpoint cp = Checkpoint::load(ctx.p("encoder.ckpt"));
    return EncoderHead::load_from(cp);
}

Autoencoder load_ae(const Ctx& ctx) {
    ctx.need("ae.ckpt", "train-ae");
    const Checkpoint cp = Checkpoint::load(ctx.p("ae.ckpt"));
    return Autoencoder::load_from(cp);
}

DenoiserModel load_denoiser(const Ctx& ctx) {
    ctx.need("denoiser.ckpt", "train-diffusion");
    const Checkpoint cp = Checkpoint::load(ctx.p("denoiser.ckpt"));
    return DenoiserModel::load_from(cp);
}

double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- stages

void stage_world_gen(Ctx& ctx) {
    const World world = make_world(ctx.cfg.world, ctx.cfg.seed);
    save_world(ctx.p("world"), world);
    ctx.output_dir("world");
    ctx.rec.numbers["images"] = static_cast<double>(world.images.size());
}

void stage_subject_sim(Ctx& ctx) {
    ctx.need("world", "world-gen");
    const World world = load_world(ctx.p("world"));
    const FeatureExtractor fx = make_extractor(ctx.cfg);
    const SubjectConfig& sc = ctx.cfg.subject.cfg;
    const GroundTruthSubject subject = make_subject(world, fx, sc, ctx.cfg.seed);

    SubjectDataset ds = simulate_recordings(subject, world, fx, sc.sessions, sc.repeats,
                                            ctx.cfg.seed, ctx.cfg.threads);
    normalize_sessions(ds);
    const std::vector<int> flagged = ds.flagged_voxels();
    average_repeats(ds);

    Checkpoint cp;
    subject.save_to(cp);
    cp.save(ctx.p("subject.ckpt"));
    save_dataset(ctx.p("betas"), ds, world.category);

    const std::vector<std::string> names = ctx.cfg.world.category_names();
    std::map<std::string, VoxelSet> sets;
    for (int c = 0; c < ctx.cfg.world.categories; ++c) {
        const Eigen::VectorXd t = compute_tstats(ds, world.category, c);
        VoxelSet s = select_voxels(t, ctx.cfg.subject.t_threshold, nullptr, &flagged,
                                   "t>" + fmt(ctx.cfg.subject.t_threshold) + " " + names[c] +
                                       " vs rest");
        sets["region-" + names[c]] = std::move(s);
    }

    // planted sub-clusters, restricted to the voxels the t-threshold selected
    const std::string patches_set = "region-" + names[static_cast<std::size_t>(
                                                    ctx.cfg.world.patches_category())];
    const VoxelSet& selected = sets.at(patches_set);
    const char* sub_names[2] = {"subcluster-vivid", "subcluster-muted"};
    for (int sub = 0; sub < 2; ++sub) {
        const VoxelSet planted = subject.subcluster_voxels(sub);
        VoxelSet inter;
        for (int v : selected.indices) {
            if (std::find(planted.indices.begin(), planted.indices.end(), v) !=
                planted.indices.end()) {
                inter.indices.push_back(v);
            }
        }
        inter.provenance = std::string(sub_names[sub]) + " = planted sub-cluster " +
                           std::to_string(sub) + " within " + patches_set;
        sets[sub_names[sub]] = std::move(inter);
    }
    save_voxel_sets(ctx.p("voxel_sets.json"), sets);

    ctx.output_file("subject.ckpt");
    ctx.output_dir("betas");
    ctx.output_file("voxel_sets.json");
    ctx.rec.numbers["flagged_voxels"] = static_cast<double>(flagged.size());
    for (const auto& [name, s] : sets) {
        ctx.rec.numbers["set_size:" + name] = static_cast<double>(s.size());
    }
}

void stage_train_ae(Ctx& ctx) {
    ctx.need("world", "world-gen");
    const World world = load_world(ctx.p("world"));
    const Eigen::MatrixXd X = corpus_matrix(world);
    const Autoencoder ae = ctx.cfg.autoencoder.mode == AutoencoderMode::Identity
                               ? Autoencoder::identity(X.rows())
                               : Autoencoder::fit(X, ctx.cfg.autoencoder);
    Checkpoint cp;
    ae.save_to(cp);
    cp.save(ctx.p("ae.ckpt"));
    ctx.output_file("ae.ckpt");
    ctx.rec.numbers["latent_dim"] = static_cast<double>(ae.latent_dim());
    ctx.rec.numbers["reconstruction_mse"] = ae.reconstruction_mse(X);
}

void stage_train_diffusion(Ctx& ctx) {
    ctx.need("world", "world-gen");
    const World world = load_world(ctx.p("world"));
    const Autoencoder ae = load_ae(ctx);
    const Eigen::MatrixXd Z = ae.encode_batch(corpus_matrix(world));
    const NoiseSchedule schedule = make_schedule(ctx.cfg);

    DenoiserConfig dc;
    dc.data_dim = Z.rows();
    dc.hidden = ctx.cfg.diffusion.hidden;
    dc.time_embed_dim = ctx.cfg.diffusion.time_embed_dim;
    DenoiserTrainConfig tc = ctx.cfg.diffusion.train;
    tc.seed = ctx.cfg.seed;

    DenoiserTrainResult result;
    const DenoiserModel model = train_denoiser(Z, schedule, dc, tc, &result);
    Checkpoint cp;
    model.save_to(cp);
    cp.save(ctx.p("denoiser.ckpt"));
    ctx.output_file("denoiser.ckpt");

    if (!result.loss_history.empty()) {
        const std::size_t tail = std::min<std::size_t>(100, result.loss_history.size());
        double mean = 0.0;
        for (std::size_t i = result.loss_history.size() - tail; i < result.loss_history.size();
             ++i) {
            mean += result.loss_history[i];
        }
        ctx.rec.numbers["final_loss"] = mean / static_cast<double>(tail);
    }
}

void stage_fit_encoder(Ctx& ctx) {
    ctx.need("world", "world-gen");
    ctx.need("betas", "subject-sim");
    const World world = load_world(ctx.p("world"));
    const FeatureExtractor fx = make_extractor(ctx.cfg);
    SubjectDataset ds = load_dataset(ctx.p("betas"));
    if (!ds.averaged) {
        throw DependencyError("dataset under " + ctx.p("betas").string() +
                              " is not repeat-averaged; re-run subject-sim");
    }

    const int n = static_cast<int>(ds.image_ids.size());
    const int n_hold = std::max(1, static_cast<int>(std::lround(
                                       ctx.cfg.encoder_fit.holdout_fraction * n)));
    if (n_hold >= n) throw ConfigError("encoder_fit.holdout_fraction: nothing left to train on");
    RandomStream split_rng(ctx.cfg.seed, "holdout", 0);
    const std::vector<int> order = shuffled_indices(n, split_rng);

    std::vector<Eigen::VectorXd> train_images, hold_images;
    Eigen::MatrixXd Y_train(ds.betas.rows(), n - n_hold);
    Eigen::MatrixXd Y_hold(ds.betas.rows(), n_hold);
    for (int i = 0; i < n; ++i) {
        const int col = order[static_cast<std::size_t>(i)];
        const Eigen::VectorXd& img =
            world.images[static_cast<std::size_t>(ds.image_ids[static_cast<std::size_t>(col)])];
        if (i < n_hold) {
            Y_hold.col(i) = ds.betas.col(col);
            hold_images.push_back(img);
        } else {
            Y_train.col(i - n_hold) = ds.betas.col(col);
            train_images.push_back(img);
        }
    }

    EncoderFitConfig fc = ctx.cfg.encoder_fit.fit;
    fc.seed = ctx.cfg.seed;
    EncoderFitResult fit_result;
    const EncoderHead head = fit_head(train_images, Y_train, fx, fc, &fit_result);

    std::vector<int> undefined;
    const Eigen::VectorXd r2 = evaluate_r2(head, fx, hold_images, Y_hold, &undefined);

    Checkpoint cp;
    head.save_to(cp);
    cp.save(ctx.p("encoder.ckpt"));

    auto csv = open_csv(ctx.p("encoder_r2.csv"));
    csv << "# held-out R^2 per voxel (" << n_hold << " of " << n << " images held out)\n";
    csv << "voxel,r2\n";
    for (Eigen::Index v = 0; v < r2.size(); ++v) csv << v << "," << fmt(r2[v]) << "\n";
    csv.close();

    ctx.output_file("encoder.ckpt");
    ctx.output_file("encoder_r2.csv");
    if (!fit_result.epoch_loss.empty()) {
        ctx.rec.numbers["final_epoch_mse"] = fit_result.epoch_loss.back();
    }
    ctx.rec.numbers["r2_undefined"] = static_cast<double>(undefined.size());

    std::vector<double> defined;
    for (Eigen::Index v = 0; v < r2.size(); ++v) {
        if (std::isfinite(r2[v])) defined.push_back(r2[v]);
    }
    ctx.rec.numbers["median_r2"] = median_of(defined);

    const GroundTruthSubject subject = load_subject(ctx);
    const std::vector<std::string> names = ctx.cfg.world.category_names();
    for (int c = 0; c < ctx.cfg.world.categories; ++c) {
        std::vector<double> vals;
        for (Eigen::Index v = 0; v < r2.size(); ++v) {
            if (subject.region[static_cast<std::size_t>(v)] == c && std::isfinite(r2[v])) {
                vals.push_back(r2[v]);
            }
        }
        ctx.rec.numbers["median_r2:region-" + names[static_cast<std::size_t>(c)]] =
            median_of(vals);
    }
}

void stage_generate(Ctx& ctx) {
    ctx.need("voxel_sets.json", "subject-sim");
    const DenoiserModel model = load_denoiser(ctx);
    const Autoencoder ae = load_ae(ctx);
    const EncoderHead head = load_head(ctx);
    const FeatureExtractor fx = make_extractor(ctx.cfg);
    const NoiseSchedule schedule = make_schedule(ctx.cfg);

    std::map<std::string, VoxelSet> sets = load_voxel_sets(ctx.p("voxel_sets.json"));
    if (!ctx.ov.voxel_set.empty()) {
        auto it = sets.find(ctx.ov.voxel_set);
        if (it == sets.end()) {
            throw ArgumentError("unknown voxel set " + ctx.ov.voxel_set +
                                " (see voxel_sets.json)");
        }
        std::map<std::string, VoxelSet> only;
        only.insert(*it);
        sets = std::move(only);
    }

    GuidanceConfig gc = ctx.cfg.generate.guidance;
    if (ctx.ov.gamma >= 0.0) {
        gc.gamma = ctx.ov.gamma;
        gc.calibrate = false;
    }

    const Eigen::MatrixXd Zu =
        sample_unguided(model, schedule, ctx.cfg.generate.unguided_samples, gc.sample_steps,
                        gc.eta, ctx.cfg.seed, ctx.cfg.threads);
    save_image_batch(ctx.p("gen/unguided"), ae.decode_batch(Zu), ctx.cfg.world.shape);
    ctx.output_dir("gen/unguided");

    for (const auto& [name, S] : sets) {
        if (S.empty()) {
            throw DependencyError("voxel set " + name +
                                  " is empty; nothing to guide toward (" + S.provenance + ")");
        }
        const GuidedBatch batch =
            generate_guided(model, schedule, ae, head, fx, S, gc,
                            ctx.cfg.generate.samples_per_set, ctx.cfg.seed, ctx.cfg.threads);
        const fs::path dir = ctx.p("gen/" + name);
        save_image_batch(dir, batch.images, ctx.cfg.world.shape);

        auto trace = open_csv(dir / "trace.csv");
        trace << "chain,step,t,objective,grad_norm\n";
        for (std::size_t c = 0; c < batch.traces.size(); ++c) {
            const GuidanceTrace& tr = batch.traces[c];
            for (std::size_t s = 0; s < tr.timesteps.size(); ++s) {
                trace << c << "," << s << "," << tr.timesteps[s] << "," << fmt(tr.objective[s])
                      << "," << fmt(tr.grad_norm[s]) << "\n";
            }
        }
        trace.close();

        char snap_name[48];
        for (std::size_t c = 0; c < batch.traces.size(); ++c) {
            const GuidanceTrace& tr = batch.traces[c];
            for (std::size_t s = 0; s < tr.snapshot_steps.size(); ++s) {
                std::snprintf(snap_name, sizeof(snap_name), "snap_c%02d_s%03d.png",
                              static_cast<int>(c), tr.snapshot_steps[s]);
                save_png(dir / snap_name, tr.snapshots[s], ctx.cfg.world.shape);
            }
        }

        ctx.output_dir("gen/" + name);
        ctx.rec.numbers["gamma_used:" + name] = batch.gamma_used;
        ctx.rec.numbers["final_objective_mean:" + name] = batch.final_objective.mean();
    }
}

void stage_cluster(Ctx& ctx) {
    ctx.need("voxel_sets.json", "subject-sim");
    const EncoderHead head = load_head(ctx);
    const std::map<std::string, VoxelSet> sets = load_voxel_sets(ctx.p("voxel_sets.json"));
    const std::string set_name =
        ctx.ov.voxel_set.empty() ? ctx.cfg.clustering.voxel_set : ctx.ov.voxel_set;
    auto it = sets.find(set_name);
    if (it == sets.end()) {
        throw ArgumentError("unknown voxel set " + set_name + " (see voxel_sets.json)");
    }
    const VoxelSet& S = it->second;
    S.validate_against(head.W.rows());

    Eigen::MatrixXd W_S(static_cast<Eigen::Index>(S.size()), head.W.cols());
    for (std::size_t i = 0; i < S.size(); ++i) {
        W_S.row(static_cast<Eigen::Index>(i)) = head.W.row(S.indices[i]);
    }
    const NormalizedRows nr = normalize_rows(W_S);

    const int k = ctx.ov.k > 0 ? ctx.ov.k : ctx.cfg.clustering.k;
    const ClusterModel model = vmf_cluster(nr.rows, k, ctx.cfg.seed,
                                           ctx.cfg.clustering.max_iters,
                                           ctx.cfg.clustering.restarts);

    auto csv = open_csv(ctx.p("cluster/assignments.csv"));
    csv << "# spherical k-means of normalized encoder rows over " << set_name << "\n";
    csv << "voxel,cluster,cosine_to_center\n";
    for (std::size_t i = 0; i < nr.kept.size(); ++i) {
        const int voxel = S.indices[static_cast<std::size_t>(nr.kept[i])];
        const int a = model.assignment[i];
        const double cosv = nr.rows.row(static_cast<Eigen::Index>(i))
                                .dot(model.centers.row(a));
        csv << voxel << "," << a << "," << fmt(cosv) << "\n";
    }
    csv.close();

    double gap_min = 0.0;
    if (k >= 2) {
        const Eigen::MatrixXd gap = cluster_gap(model);
        gap_min = std::numeric_limits<double>::infinity();
        for (int i = 0; i < k; ++i) {
            for (int j = i + 1; j < k; ++j) gap_min = std::min(gap_min, gap(i, j));
        }
    }

    json summary;
    summary["set"] = set_name;
    summary["k"] = k;
    summary["objective"] = model.objective;
    summary["iterations"] = model.iterations;
    summary["reseeded_centers"] = model.reseeded_centers;
    summary["dropped_rows"] = nr.dropped;
    summary["min_center_gap"] = gap_min;
    {
        std::ofstream out(ctx.p("cluster/summary.json"), std::ios::binary | std::ios::trunc);
        out << summary.dump(2) << "\n";
        if (!out) throw Error("cannot write cluster/summary.json");
    }

    // silhouette-on-cosine diagnostic across k; reported, never auto-selected
    auto sil = open_csv(ctx.p("cluster/silhouette.csv"));
    sil << "k,mean_silhouette,objective\n";
    for (int kk = 2; kk <= 5; ++kk) {
        if (static_cast<long>(kk) >= nr.rows.rows()) break;
        const ClusterModel m = vmf_cluster(nr.rows, kk, ctx.cfg.seed,
                                           ctx.cfg.clustering.max_iters,
                                           ctx.cfg.clustering.restarts);
        sil << kk << "," << fmt(mean_silhouette_cosine(nr.rows, m.assignment)) << ","
            << fmt(m.objective) << "\n";
    }
    sil.close();

    ctx.output_file("cluster/assignments.csv");
    ctx.output_file("cluster/summary.json");
    ctx.output_file("cluster/silhouette.csv");
    ctx.rec.numbers["objective"] = model.objective;
    ctx.rec.numbers["min_center_gap"] = gap_min;
    ctx.rec.numbers["dropped_rows"] = static_cast<double>(nr.dropped.size());

    // recovery score against the planted labels wherever they cover the set
    const GroundTruthSubject subject = load_subject(ctx);
    std::vector<int> planted, found;
    for (std::size_t i = 0; i < nr.kept.size(); ++i) {
        const int voxel = S.indices[static_cast<std::size_t>(nr.kept[i])];
        const int label = subject.subcluster[static_cast<std::size_t>(voxel)];
        if (label >= 0) {
            planted.push_back(label);
            found.push_back(model.assignment[i]);
        }
    }
    if (planted.size() == nr.kept.size() && !planted.empty()) {
        ctx.rec.numbers["ari_planted"] = adjusted_rand_index(found, planted);
    }
}

void stage_rank(Ctx& ctx) {
    ctx.need("world", "world-gen");
    ctx.need("betas", "subject-sim");
    ctx.need("voxel_sets.json", "subject-sim");
    const World world = load_world(ctx.p("world"));
    const EncoderHead head = load_head(ctx);
    const FeatureExtractor fx = make_extractor(ctx.cfg);
    SubjectDataset ds = load_dataset(ctx.p("betas"));
    const std::map<std::string, VoxelSet> sets = load_voxel_sets(ctx.p("voxel_sets.json"));

    for (const auto& [name, S] : sets) {
        if (name.rfind("region-", 0) != 0) continue;
        if (S.empty()) continue;

        const RankedImages natural = rank_images(ds.betas, S, static_cast<int>(ds.image_ids.size()),
                                                 ds.image_ids, "recorded");
        auto nat = open_csv(ctx.p("rank/natural_" + name + ".csv"));
        nat << "# corpus images by mean recorded beta over " << name << "\n";
        nat << "rank,image_id,score\n";
        for (std::size_t i = 0; i < natural.ids.size(); ++i) {
            nat << i << "," << natural.ids[i] << "," << fmt(natural.scores[i]) << "\n";
        }
        nat.close();
        ctx.output_file("rank/natural_" + name + ".csv");

        ctx.need("gen/" + name, "generate");
        const std::vector<Eigen::VectorXd> gen_images = load_png_dir(ctx.p("gen/" + name));
        Eigen::MatrixXd P(head.W.rows(), static_cast<Eigen::Index>(gen_images.size()));
        for (std::size_t i = 0; i < gen_images.size(); ++i) {
            P.col(static_cast<Eigen::Index>(i)) = predict_responses(head, fx, gen_images[i]);
        }
        const RankedImages generated =
            rank_images(P, S, static_cast<int>(gen_images.size()), {}, "generated");
        auto gen = open_csv(ctx.p("rank/generated_" + name + ".csv"));
        gen << "# guided samples by mean predicted activation over " << name << "\n";
        gen << "rank,image_id,score\n";
        for (std::size_t i = 0; i < generated.ids.size(); ++i) {
            gen << i << "," << generated.ids[i] << "," << fmt(generated.scores[i]) << "\n";
        }
        gen.close();
        ctx.output_file("rank/generated_" + name + ".csv");
    }
}

std::vector<int> tier_counts(const std::vector<double>& percents, int pool, int extra) {
    std::vector<int> counts;
    for (double p : percents) {
        const int c = std::max(1, static_cast<int>(std::lround(p / 100.0 * pool)));
        if (std::find(counts.begin(), counts.end(), c) == counts.end()) counts.push_back(c);
    }
    if (extra > 0 && std::find(counts.begin(), counts.end(), extra) == counts.end()) {
        counts.push_back(extra);
    }
    return counts;
}

void stage_evaluate(Ctx& ctx) {
    ctx.need("world", "world-gen");
    ctx.need("voxel_sets.json", "subject-sim");
    const World world = load_world(ctx.p("world"));
    const FeatureExtractor fx = make_extractor(ctx.cfg);
    const EncoderHead head = load_head(ctx);
    const std::vector<std::string> names = ctx.cfg.world.category_names();
    const CategoryPrototypes protos =
        build_prototypes(fx, make_exemplars(ctx.cfg.world, ctx.cfg.seed), names,
                         ctx.cfg.evaluation.mean_prototypes);
    const std::map<std::string, VoxelSet> sets = load_voxel_sets(ctx.p("voxel_sets.json"));

    const int n_corpus = static_cast<int>(world.images.size());
    const std::vector<int> nat_tiers =
        tier_counts(ctx.cfg.evaluation.natural_percents, n_corpus, ctx.ov.tier);
    const std::vector<int> gen_tiers =
        tier_counts(ctx.cfg.evaluation.guided_percents, ctx.cfg.generate.samples_per_set,
                    ctx.ov.tier);

    std::vector<SpecificityGroup> nat_groups, gen_groups;
    std::map<std::string, std::vector<Eigen::VectorXd>> gen_cache;
    for (int c = 0; c < ctx.cfg.world.categories; ++c) {
        const std::string set_name = "region-" + names[static_cast<std::size_t>(c)];
        if (sets.find(set_name) == sets.end() || sets.at(set_name).empty()) continue;

        ctx.need("rank/natural_" + set_name + ".csv", "rank");
        SpecificityGroup nat;
        nat.name = "natural:" + names[static_cast<std::size_t>(c)];
        nat.target_category = c;
        const auto nat_rows = read_csv(ctx.p("rank/natural_" + set_name + ".csv"));
        const int nat_need = *std::max_element(nat_tiers.begin(), nat_tiers.end());
        for (const auto& row : nat_rows) {
            if (static_cast<int>(nat.ranked_images.size()) >= nat_need) break;
            nat.ranked_images.push_back(
                world.images[static_cast<std::size_t>(std::stoi(row.at(1)))]);
        }
        nat_groups.push_back(std::move(nat));

        ctx.need("gen/" + set_name, "generate");
        ctx.need("rank/generated_" + set_name + ".csv", "rank");
        const std::vector<Eigen::VectorXd> gen_images = load_png_dir(ctx.p("gen/" + set_name));
        gen_cache[set_name] = gen_images;
        SpecificityGroup gen;
        gen.name = "guided:" + names[static_cast<std::size_t>(c)];
        gen.target_category = c;
        const auto gen_rows = read_csv(ctx.p("rank/generated_" + set_name + ".csv"));
        const int gen_need = *std::max_element(gen_tiers.begin(), gen_tiers.end());
        for (const auto& row : gen_rows) {
            if (static_cast<int>(gen.ranked_images.size()) >= gen_need) break;
            gen.ranked_images.push_back(gen_images.at(static_cast<std::size_t>(std::stoi(row.at(1)))));
        }
        gen_groups.push_back(std::move(gen));
    }

    std::vector<SpecificityRow> rows = specificity_report(fx, nat_groups, protos, nat_tiers);
    const std::vector<SpecificityRow> gen_rows_out =
        specificity_report(fx, gen_groups, protos, gen_tiers);
    rows.insert(rows.end(), gen_rows_out.begin(), gen_rows_out.end());

    auto spec = open_csv(ctx.p("eval/specificity.csv"));
    spec << "# forced-choice classification against held-out exemplar prototypes\n";
    spec << "# percent = matched / considered * 100, degenerate embeddings excluded\n";
    spec << "group,source,category,tier,tier_percent,percent,matched,considered,excluded\n";
    for (const auto& row : rows) {
        const std::string source = row.group.substr(0, row.group.find(':'));
        const int pool = source == "natural" ? n_corpus : ctx.cfg.generate.samples_per_set;
        const int count = std::stoi(row.tier.substr(4));
        spec << row.group << "," << source << "," << names[static_cast<std::size_t>(row.category)]
             << "," << row.tier << "," << fmt(100.0 * count / pool) << "," << fmt(row.percent)
             << "," << row.matched << "," << row.considered << "," << row.excluded << "\n";
    }
    spec.close();
    ctx.output_file("eval/specificity.csv");

    // guided-vs-unguided predicted activation, per voxel set actually generated
    ctx.need("gen/unguided", "generate");
    const std::vector<Eigen::VectorXd> unguided = load_png_dir(ctx.p("gen/unguided"));
    auto eff = open_csv(ctx.p("eval/guidance_effect.csv"));
    eff << "# mean predicted activation over each voxel set, guided vs unguided samples\n";
    eff << "set,n_guided,guided_mean,guided_se,n_unguided,unguided_mean,unguided_se,diff,"
           "se_units\n";
    for (const auto& [name, S] : sets) {
        if (S.empty() || !fs::exists(ctx.p("gen/" + name))) continue;
        std::vector<Eigen::VectorXd> guided;
        if (gen_cache.count(name)) {
            guided = gen_cache[name];
        } else {
            guided = load_png_dir(ctx.p("gen/" + name));
        }
        auto set_mean = [&](const Eigen::VectorXd& pred) {
            double m = 0.0;
            for (int v : S.indices) m += pred[v];
            return m / static_cast<double>(S.size());
        };
        auto stats = [&](const std::vector<Eigen::VectorXd>& imgs, double& mean, double& se) {
            std::vector<double> vals;
            vals.reserve(imgs.size());
            for (const auto& img : imgs) vals.push_back(set_mean(predict_responses(head, fx, img)));
            mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            double ss = 0.0;
            for (double v : vals) ss += (v - mean) * (v - mean);
            se = vals.size() > 1
                     ? std::sqrt(ss / (static_cast<double>(vals.size()) - 1.0) /
                                 static_cast<double>(vals.size()))
                     : 0.0;
        };
        double gm, gse, um, use_;
        stats(guided, gm, gse);
        stats(unguided, um, use_);
        const double pooled = std::sqrt(gse * gse + use_ * use_);
        const double se_units = pooled > 0.0 ? (gm - um) / pooled
                                             : std::numeric_limits<double>::infinity();
        eff << name << "," << guided.size() << "," << fmt(gm) << "," << fmt(gse) << ","
            << unguided.size() << "," << fmt(um) << "," << fmt(use_) << "," << fmt(gm - um)
            << "," << fmt(se_units) << "\n";
        ctx.rec.numbers["se_units:" + name] = se_units;
    }
    eff.close();
    ctx.output_file("eval/guidance_effect.csv");

    // sub-cluster contrast on the guided batches
    ctx.need("gen/subcluster-vivid", "generate");
    ctx.need("gen/subcluster-muted", "generate");
    ContrastGroup vivid{"subcluster-vivid", load_png_dir(ctx.p("gen/subcluster-vivid"))};
    ContrastGroup muted{"subcluster-muted", load_png_dir(ctx.p("gen/subcluster-muted"))};
    const std::string patches_name =
        names[static_cast<std::size_t>(ctx.cfg.world.patches_category())];
    const std::vector<std::string> metrics = {"mean_saturation", "mean_luminance",
                                              "prototype_score:" + patches_name,
                                              "embedding_dispersion"};
    const std::vector<ContrastMetricResult> contrast =
        contrast_report(fx, vivid, muted, metrics, &protos,
                        ctx.cfg.evaluation.bootstrap_resamples, ctx.cfg.seed);
    auto con = open_csv(ctx.p("eval/contrast.csv"));
    con << "# automated image metrics stand in for human ratings; 95% bootstrap CI ("
        << ctx.cfg.evaluation.bootstrap_resamples << " resamples)\n";
    con << "metric,group_a,group_b,mean_a,mean_b,difference,ci_lo,ci_hi\n";
    for (const auto& r : contrast) {
        con << r.metric << "," << vivid.name << "," << muted.name << "," << fmt(r.mean_a) << ","
            << fmt(r.mean_b) << "," << fmt(r.difference) << "," << fmt(r.ci_lo) << ","
            << fmt(r.ci_hi) << "\n";
        if (r.metric == "mean_saturation") {
            ctx.rec.numbers["saturation_diff"] = r.difference;
            ctx.rec.numbers["saturation_ci_lo"] = r.ci_lo;
            ctx.rec.numbers["saturation_ci_hi"] = r.ci_hi;
        }
    }
    con.close();
    ctx.output_file("eval/contrast.csv");
}

void stage_report(Ctx& ctx) {
    ctx.need("eval/specificity.csv", "evaluate");
    ctx.need("eval/contrast.csv", "evaluate");
    const std::vector<std::string> names = ctx.cfg.world.category_names();

    std::vector<std::string> header;
    const auto spec_rows = read_csv(ctx.p("eval/specificity.csv"), &header);

    auto table = open_csv(ctx.p("report/table1_analog.csv"));
    table << "# specificity: percent of tier images whose forced-choice label matches the "
             "region's category\n";
    table << "category,source,tier,tier_percent,percent\n";
    for (const auto& row : spec_rows) {
        table << row.at(2) << "," << row.at(1) << "," << row.at(3) << "," << row.at(4) << ","
              << row.at(5) << "\n";
    }
    table.close();
    ctx.output_file("report/table1_analog.csv");

    // one bar group per (source, tier); one bar per category
    std::vector<std::string> group_order;
    std::map<std::string, BarGroup> groups;
    for (const auto& row : spec_rows) {
        const std::string label = row.at(1) + " " + row.at(3) + " (" + row.at(4) + "%)";
        if (!groups.count(label)) {
            group_order.push_back(label);
            groups[label].label = label;
            groups[label].values.assign(names.size(), 0.0);
        }
        const auto cat = std::find(names.begin(), names.end(), row.at(2));
        if (cat != names.end()) {
            groups[label].values[static_cast<std::size_t>(cat - names.begin())] =
                std::stod(row.at(5));
        }
    }
    BarChart spec_chart;
    spec_chart.title = "Forced-choice specificity by tier";
    spec_chart.series = names;
    for (const auto& label : group_order) spec_chart.groups.push_back(groups[label]);
    spec_chart.y_max = 100.0;
    spec_chart.y_label = "percent matched";
    save_bar_chart(spec_chart, ctx.p("report/specificity.svg"));
    ctx.output_file("report/specificity.svg");

    const auto contrast_rows = read_csv(ctx.p("eval/contrast.csv"));
    BarChart con_chart;
    con_chart.title = "Sub-cluster contrasts (guided samples)";
    if (!contrast_rows.empty()) {
        con_chart.series = {contrast_rows[0].at(1), contrast_rows[0].at(2)};
    }
    for (const auto& row : contrast_rows) {
        BarGroup g;
        g.label = row.at(0);
        g.values = {std::stod(row.at(3)), std::stod(row.at(4))};
        con_chart.groups.push_back(std::move(g));
    }
    con_chart.y_max = 1.0;
    con_chart.y_label = "metric value";
    save_bar_chart(con_chart, ctx.p("report/contrast.svg"));
    ctx.output_file("report/contrast.svg");
}

using StageFn = void (*)(Ctx&);

const std::vector<std::pair<std::string, StageFn>>& stage_table() {
    static const std::vector<std::pair<std::string, StageFn>> table = {
        {"world-gen", stage_world_gen},       {"subject-sim", stage_subject_sim},
        {"fit-encoder", stage_fit_encoder},   {"train-ae", stage_train_ae},
        {"train-diffusion", stage_train_diffusion}, {"generate", stage_generate},
        {"cluster", stage_cluster},           {"rank", stage_rank},
        {"evaluate", stage_evaluate},         {"report", stage_report},
    };
    return table;
}

// run_all needs artifacts before their consumers; fit-encoder only needs
// subject-sim, so the spec's command order already works.

}  // namespace

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [name, fn] : stage_table()) out.push_back(name);
        return out;
    }();
    return names;
}

void run_stage(const RunConfig& cfg, const std::string& stage, const StageOverrides& ov) {
    validate_config(cfg);
    StageFn fn = nullptr;
    for (const auto& [name, f] : stage_table()) {
        if (name == stage) fn = f;
    }
    if (!fn) throw ArgumentError("unknown stage " + stage);

    const fs::path out(cfg.out);
    fs::create_directories(out);
    DirLock lock(out);

    const fs::path cfg_path = out / "config.json";
    if (fs::exists(cfg_path)) {
        const RunConfig stored = load_config(cfg_path);
        if (config_hash(stored) != config_hash(cfg)) {
            throw ConfigError("config does not match " + cfg_path.string() +
                              "; use the stored config or a fresh output directory");
        }
    } else {
        save_config(cfg, cfg_path);
    }

    const fs::path manifest_path = out / "manifest.json";
    RunManifest manifest;
    if (fs::exists(manifest_path)) {
        manifest = load_manifest(manifest_path);
        if (manifest.config_hash != hash_hex(config_hash(cfg))) {
            throw ConfigError("manifest config hash does not match the active config in " +
                              out.string());
        }
    } else {
        manifest.tool_version = kVersion;
        manifest.config_hash = hash_hex(config_hash(cfg));
        manifest.seed = cfg.seed;
    }

    Ctx ctx{cfg, ov, out, StageRecord{}};
    const auto t0 = std::chrono::steady_clock::now();
    fn(ctx);
    ctx.rec.duration_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ctx.rec.completed_at = now_utc();

    manifest.stages[stage] = std::move(ctx.rec);
    save_manifest(manifest, manifest_path);
}

void run_all(const RunConfig& cfg, const StageOverrides& ov) {
    for (const auto& name : stage_names()) run_stage(cfg, name, ov);
}

void save_voxel_sets(const std::filesystem::path& path,
                     const std::map<std::string, VoxelSet>& sets) {
    json j;
    j["version"] = "voxel-sets-v1";
    json entries = json::object();
    for (const auto& [name, s] : sets) {
        entries[name] = {{"indices", s.indices}, {"provenance", s.provenance}};
    }
    j["sets"] = std::move(entries);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw Error("write failed for " + path.string());
}

std::map<std::string, VoxelSet> load_voxel_sets(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("cannot open " + path.string());
    json j;
    try {
        std::ostringstream buf;
        buf << in.rdbuf();
        j = json::parse(buf.str());
    } catch (const json::exception& e) {
        throw FormatError("voxel sets: invalid JSON in " + path.string() + ": " + e.what());
    }
    if (j.value("version", std::string()) != "voxel-sets-v1") {
        throw FormatError("voxel sets: unsupported version in " + path.string());
    }
    std::map<std::string, VoxelSet> sets;
    try {
        for (auto it = j.at("sets").begin(); it != j.at("sets").end(); ++it) {
            VoxelSet s;
            s.indices = it.value().at("indices").get<std::vector<int>>();
            s.provenance = it.value().at("provenance").get<std::string>();
            sets[it.key()] = std::move(s);
        }
    } catch (const json::exception& e) {
        throw FormatError("voxel sets: bad entry in " + path.string() + ": " + e.what());
    }
    return sets;
}

}  // namespace dive
