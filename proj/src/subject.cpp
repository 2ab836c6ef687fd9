#include "dive/subject.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "dive/parallel.hpp"

namespace dive {

using nlohmann::json;

VoxelSet GroundTruthSubject::region_voxels(int category, const std::string& note) const {
    VoxelSet vs;
    for (std::size_t v = 0; v < region.size(); ++v) {
        if (region[v] == category) vs.indices.push_back(static_cast<int>(v));
    }
    vs.provenance = "planted region category=" + std::to_string(category) +
                    (note.empty() ? "" : " " + note);
    return vs;
}

VoxelSet GroundTruthSubject::subcluster_voxels(int sub) const {
    VoxelSet vs;
    for (std::size_t v = 0; v < subcluster.size(); ++v) {
        if (subcluster[v] == sub) vs.indices.push_back(static_cast<int>(v));
    }
    vs.provenance = "planted subcluster=" + std::to_string(sub);
    return vs;
}

void GroundTruthSubject::save_to(Checkpoint& cp, const std::string& prefix) const {
    cp.add(prefix + "W", TensorData::from_matrix(W));
    cp.add(prefix + "b", TensorData::from_vector(b));
    cp.add(prefix + "region", TensorData::from_ints(region));
    cp.add(prefix + "subcluster", TensorData::from_ints(subcluster));
    cp.add(prefix + "prototype_dirs", TensorData::from_matrix(prototype_dirs));
    cp.add(prefix + "subcluster_dirs", TensorData::from_matrix(subcluster_dirs));
    Eigen::VectorXd meta(2);
    meta << noise_sd, session_offset_sd;
    cp.add(prefix + "meta", TensorData::from_vector(meta));
}

GroundTruthSubject GroundTruthSubject::load_from(const Checkpoint& cp, const std::string& prefix) {
    GroundTruthSubject s;
    s.W = cp.matrix(prefix + "W");
    s.b = cp.vector(prefix + "b");
    s.region = cp.ints(prefix + "region");
    s.subcluster = cp.ints(prefix + "subcluster");
    s.prototype_dirs = cp.matrix(prefix + "prototype_dirs");
    s.subcluster_dirs = cp.matrix(prefix + "subcluster_dirs");
    const Eigen::VectorXd meta = cp.vector(prefix + "meta");
    if (meta.size() != 2) throw FormatError("subject: bad meta tensor");
    s.noise_sd = meta[0];
    s.session_offset_sd = meta[1];
    if (s.b.size() != s.W.rows() || static_cast<long>(s.region.size()) != s.W.rows() ||
        static_cast<long>(s.subcluster.size()) != s.W.rows()) {
        throw FormatError("subject: inconsistent tensor shapes");
    }
    return s;
}

GroundTruthSubject make_subject(const World& world, const FeatureExtractor& fx,
                                const SubjectConfig& cfg, std::uint64_t seed) {
    if (cfg.voxels < 1) throw ConfigError("subject: voxel count must be positive");
    if (cfg.region_voxels < 1) throw ConfigError("subject: region size must be positive");
    const long planted = static_cast<long>(cfg.region_voxels) * world.cfg.categories;
    if (planted > cfg.voxels) {
        throw ConfigError("subject: region sizes exceed the voxel count");
    }
    if (cfg.subclusters != 2) throw ConfigError("subject: exactly 2 planted sub-clusters supported");
    if (!(cfg.subcluster_angle_deg > 0.0) || !(cfg.subcluster_angle_deg < 180.0)) {
        throw ConfigError("subject: sub-cluster angle must lie in (0, 180) degrees");
    }
    if (!(cfg.kappa >= 0.0)) throw ConfigError("subject: kappa must be non-negative");

    const int K = fx.dim();
    const int C = world.cfg.categories;
    const int food = world.cfg.patches_category();

    // prototype directions: normalized mean category embeddings
    Eigen::MatrixXd proto = Eigen::MatrixXd::Zero(C, K);
    std::vector<long> counts(static_cast<std::size_t>(C), 0);
    std::vector<Eigen::VectorXd> embeddings(world.images.size());
    for (std::size_t i = 0; i < world.images.size(); ++i) {
        embeddings[i] = normalize_embedding(fx.extract(world.images[i]));
        const int c = world.category[i];
        proto.row(c) += embeddings[i].transpose();
        ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < C; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) {
            throw ConfigError("subject: category " + std::to_string(c) + " has no images");
        }
        proto.row(c) = normalize_embedding(proto.row(c).transpose()).transpose();
    }

    // The feature map obeys exact linear constraints, so embeddings span a strict
    // subspace of R^K. Tuning directions are planted inside that span; any mass
    // outside it would be invisible to recordings and unrecoverable by a readout.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(K, K);
    for (const Eigen::VectorXd& u : embeddings) gram += u * u.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gram_eig(gram);
    const double gram_lmax = gram_eig.eigenvalues().maxCoeff();
    long null_dims = 0;
    while (null_dims < K && gram_eig.eigenvalues()[null_dims] <= gram_lmax * 1e-12) ++null_dims;
    const Eigen::MatrixXd span_basis = gram_eig.eigenvectors().rightCols(K - null_dims);
    auto to_span = [&](const Eigen::VectorXd& dir) {
        return normalize_embedding(span_basis * (span_basis.transpose() * dir));
    };

    // sub-cluster directions: vivid/muted halves of the patches family by
    // measured saturation, re-angled inside their span to the exact target
    std::vector<std::pair<double, std::size_t>> sat;
    for (std::size_t i = 0; i < world.images.size(); ++i) {
        if (world.category[i] == food) {
            sat.emplace_back(mean_saturation(world.images[i], world.cfg.shape), i);
        }
    }
    if (sat.size() < 4) throw ConfigError("subject: too few patches images to split");
    std::sort(sat.begin(), sat.end());
    const std::size_t half = sat.size() / 2;
    Eigen::VectorXd d_muted = Eigen::VectorXd::Zero(K), d_vivid = Eigen::VectorXd::Zero(K);
    for (std::size_t r = 0; r < sat.size(); ++r) {
        (r < half ? d_muted : d_vivid) += embeddings[sat[r].second];
    }
    d_muted = normalize_embedding(d_muted);
    d_vivid = normalize_embedding(d_vivid);
    Eigen::VectorXd mid = d_vivid + d_muted;
    if (mid.norm() < 1e-8) {
        // antipodal halves; fall back to the category prototype as the midline
        mid = proto.row(food).transpose();
    }
    mid = normalize_embedding(mid);
    Eigen::VectorXd span = d_vivid - mid.dot(d_vivid) * mid;
    if (span.norm() < 1e-8) {
        throw ConfigError("subject: vivid and muted palette embeddings coincide; "
                          "cannot plant sub-clusters (re-render the world with another seed)");
    }
    span = normalize_embedding(span);
    const double half_angle = 0.5 * cfg.subcluster_angle_deg * M_PI / 180.0;
    Eigen::MatrixXd sub_dirs(2, K);
    sub_dirs.row(0) = (std::cos(half_angle) * mid + std::sin(half_angle) * span).transpose();
    sub_dirs.row(1) = (std::cos(half_angle) * mid - std::sin(half_angle) * span).transpose();

    GroundTruthSubject subj;
    subj.W.resize(cfg.voxels, K);
    subj.b.resize(cfg.voxels);
    subj.region.assign(static_cast<std::size_t>(cfg.voxels), -1);
    subj.subcluster.assign(static_cast<std::size_t>(cfg.voxels), -1);
    subj.prototype_dirs = proto;
    subj.subcluster_dirs = sub_dirs;
    subj.noise_sd = cfg.noise_sd;
    subj.session_offset_sd = cfg.session_offset_sd;

    for (long v = 0; v < cfg.voxels; ++v) {
        RandomStream rng(seed, "subject-voxel", static_cast<std::uint64_t>(v));
        const long r = v / cfg.region_voxels;
        if (r < C) {
            const int cat = static_cast<int>(r);
            subj.region[static_cast<std::size_t>(v)] = cat;
            Eigen::VectorXd mean_dir;
            if (cat == food) {
                const int sub = (v % cfg.region_voxels) < cfg.region_voxels / 2 ? 0 : 1;
                subj.subcluster[static_cast<std::size_t>(v)] = sub;
                mean_dir = sub_dirs.row(sub).transpose();
            } else {
                mean_dir = proto.row(cat).transpose();
            }
            subj.W.row(v) = to_span(sample_vmf(mean_dir, cfg.kappa, rng)).transpose();
        } else {
            // non-selective: low-norm random direction
            subj.W.row(v) = (cfg.offrow_norm * to_span(rng.normal_vector(K))).transpose();
        }
        subj.b[v] = cfg.bias_sd * rng.normal();
    }
    return subj;
}

SubjectDataset simulate_recordings(const GroundTruthSubject& subject, const World& world,
                                   const FeatureExtractor& fx, int sessions, int repeats,
                                   std::uint64_t seed, int threads) {
    if (sessions < 1) throw ArgumentError("simulate_recordings: sessions must be >= 1");
    if (repeats < 1) throw ArgumentError("simulate_recordings: repeats must be >= 1");
    const long n = static_cast<long>(world.images.size());
    if (n == 0) throw EmptyInputError("simulate_recordings: empty corpus");
    const long V = subject.voxel_count();

    // session-major presentation order; image i, repeat r lands in session (i + r) mod S
    SubjectDataset ds;
    for (int s = 0; s < sessions; ++s) {
        for (long i = 0; i < n; ++i) {
            for (int r = 0; r < repeats; ++r) {
                if ((i + r) % sessions == s) {
                    ds.presentations.push_back({static_cast<int>(i), s, r});
                }
            }
        }
    }
    const long P = static_cast<long>(ds.presentations.size());

    Eigen::MatrixXd signal(V, n);
    for (long i = 0; i < n; ++i) {
        const Eigen::VectorXd u = normalize_embedding(fx.extract(world.images[static_cast<std::size_t>(i)]));
        signal.col(i) = subject.W * u + subject.b;
    }

    Eigen::MatrixXd offsets = Eigen::MatrixXd::Zero(V, sessions);
    if (subject.session_offset_sd > 0.0) {
        for (int s = 0; s < sessions; ++s) {
            RandomStream rng(seed, "session-offset", static_cast<std::uint64_t>(s));
            for (long v = 0; v < V; ++v) offsets(v, s) = subject.session_offset_sd * rng.normal();
        }
    }

    ds.betas.resize(V, P);
    parallel_for(P, threads, [&](long p) {
        const Presentation& pres = ds.presentations[static_cast<std::size_t>(p)];
        Eigen::VectorXd col = signal.col(pres.image) + offsets.col(pres.session);
        if (subject.noise_sd > 0.0) {
            RandomStream rng(seed, "noise", static_cast<std::uint64_t>(p));
            for (long v = 0; v < V; ++v) col[v] += subject.noise_sd * rng.normal();
        }
        ds.betas.col(p) = col;
    });
    return ds;
}

void normalize_sessions(SubjectDataset& ds) {
    if (ds.averaged) throw ArgumentError("normalize_sessions: dataset already averaged");
    const long V = ds.betas.rows();
    std::map<int, std::vector<long>> by_session;
    for (std::size_t p = 0; p < ds.presentations.size(); ++p) {
        by_session[ds.presentations[p].session].push_back(static_cast<long>(p));
    }
    std::set<std::pair<int, int>> flags(ds.zero_variance.begin(), ds.zero_variance.end());
    for (const auto& [session, cols] : by_session) {
        const double cnt = static_cast<double>(cols.size());
        for (long v = 0; v < V; ++v) {
            double mean = 0.0;
            for (long c : cols) mean += ds.betas(v, c);
            mean /= cnt;
            double var = 0.0;
            for (long c : cols) {
                const double d = ds.betas(v, c) - mean;
                var += d * d;
            }
            var /= cnt;  // population convention
            const double sd = std::sqrt(var);
            if (sd == 0.0) {
                for (long c : cols) ds.betas(v, c) = 0.0;
                flags.insert({static_cast<int>(v), session});
            } else {
                for (long c : cols) ds.betas(v, c) = (ds.betas(v, c) - mean) / sd;
            }
        }
    }
    ds.zero_variance.assign(flags.begin(), flags.end());
    ds.normalized = true;
}

void average_repeats(SubjectDataset& ds) {
    if (!ds.normalized) throw ArgumentError("average_repeats: normalize sessions first");
    if (ds.averaged) return;
    std::map<int, std::vector<long>> by_image;
    for (std::size_t p = 0; p < ds.presentations.size(); ++p) {
        by_image[ds.presentations[p].image].push_back(static_cast<long>(p));
    }
    if (by_image.empty()) throw EmptyInputError("average_repeats: no presentations");
    for (const auto& [img, cols] : by_image) {
        if (cols.empty()) {
            throw ArgumentError("average_repeats: image " + std::to_string(img) +
                                " has no presentations");
        }
    }
    Eigen::MatrixXd avg(ds.betas.rows(), static_cast<long>(by_image.size()));
    std::vector<int> ids;
    std::vector<Presentation> pres;
    long col = 0;
    for (const auto& [img, cols] : by_image) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(ds.betas.rows());
        for (long c : cols) acc += ds.betas.col(c);
        avg.col(col) = acc / static_cast<double>(cols.size());
        ids.push_back(img);
        pres.push_back({img, -1, -1});
        ++col;
    }
    ds.betas = std::move(avg);
    ds.presentations = std::move(pres);
    ds.image_ids = std::move(ids);
    ds.averaged = true;
}

std::vector<int> SubjectDataset::flagged_voxels() const {
    std::set<int> vs;
    for (const auto& [v, s] : zero_variance) vs.insert(v);
    return {vs.begin(), vs.end()};
}

Eigen::VectorXd compute_tstats(const SubjectDataset& ds, const std::vector<int>& image_category,
                               int category) {
    if (!ds.averaged) throw ArgumentError("compute_tstats: dataset must be averaged");
    std::vector<long> a_cols, b_cols;
    for (std::size_t c = 0; c < ds.image_ids.size(); ++c) {
        const int img = ds.image_ids[c];
        if (img < 0 || img >= static_cast<int>(image_category.size())) {
            throw ArgumentError("compute_tstats: image id outside category manifest");
        }
        (image_category[static_cast<std::size_t>(img)] == category ? a_cols : b_cols)
            .push_back(static_cast<long>(c));
    }
    if (a_cols.size() < 2) throw ArgumentError("compute_tstats: category has fewer than 2 images");
    if (b_cols.size() < 2) throw ArgumentError("compute_tstats: rest group has fewer than 2 images");

    const long V = ds.betas.rows();
    const double na = static_cast<double>(a_cols.size());
    const double nb = static_cast<double>(b_cols.size());
    Eigen::VectorXd t(V);
    for (long v = 0; v < V; ++v) {
        double ma = 0.0, mb = 0.0;
        for (long c : a_cols) ma += ds.betas(v, c);
        for (long c : b_cols) mb += ds.betas(v, c);
        ma /= na;
        mb /= nb;
        double ssa = 0.0, ssb = 0.0;
        for (long c : a_cols) ssa += (ds.betas(v, c) - ma) * (ds.betas(v, c) - ma);
        for (long c : b_cols) ssb += (ds.betas(v, c) - mb) * (ds.betas(v, c) - mb);
        const double pooled = (ssa + ssb) / (na + nb - 2.0);
        const double se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));
        if (se == 0.0) {
            t[v] = ma == mb ? 0.0 : std::numeric_limits<double>::quiet_NaN();
        } else {
            t[v] = (ma - mb) / se;
        }
    }
    return t;
}

VoxelSet select_voxels(const Eigen::VectorXd& tstats, double threshold, const VoxelSet* mask,
                       const std::vector<int>* excluded, const std::string& provenance) {
    std::set<int> masked;
    if (mask) masked.insert(mask->indices.begin(), mask->indices.end());
    std::set<int> skip;
    if (excluded) skip.insert(excluded->begin(), excluded->end());

    VoxelSet vs;
    for (Eigen::Index v = 0; v < tstats.size(); ++v) {
        if (!(tstats[v] > threshold)) continue;  // NaN never selects
        if (mask && !masked.count(static_cast<int>(v))) continue;
        if (skip.count(static_cast<int>(v))) continue;
        vs.indices.push_back(static_cast<int>(v));
    }
    vs.provenance = provenance.empty()
                        ? "t>" + std::to_string(threshold)
                        : provenance + " t>" + std::to_string(threshold);
    return vs;
}

void save_dataset(const std::filesystem::path& dir, const SubjectDataset& ds,
                  const std::vector<int>& image_category) {
    std::filesystem::create_directories(dir);
    const long V = ds.betas.rows();
    const long P = ds.betas.cols();
    {
        std::ofstream out(dir / "betas.bin", std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("save_dataset: cannot write betas.bin");
        std::vector<float> row(static_cast<std::size_t>(P));
        for (long v = 0; v < V; ++v) {
            for (long p = 0; p < P; ++p) row[static_cast<std::size_t>(p)] = static_cast<float>(ds.betas(v, p));
            out.write(reinterpret_cast<const char*>(row.data()),
                      static_cast<std::streamsize>(row.size() * sizeof(float)));
        }
        if (!out) throw FormatError("save_dataset: write failed for betas.bin");
    }
    json pres = json::array();
    for (const auto& p : ds.presentations) {
        pres.push_back({{"image", p.image}, {"session", p.session}, {"repeat", p.repeat}});
    }
    json zv = json::array();
    for (const auto& [v, s] : ds.zero_variance) zv.push_back({{"voxel", v}, {"session", s}});
    json doc{{"format", "betas-v1"},
             {"voxels", V},
             {"columns", P},
             {"normalized", ds.normalized},
             {"averaged", ds.averaged},
             {"presentations", pres},
             {"image_ids", ds.image_ids},
             {"zero_variance", zv},
             {"image_category", image_category},
             {"ground_truth", "subject.ckpt"}};
    std::ofstream out(dir / "meta.json", std::ios::trunc);
    if (!out) throw FormatError("save_dataset: cannot write meta.json");
    out << doc.dump(2) << "\n";
}

SubjectDataset load_dataset(const std::filesystem::path& dir, std::vector<int>* image_category) {
    std::ifstream meta_in(dir / "meta.json");
    if (!meta_in) throw DependencyError("load_dataset: missing " + (dir / "meta.json").string());
    json doc;
    try {
        meta_in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("load_dataset: bad meta.json: " + std::string(e.what()));
    }
    if (doc.value("format", "") != "betas-v1") throw FormatError("load_dataset: unknown format");

    SubjectDataset ds;
    const long V = doc.at("voxels").get<long>();
    const long P = doc.at("columns").get<long>();
    ds.normalized = doc.at("normalized").get<bool>();
    ds.averaged = doc.at("averaged").get<bool>();
    for (const auto& p : doc.at("presentations")) {
        ds.presentations.push_back(
            {p.at("image").get<int>(), p.at("session").get<int>(), p.at("repeat").get<int>()});
    }
    ds.image_ids = doc.value("image_ids", std::vector<int>{});
    for (const auto& z : doc.value("zero_variance", json::array())) {
        ds.zero_variance.emplace_back(z.at("voxel").get<int>(), z.at("session").get<int>());
    }
    if (image_category) *image_category = doc.value("image_category", std::vector<int>{});
    if (static_cast<long>(ds.presentations.size()) != P) {
        throw FormatError("load_dataset: presentation count does not match columns");
    }

    std::ifstream in(dir / "betas.bin", std::ios::binary);
    if (!in) throw DependencyError("load_dataset: missing " + (dir / "betas.bin").string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::uint64_t>(in.tellg());
    if (bytes != static_cast<std::uint64_t>(V) * static_cast<std::uint64_t>(P) * sizeof(float)) {
        throw FormatError("load_dataset: betas.bin size does not match meta.json (truncated?)");
    }
    in.seekg(0);
    ds.betas.resize(V, P);
    std::vector<float> row(static_cast<std::size_t>(P));
    for (long v = 0; v < V; ++v) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) throw FormatError("load_dataset: betas.bin truncated");
        for (long p = 0; p < P; ++p) ds.betas(v, p) = static_cast<double>(row[static_cast<std::size_t>(p)]);
    }
    return ds;
}

}  // namespace dive
