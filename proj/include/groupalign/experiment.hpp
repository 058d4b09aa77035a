#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "groupalign/config.hpp"
#include "groupalign/data.hpp"
#include "groupalign/evaluation.hpp"
#include "groupalign/trainer.hpp"

namespace groupalign {

// Exclusive lock on a run directory; concurrent runs must target distinct
// output dirs.
struct RunLock {
    fs::path path;
    bool held = false;

    explicit RunLock(const fs::path& dir) : path(dir / ".lock") {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw DataError("cannot create output directory: " + dir.string());
        if (fs::exists(path))
            throw ConfigError("output directory is locked by another run: " + dir.string() +
                              " (remove " + path.string() + " if stale)");
        std::ofstream out(path);
        out << "locked\n";
        held = true;
    }
    ~RunLock() {
        if (held) {
            std::error_code ec;
            fs::remove(path, ec);
        }
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;
};

struct TrainingData {
    DatasetManifest manifest;
    std::vector<Image> source_images;
    std::vector<LabelMap> source_labels;
    std::vector<Image> target_images;
};

inline TrainingData load_training_data(const DatasetManifest& manifest) {
    TrainingData data;
    data.manifest = manifest;
    for (const ManifestItem* item : manifest.select(Split::train, Domain::source)) {
        Image img = load_image(manifest, *item);
        LabelMap lm = load_label(manifest, *item);
        check_pair_shapes(img, lm, item->image_path);
        data.source_images.push_back(std::move(img));
        data.source_labels.push_back(std::move(lm));
    }
    for (const ManifestItem* item : manifest.select(Split::train, Domain::target))
        data.target_images.push_back(load_image(manifest, *item));
    if (data.source_images.empty()) throw DataError("no labeled source training items");
    if (data.target_images.empty()) throw DataError("no target training items");
    return data;
}

struct EvalOutcome {
    ConfusionMatrix cm;
    IouResult iou;
    int images = 0;
};

// Runs the segmentation network over a labeled split and scores it.
inline EvalOutcome evaluate_split(const SegNet& net, const DatasetManifest& manifest, Split split,
                                  Domain domain, int limit = 0) {
    EvalOutcome out;
    out.cm = ConfusionMatrix(net.cfg.cls);
    for (const ManifestItem* item : manifest.select(split, domain)) {
        if (!item->label_path) continue;
        Image img = load_image(manifest, *item);
        LabelMap truth = load_label(manifest, *item);
        check_pair_shapes(img, truth, item->image_path);
        ScoreMap s = net.forward(img);
        out.cm.add(truth, argmax_labels(s.prob));
        ++out.images;
        if (limit > 0 && out.images >= limit) break;
    }
    if (out.images == 0) throw DataError("no labeled items to evaluate in this split");
    out.iou = compute_iou(out.cm);
    return out;
}

inline nlohmann::ordered_json metrics_line(long long iteration, const LossReport& r, double lr_g,
                                           double lr_c) {
    nlohmann::ordered_json j;
    j["iter"] = iteration;
    j["seg"] = r.seg;
    j["co"] = r.co;
    j["orth"] = r.orth;
    j["cadv_g"] = r.cadv_g;
    j["cl"] = r.cl;
    j["total"] = r.total;
    j["disc"] = r.disc;
    j["gnorm_seg"] = r.gnorm_seg;
    j["gnorm_co"] = r.gnorm_co;
    j["gnorm_orth"] = r.gnorm_orth;
    j["gnorm_cadv"] = r.gnorm_cadv;
    j["gnorm_cl"] = r.gnorm_cl;
    j["d_target_prob"] = r.d_target_prob;
    j["lr_g"] = lr_g;
    j["lr_c"] = lr_c;
    return j;
}

struct RunSummary {
    double target_val_miou = 0.0;
    double source_val_miou = 0.0;
    std::vector<double> target_iou;  // per class, NaN where undefined
    std::vector<double> source_iou;
    long long iterations = 0;
    std::string checkpoint_path;
};

inline std::string iou_table_text(const std::vector<std::string>& class_names,
                                  const IouResult& iou, double miou) {
    std::ostringstream out;
    for (std::size_t u = 0; u < iou.iou.size(); ++u) {
        const std::string name = u < class_names.size() ? class_names[u] : "class" + std::to_string(u);
        out << "  " << name << ": ";
        if (iou.defined[u]) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%.1f", iou.iou[u] * 100.0);
            out << buf;
        } else {
            out << "undef";
        }
        out << "\n";
    }
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.1f", miou * 100.0);
    out << "  mIoU: " << buf << "\n";
    return out.str();
}

// Full training run: config snapshot first, then the iteration loop with
// metrics logging and periodic checkpoints, then a final evaluation report.
inline RunSummary run_training(const RunConfig& cfg, bool quiet = false) {
    for (const std::string& w : cfg.validate())
        if (!quiet) std::cerr << "warning: " << w << "\n";
    if (cfg.out_dir.empty()) throw ConfigError("train: out.dir is required");
    if (cfg.data_root.empty()) throw ConfigError("train: data.root is required");

    RunLock lock(cfg.out_dir);
    {
        std::ofstream snap(fs::path(cfg.out_dir) / "config.txt");
        snap << run_config_text(cfg);
    }
    DatasetManifest manifest = ingest_folder(cfg.data_root);
    if (manifest.cls != cfg.train.cls)
        throw ConfigError("dataset cls=" + std::to_string(manifest.cls) +
                          " does not match model.cls=" + std::to_string(cfg.train.cls));
    TrainingData data = load_training_data(manifest);

    TrainState state(cfg.train);
    fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
    std::ofstream metrics(fs::path(cfg.out_dir) / "metrics.jsonl");
    if (!metrics) throw DataError("cannot write metrics log");

    std::uniform_int_distribution<std::size_t> pick_src(0, data.source_images.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_tgt(0, data.target_images.size() - 1);

    while (state.iteration < cfg.train.total_iters) {
        Batch batch;
        for (int b = 0; b < cfg.train.batch_size; ++b) {
            const std::size_t si = pick_src(state.rng);
            const std::size_t ti = pick_tgt(state.rng);
            batch.source_images.push_back(data.source_images[si]);
            batch.source_labels.push_back(data.source_labels[si]);
            batch.target_images.push_back(data.target_images[ti]);
        }
        const long long it = state.iteration;
        const double lr_g = poly_lr(cfg.train.lr_g, it, cfg.train.total_iters, cfg.train.poly_power);
        const double lr_c = poly_lr(cfg.train.lr_c, it, cfg.train.total_iters, cfg.train.poly_power);
        LossReport report = train_step(state, batch);
        if (cfg.train.log_every > 0 && it % cfg.train.log_every == 0)
            metrics << metrics_line(it, report, lr_g, lr_c).dump() << "\n";
        if (cfg.train.checkpoint_every > 0 && state.iteration % cfg.train.checkpoint_every == 0 &&
            state.iteration < cfg.train.total_iters) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "ck_%06lld.bin", state.iteration);
            save_checkpoint(state, (fs::path(cfg.out_dir) / "checkpoints" / buf).string());
        }
        if (!quiet && (it % 100 == 0 || it + 1 == cfg.train.total_iters)) {
            std::cerr << "iter " << it << " total " << report.total << " seg " << report.seg
                      << " disc " << report.disc << "\n";
        }
    }
    metrics.flush();

    RunSummary summary;
    summary.iterations = state.iteration;
    summary.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoints" / "ck_final.bin").string();
    save_checkpoint(state, summary.checkpoint_path);

    EvalOutcome target = evaluate_split(state.g, manifest, Split::val, Domain::target,
                                        cfg.eval_limit);
    EvalOutcome source = evaluate_split(state.g, manifest, Split::val, Domain::source,
                                        cfg.eval_limit);
    summary.target_val_miou = target.iou.miou;
    summary.source_val_miou = source.iou.miou;
    summary.target_iou = target.iou.iou;
    summary.source_iou = source.iou.iou;

    nlohmann::ordered_json rep;
    rep["name"] = cfg.name;
    rep["iterations"] = summary.iterations;
    rep["config_hash"] = train_config_hash(cfg.train);
    rep["target_val_miou"] = summary.target_val_miou;
    rep["source_val_miou"] = summary.source_val_miou;
    auto iou_json = [](const IouResult& r) {
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (std::size_t u = 0; u < r.iou.size(); ++u)
            j.push_back(r.defined[u] ? nlohmann::ordered_json(r.iou[u])
                                     : nlohmann::ordered_json(nullptr));
        return j;
    };
    rep["target_iou"] = iou_json(target.iou);
    rep["source_iou"] = iou_json(source.iou);
    {
        std::ofstream out(fs::path(cfg.out_dir) / "report.json");
        out << rep.dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(cfg.out_dir) / "report.txt");
        out << "run: " << cfg.name << "\n";
        out << "target val:\n"
            << iou_table_text(manifest.class_names, target.iou, target.iou.miou);
        out << "source val:\n"
            << iou_table_text(manifest.class_names, source.iou, source.iou.miou);
    }
    if (!quiet) {
        std::cerr << "target val mIoU " << summary.target_val_miou << ", source val mIoU "
                  << summary.source_val_miou << "\n";
    }
    return summary;
}

// --- ablation harness --------------------------------------------------------

struct AblationRow {
    std::string name;
    std::map<std::string, std::string> overrides;
};

struct AblationResult {
    std::string name;
    bool failed = false;
    std::string error;
    std::vector<double> miou_per_seed;
    double miou_median = 0.0;
    std::vector<double> class_iou_median;  // per class, NaN where undefined in any seed
};

inline double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Table-1-style loss ablation rows at the configured K.
inline std::vector<AblationRow> table1_rows() {
    return {
        {"source_only", {{"loss.toggle", "seg"}, {"group.k", "1"}}},
        {"cadv", {{"loss.toggle", "seg,cadv"}}},
        {"cadv_co", {{"loss.toggle", "seg,cadv,co"}}},
        {"cadv_co_orth", {{"loss.toggle", "seg,cadv,co,orth"}}},
        {"full", {{"loss.toggle", "seg,cadv,co,orth,cl"}}},
    };
}

inline std::vector<AblationRow> grid_rows(const std::string& grid) {
    const std::size_t eq = grid.find('=');
    if (eq == std::string::npos) throw ConfigError("--grid expects key=v1,v2,..., got '" + grid + "'");
    std::string key = trim(grid.substr(0, eq));
    if (key == "K") key = "group.k";
    std::vector<AblationRow> rows;
    for (const std::string& v : split_csv(grid.substr(eq + 1)))
        rows.push_back({key + "=" + v, {{key, v}}});
    return rows;
}

// Runs every row at every seed, evaluates target-val mIoU, reports per-row
// medians. A row that throws is recorded as failed, the rest continue.
inline std::vector<AblationResult> run_ablation(const RunConfig& base,
                                                const std::vector<AblationRow>& rows,
                                                bool quiet = true) {
    if (base.out_dir.empty()) throw ConfigError("ablate: out.dir is required");
    std::vector<AblationResult> results;
    for (const AblationRow& row : rows) {
        AblationResult res;
        res.name = row.name;
        std::vector<std::vector<double>> class_iou_seeds;
        try {
            for (int s = 0; s < base.ablate_seeds; ++s) {
                RunConfig cfg = base;
                apply_run_config_kv(cfg, row.overrides);
                cfg.train.seed = base.train.seed + s;
                cfg.name = row.name + "_seed" + std::to_string(cfg.train.seed);
                cfg.out_dir =
                    (fs::path(base.out_dir) / row.name / ("seed" + std::to_string(cfg.train.seed)))
                        .string();
                RunSummary summary = run_training(cfg, quiet);
                res.miou_per_seed.push_back(summary.target_val_miou);
                class_iou_seeds.push_back(summary.target_iou);
            }
            res.miou_median = median(res.miou_per_seed);
            if (!class_iou_seeds.empty()) {
                const std::size_t cls = class_iou_seeds[0].size();
                for (std::size_t u = 0; u < cls; ++u) {
                    std::vector<double> per_seed;
                    for (const auto& seed_iou : class_iou_seeds)
                        if (!std::isnan(seed_iou[u])) per_seed.push_back(seed_iou[u]);
                    res.class_iou_median.push_back(per_seed.empty() ? std::nan("") : median(per_seed));
                }
            }
        } catch (const std::exception& e) {
            res.failed = true;
            res.error = e.what();
        }
        results.push_back(std::move(res));
    }
    return results;
}

inline std::string ablation_table_csv(const std::vector<AblationResult>& results,
                                      const std::vector<std::string>& class_names) {
    std::ostringstream out;
    out << "config";
    for (const std::string& n : class_names) out << "," << n;
    out << ",miou,status\n";
    for (const AblationResult& r : results) {
        out << r.name;
        if (r.failed) {
            for (std::size_t u = 0; u < class_names.size(); ++u) out << ",";
            out << ",,FAILED: " << r.error << "\n";
            continue;
        }
        for (std::size_t u = 0; u < class_names.size(); ++u) {
            out << ",";
            if (u < r.class_iou_median.size() && !std::isnan(r.class_iou_median[u]))
                out << detail::fmt_double(r.class_iou_median[u]);
        }
        out << "," << detail::fmt_double(r.miou_median) << ",ok\n";
    }
    return out.str();
}

inline std::string ablation_table_text(const std::vector<AblationResult>& results) {
    std::ostringstream out;
    for (const AblationResult& r : results) {
        out << "  " << r.name << ": ";
        if (r.failed) {
            out << "FAILED (" << r.error << ")\n";
            continue;
        }
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.1f", r.miou_median * 100.0);
        out << buf << " mIoU (seeds:";
        for (double m : r.miou_per_seed) {
            std::snprintf(buf, sizeof(buf), " %.1f", m * 100.0);
            out << buf;
        }
        out << ")\n";
    }
    return out.str();
}

// --- diagnostics over a trained checkpoint ------------------------------------

struct VisualizationOutputs {
    std::vector<std::string> group_map_paths;
    std::string scatter_csv;
    std::string scatter_png;
    std::string diagnostics_json;
    GroupDiagnostics diagnostics;
};

// Group-assignment renderings, a 2-D projection of the output distributions of
// both domains, and the per-group consistency / orthogonality / share report.
inline VisualizationOutputs run_visualization(TrainState& state, const DatasetManifest& manifest,
                                              const std::string& out_dir, int max_images = 6,
                                              std::uint64_t seed = 7) {
    fs::create_directories(out_dir);
    VisualizationOutputs out;

    std::vector<Tensor> probs;
    std::vector<LabelMap> labels;
    std::vector<Domain> domains;
    std::vector<GroupProbabilities> assigns;
    std::vector<std::vector<ClassDistribution>> qs;  // per map per group

    for (Domain domain : {Domain::source, Domain::target}) {
        int count = 0;
        for (const ManifestItem* item : manifest.select(Split::val, domain)) {
            if (!item->label_path) continue;
            if (count >= max_images) break;
            Image img = load_image(manifest, *item);
            ScoreMap s = state.g.forward(img);
            GroupProbabilities assign = group_assign(state.c, s, /*training=*/false);
            // render the hard grouping
            IndexedImage gm = render_group_map(assign);
            const std::string name = std::string("group_map_") + domain_name(domain) + "_" +
                                     std::to_string(count) + ".png";
            const std::string path = (fs::path(out_dir) / name).string();
            write_png(path, gm);
            out.group_map_paths.push_back(path);

            std::vector<GroupFeature> feats = group_features(s, assign);
            std::vector<ClassDistribution> q;
            for (const GroupFeature& f : feats) q.push_back(class_distribution(f));
            qs.push_back(std::move(q));
            probs.push_back(s.prob);
            labels.push_back(load_label(manifest, *item));
            domains.push_back(domain);
            assigns.push_back(std::move(assign));
            ++count;
        }
    }
    if (probs.size() < 2) throw DataError("visualize: need labeled val items in both domains");

    // projection scatter
    std::vector<const Tensor*> prob_ptrs;
    std::vector<const LabelMap*> label_ptrs;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        prob_ptrs.push_back(&probs[i]);
        label_ptrs.push_back(&labels[i]);
    }
    ProjectionResult proj = project_outputs(prob_ptrs, label_ptrs, domains, 256, seed);
    out.scatter_csv = (fs::path(out_dir) / "projection.csv").string();
    {
        std::ofstream csv(out.scatter_csv);
        csv << "x,y,class,domain\n";
        for (const ProjectedPoint& p : proj.points)
            csv << detail::fmt_double(p.x) << "," << detail::fmt_double(p.y) << "," << p.cls << ","
                << domain_name(p.domain) << "\n";
    }
    out.scatter_png = (fs::path(out_dir) / "projection.png").string();
    write_png(out.scatter_png,
              render_scatter(proj, manifest.palette.empty() ? synth::label_palette()
                                                            : manifest.palette));

    // per-group diagnostics: mean Q per domain, pixel shares, cosine matrices
    const int k_count = state.cfg.k;
    std::vector<ClassDistribution> q_src(k_count, ClassDistribution(state.cfg.cls, 0.0));
    std::vector<ClassDistribution> q_tgt(k_count, ClassDistribution(state.cfg.cls, 0.0));
    std::vector<const GroupProbabilities*> assign_src, assign_tgt;
    int n_src = 0, n_tgt = 0;
    for (std::size_t i = 0; i < qs.size(); ++i) {
        const bool src = domains[i] == Domain::source;
        auto& acc = src ? q_src : q_tgt;
        (src ? n_src : n_tgt) += 1;
        for (int k = 0; k < k_count; ++k)
            for (int u = 0; u < state.cfg.cls; ++u) acc[k][u] += qs[i][k][u];
        (src ? assign_src : assign_tgt).push_back(&assigns[i]);
    }
    for (int k = 0; k < k_count; ++k)
        for (int u = 0; u < state.cfg.cls; ++u) {
            q_src[k][u] /= std::max(1, n_src);
            q_tgt[k][u] /= std::max(1, n_tgt);
        }
    out.diagnostics = group_diagnostics(q_src, q_tgt, pixel_shares(assign_src),
                                        pixel_shares(assign_tgt));

    nlohmann::ordered_json j;
    j["consistency"] = out.diagnostics.consistency;
    j["cos_source"] = out.diagnostics.cos_source;
    j["cos_target"] = out.diagnostics.cos_target;
    j["pixel_share_source"] = out.diagnostics.pixel_share_source;
    j["pixel_share_target"] = out.diagnostics.pixel_share_target;
    j["collapsed"] = out.diagnostics.collapsed;
    j["q_source"] = out.diagnostics.q_source;
    j["q_target"] = out.diagnostics.q_target;
    out.diagnostics_json = (fs::path(out_dir) / "group_diagnostics.json").string();
    {
        std::ofstream jf(out.diagnostics_json);
        jf << j.dump(2) << "\n";
    }
    return out;
}

}  // namespace groupalign
