// Command-line front end: generate / train / evaluate / ablate / visualize.
#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "groupalign/config.hpp"
#include "groupalign/experiment.hpp"

using namespace groupalign;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitData = 4;
constexpr int kExitNumeric = 5;

const char* kKeyReference =
    "Config keys (file or --set key=value; later settings win):\n"
    "  group.k / K             group count              (paper: 8)\n"
    "  loss.lambda_co          consistency weight       (paper: 0.001)\n"
    "  loss.lambda_orth        orthogonality weight     (paper: 0.001)\n"
    "  loss.lambda_cadv        adversarial weight       (paper: 0.001)\n"
    "  loss.lambda_cl          class-equivalence weight (paper: 0.0001)\n"
    "  loss.tau                pseudo-label threshold   (paper: 0.05)\n"
    "  loss.toggle             enabled terms, csv       (desk: seg,cadv,co,orth,cl)\n"
    "  train.lr_g              segmentation SGD rate    (paper: 2.5e-4)\n"
    "  train.lr_c              grouping SGD rate        (paper: 1e-3)\n"
    "  train.lr_d              discriminator Adam rate  (paper: 1e-4)\n"
    "  train.poly_power        poly schedule power      (paper: 0.9)\n"
    "  train.momentum          SGD momentum for G       (paper: 0.9)\n"
    "  train.total_iters       iterations               (desk: 20000; paper: 120000)\n"
    "  train.batch_size        source/target pairs      (desk: 2)\n"
    "  train.seed              master seed              (desk: 1)\n"
    "  model.widths            G conv widths, csv       (desk: 32,64,128,128)\n"
    "  disc.channels           D conv widths, csv       (paper: 64,128,256,512,1)\n"
    "  disc.condition_mode     q | ones                 (desk: q)\n"
    "  synth.*                 dataset generator spec; see README\n"
    "Exit codes: 0 ok, 2 usage, 3 config, 4 data, 5 numeric.\n";

std::string resolve_out(const std::string& dir) {
    const char* root = std::getenv("GROUPALIGN_OUT_ROOT");
    if (root && *root && !dir.empty() && dir[0] != '/')
        return std::string(root) + "/" + dir;
    return dir;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-domain grouping and alignment for domain-adaptive segmentation"};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer(kKeyReference);

    std::string config_path;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "flat key=value config file");
    app.add_option("--set", sets, "override a config key, e.g. --set K=8");

    std::string data_root, out_dir, name, checkpoint, domain = "both", grid, preset;
    int seeds = 0, images = 6, limit = 0;
    bool quiet = false;

    CLI::App* cmd_generate = app.add_subcommand("generate", "write the synthetic two-domain dataset");
    cmd_generate->add_option("--out", out_dir, "dataset output directory")->required();

    CLI::App* cmd_train = app.add_subcommand("train", "train G, C and D jointly");
    cmd_train->add_option("--data", data_root, "dataset root (manifest.json or folder layout)");
    cmd_train->add_option("--out", out_dir, "run output directory");
    cmd_train->add_option("--name", name, "run name");
    cmd_train->add_flag("--quiet", quiet, "suppress progress output");

    CLI::App* cmd_eval = app.add_subcommand("evaluate", "score a checkpoint on the val split");
    cmd_eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    cmd_eval->add_option("--data", data_root, "dataset root")->required();
    cmd_eval->add_option("--domain", domain, "source | target | both");
    cmd_eval->add_option("--limit", limit, "evaluate at most N images per domain");

    CLI::App* cmd_ablate = app.add_subcommand("ablate", "run a config grid, report median mIoU");
    cmd_ablate->add_option("--data", data_root, "dataset root");
    cmd_ablate->add_option("--out", out_dir, "ablation output directory");
    cmd_ablate->add_option("--grid", grid, "key=v1,v2,... e.g. K=1,2,4,8");
    cmd_ablate->add_option("--preset", preset, "table1 | ksweep");
    cmd_ablate->add_option("--seeds", seeds, "seeds per config (default 3)");

    CLI::App* cmd_vis = app.add_subcommand("visualize",
                                           "group maps, projection scatter, group diagnostics");
    cmd_vis->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    cmd_vis->add_option("--data", data_root, "dataset root")->required();
    cmd_vis->add_option("--out", out_dir, "output directory")->required();
    cmd_vis->add_option("--images", images, "val images per domain");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: usage: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        RunConfig cfg = load_run_config(config_path, sets);
        if (!data_root.empty()) cfg.data_root = data_root;
        if (!out_dir.empty()) cfg.out_dir = resolve_out(out_dir);
        if (!name.empty()) cfg.name = name;
        if (limit > 0) cfg.eval_limit = limit;
        if (seeds > 0) cfg.ablate_seeds = seeds;

        if (*cmd_generate) {
            DatasetManifest m = generate_synthetic(cfg.synth, cfg.out_dir);
            std::cout << "generated " << m.items.size() << " items under " << cfg.out_dir << "\n";
            return kExitOk;
        }
        if (*cmd_train) {
            for (const std::string& w : cfg.validate()) std::cerr << "warning: " << w << "\n";
            RunSummary s = run_training(cfg, quiet);
            std::cout << "final target val mIoU " << s.target_val_miou << "\n";
            std::cout << "final source val mIoU " << s.source_val_miou << "\n";
            std::cout << "checkpoint " << s.checkpoint_path << "\n";
            return kExitOk;
        }
        if (*cmd_eval) {
            TrainState state = load_train_state(checkpoint);
            DatasetManifest m = ingest_folder(cfg.data_root);
            bool printed = false;
            for (Domain d : {Domain::source, Domain::target}) {
                if (domain != "both" && domain != domain_name(d)) continue;
                EvalOutcome out = evaluate_split(state.g, m, Split::val, d, cfg.eval_limit);
                std::cout << domain_name(d) << " val (" << out.images << " images):\n"
                          << iou_table_text(m.class_names, out.iou, out.iou.miou);
                printed = true;
            }
            if (!printed) throw ConfigError("--domain must be source, target or both");
            return kExitOk;
        }
        if (*cmd_ablate) {
            std::vector<AblationRow> rows;
            if (!preset.empty()) {
                if (preset == "table1") rows = table1_rows();
                else if (preset == "ksweep") rows = grid_rows("K=1,2,4,8");
                else throw ConfigError("unknown preset '" + preset + "'");
            }
            if (!grid.empty()) {
                std::vector<AblationRow> extra = grid_rows(grid);
                rows.insert(rows.end(), extra.begin(), extra.end());
            }
            std::vector<AblationResult> results = run_ablation(cfg, rows);
            DatasetManifest m = ingest_folder(cfg.data_root);
            const std::string csv = ablation_table_csv(results, m.class_names);
            std::ofstream csv_out(fs::path(cfg.out_dir) / "ablation.csv");
            csv_out << csv;
            std::ofstream txt_out(fs::path(cfg.out_dir) / "ablation.txt");
            const std::string text = ablation_table_text(results);
            txt_out << text;
            std::cout << text;
            for (const AblationResult& r : results)
                if (r.failed) return kExitNumeric;
            return kExitOk;
        }
        if (*cmd_vis) {
            TrainState state = load_train_state(checkpoint);
            DatasetManifest m = ingest_folder(cfg.data_root);
            VisualizationOutputs out = run_visualization(state, m, cfg.out_dir, images);
            std::cout << "wrote " << out.group_map_paths.size() << " group maps, "
                      << out.scatter_csv << ", " << out.diagnostics_json << "\n";
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
