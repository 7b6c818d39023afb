// mixseg command-line front end: dataset generation, training, evaluation,
// ablation grids, qualitative panels and the numeric self-check.

#include <chrono>
#include <deque>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "mixseg/checkpoint.hpp"
#include "mixseg/config.hpp"
#include "mixseg/dataset_io.hpp"
#include "mixseg/grids.hpp"
#include "mixseg/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace mixseg;

namespace {

// Fixed display palette for label panels, documented in the panel README.
constexpr std::uint8_t kPanelPalette[kNumClasses][3] = {
    {40, 40, 40},    // background
    {220, 60, 50},   // circle
    {60, 100, 220},  // square
    {235, 220, 70},  // triangle
    {200, 70, 200},  // stripe-bar
};

Tensor<float> colorize(const LabelMap& lbl) {
    Tensor<float> img({3, lbl.h, lbl.w});
    for (std::size_t y = 0; y < lbl.h; ++y)
        for (std::size_t x = 0; x < lbl.w; ++x) {
            const std::uint8_t c = lbl.at(y, x);
            for (std::size_t ch = 0; ch < 3; ++ch)
                img.at3(ch, y, x) =
                    (c < kNumClasses ? kPanelPalette[c][ch] : 255) / 255.0f;
        }
    return img;
}

constexpr std::size_t kPanelGutter = 2;

// [image | truth | prediction], each tile followed by a black gutter column,
// so the panel is exactly 3*(W+gutter) wide.
Tensor<float> make_panel(const Tensor<float>& image, const LabelMap& truth,
                         const LabelMap& pred) {
    const std::size_t H = image.dim(1), W = image.dim(2);
    const std::size_t tile = W + kPanelGutter;
    Tensor<float> panel({3, H, 3 * tile});
    const Tensor<float> tiles[3] = {image, colorize(truth), colorize(pred)};
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    panel.at3(c, y, t * tile + x) = tiles[t].at3(c, y, x);
    return panel;
}

void write_dataset_resolved(const fs::path& dir, const ToyShiftConfig& cfg,
                            bool hidden_labels) {
    std::ofstream os(dir / "config.resolved");
    os << "command = gen-data\n"
       << "seed = " << cfg.seed << "\n"
       << "n_source = " << cfg.n_source << "\n"
       << "n_target = " << cfg.n_target << "\n"
       << "n_labeled = " << cfg.n_labeled << "\n"
       << "n_eval = " << cfg.n_eval << "\n"
       << "size = " << cfg.image_size << "\n"
       << "with_hidden_labels = " << (hidden_labels ? "true" : "false") << "\n";
}

int cmd_gen_data(const std::string& out, const ToyShiftConfig& cfg, bool hidden, bool force) {
    const fs::path dir(out);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw ConfigError("output directory " + out + " is not empty (use --force to overwrite)");
    if (force && fs::exists(dir)) fs::remove_all(dir);
    const GeneratedDataset d = generate_toyshift(cfg);
    save_dataset(d, dir, hidden);
    write_dataset_resolved(dir, cfg, hidden);
    std::cout << "wrote " << d.split.source.size() << " source, "
              << d.split.labeled_target.size() << " labeled target, "
              << d.split.unlabeled_target.size() << " unlabeled target, "
              << d.split.eval_target.size() << " eval images to " << out << "\n";
    return 0;
}

int cmd_train(const TrainConfig& cfg, const std::string& out) {
    if (cfg.dataset_dir.empty()) throw ConfigError("no dataset configured (set dataset=...)");
    if (!fs::exists(cfg.dataset_dir))
        throw ConfigError("dataset directory not found: " + cfg.dataset_dir);
    cfg.validate();
    const DatasetSplit data = load_dataset(cfg.dataset_dir);
    write_resolved_config(cfg, out);
    const RunReport rep = run<float>(cfg, data, out, &std::cout);
    std::cout << "final mIoU " << 100.0 * rep.final_miou << "  best " << 100.0 * rep.best_miou
              << "  (" << rep.seconds << "s)\n"
              << "metrics: " << rep.metrics_csv << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset,
             const std::string& csv_out) {
    const Params<float> params = load_checkpoint<float>(checkpoint);
    const DatasetSplit data = load_dataset(dataset);
    if (params.arch.num_classes != data.num_classes)
        throw ConfigError("checkpoint has " + std::to_string(params.arch.num_classes) +
                          " classes but dataset has " + std::to_string(data.num_classes));
    const IouReport r = evaluate_model(params, std::span(data.eval_target));
    print_iou_table(std::cout, r);
    std::ostringstream row;
    row.precision(10);
    row << "miou," << r.mean;
    for (std::size_t c = 0; c < r.per_class.size(); ++c)
        row << ",iou_" << class_name(c) << "," << (r.valid[c] ? r.per_class[c] : -1.0);
    std::cout << row.str() << "\n";
    if (!csv_out.empty()) {
        std::ofstream os(csv_out, std::ios::app);
        os << row.str() << "\n";
    }
    return 0;
}

int cmd_ablate(const TrainConfig& base, const std::string& grid_name, std::size_t seeds,
               std::size_t jobs, const std::string& out) {
    if (base.dataset_dir.empty()) throw ConfigError("no dataset configured (set dataset=...)");
    const std::vector<GridRow> rows = named_grid(grid_name);
    const DatasetSplit data = load_dataset(base.dataset_dir);
    fs::create_directories(out);
    write_resolved_config(base, out);
    const GridResult g =
        run_grid<float>(base, rows, seeds, data, jobs, out, &std::cout);
    write_grid_csv(g, fs::path(out) / "summary.csv");
    write_grid_markdown(g, fs::path(out) / "summary.md", grid_name + " grid");
    std::cout << "grid complete; summary in " << out << "/summary.{csv,md}\n";
    for (const auto& r : g.rows)
        std::cout << r.row << ": median mIoU " << 100.0 * r.median << "\n";
    return 0;
}

int cmd_panel(const std::string& checkpoint, const std::string& dataset,
              const std::string& out) {
    const Params<float> params = load_checkpoint<float>(checkpoint);
    const DatasetSplit data = load_dataset(dataset);
    if (params.arch.num_classes != data.num_classes)
        throw ConfigError("checkpoint has " + std::to_string(params.arch.num_classes) +
                          " classes but dataset has " + std::to_string(data.num_classes));
    fs::create_directories(out);
    {
        std::ofstream resolved(fs::path(out) / "config.resolved");
        resolved << "command = panel\ncheckpoint = " << checkpoint << "\ndataset = " << dataset
                 << "\n";
    }
    for (const Sample& s : data.eval_target) {
        Tensor<float> batched;
        batched.shape = {1, 3, s.image.dim(1), s.image.dim(2)};
        batched.data = s.image.data;
        const LabelMap pred = predict(params, batched)[0];
        write_ppm(fs::path(out) / (sample_stem(s.id) + "_panel.ppm"),
                  make_panel(s.image, s.label, pred));
    }
    std::ofstream readme(fs::path(out) / "README.md");
    readme << "# Prediction panels\n\nEach panel shows image | ground truth | prediction,\n"
              "tiles separated by a " << kPanelGutter << "px black gutter.\n\nLabel colors:\n\n"
              "| class | RGB |\n|---|---|\n";
    for (std::size_t c = 0; c < kNumClasses; ++c)
        readme << "| " << class_name(c) << " | (" << int(kPanelPalette[c][0]) << ", "
               << int(kPanelPalette[c][1]) << ", " << int(kPanelPalette[c][2]) << ") |\n";
    std::cout << "wrote " << data.eval_target.size() << " panels to " << out << "\n";
    return 0;
}

int cmd_selfcheck() {
    const auto t0 = std::chrono::steady_clock::now();
    const bool ok = run_checks(standard_checks(), std::cout);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (ok ? "all checks passed" : "CHECKS FAILED") << " in " << secs << "s\n";
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised domain adaptation for segmentation via "
                 "inter- and intra-domain class mixing"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate the two-domain synthetic benchmark");
    std::string gen_out = "dataset";
    ToyShiftConfig gen_cfg;
    bool gen_hidden = false, gen_force = false;
    gen->add_option("--out", gen_out, "Output directory");
    gen->add_option("--seed", gen_cfg.seed, "Generation seed");
    gen->add_option("--n-source", gen_cfg.n_source, "Source pool size");
    gen->add_option("--n-target", gen_cfg.n_target, "Target training pool size");
    gen->add_option("--n-labeled", gen_cfg.n_labeled, "Labeled target subset size");
    gen->add_option("--n-eval", gen_cfg.n_eval, "Evaluation pool size");
    gen->add_option("--size", gen_cfg.image_size, "Image side length");
    gen->add_flag("--with-hidden-labels", gen_hidden,
                  "Also export the withheld unlabeled-pool labels");
    gen->add_flag("--force", gen_force, "Overwrite an existing non-empty directory");

    // shared train-config options; deque keeps the bound value strings at
    // stable addresses while options are appended
    std::string config_file;
    struct Override {
        CLI::Option* opt;
        std::string key;
        std::string value;
    };
    auto add_cfg_options = [&](CLI::App* cmd, std::deque<Override>& ovr) {
        cmd->add_option("--config", config_file, "Config file (key = value lines)");
        for (const auto& f : mixseg::config_detail::fields()) {
            ovr.push_back({nullptr, f.key, ""});
            auto& slot = ovr.back();
            std::string flag = "--" + f.key;
            for (auto& ch : flag)
                if (ch == '_') ch = '-';
            slot.opt = cmd->add_option(flag, slot.value, "Override config key " + f.key);
        }
    };
    auto resolve_cfg = [&](std::deque<Override>& ovr) {
        TrainConfig cfg;
        if (!config_file.empty()) cfg = load_config(config_file);
        std::map<std::string, std::string> kv;
        for (auto& o : ovr)
            if (o.opt->count()) kv[o.key] = o.value;
        apply_config_pairs(cfg, kv);
        return cfg;
    };

    // train
    auto* train = app.add_subcommand("train", "Train on a generated dataset");
    std::string train_out = "runs/run";
    std::deque<Override> train_ovr;
    add_cfg_options(train, train_ovr);
    train->add_option("--out", train_out, "Run output directory");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the eval split");
    std::string eval_ckpt, eval_dataset, eval_csv;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval->add_option("--dataset", eval_dataset, "Dataset directory")->required();
    eval->add_option("--csv", eval_csv, "Append the result row to this CSV file");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
    std::string grid_name, ablate_out = "runs/grid";
    std::size_t grid_seeds = 5, grid_jobs = 0;
    std::deque<Override> ablate_ovr;
    ablate->add_option("--grid", grid_name, "losses | strategies | weights")->required();
    ablate->add_option("--seeds", grid_seeds, "Seeds per grid row");
    ablate->add_option("--jobs", grid_jobs, "Max parallel runs (default: all cores)");
    add_cfg_options(ablate, ablate_ovr);
    ablate->add_option("--out", ablate_out, "Grid output directory");

    // panel
    auto* panel = app.add_subcommand("panel", "Export image|truth|prediction panels");
    std::string panel_ckpt, panel_dataset, panel_out = "panels";
    panel->add_option("--checkpoint", panel_ckpt, "Checkpoint file")->required();
    panel->add_option("--dataset", panel_dataset, "Dataset directory")->required();
    panel->add_option("--out", panel_out, "Output directory");

    // selfcheck
    app.add_subcommand("selfcheck", "Run the numeric release-gate checks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_cfg, gen_hidden, gen_force);
        if (train->parsed()) return cmd_train(resolve_cfg(train_ovr), train_out);
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_dataset, eval_csv);
        if (ablate->parsed())
            return cmd_ablate(resolve_cfg(ablate_ovr), grid_name, grid_seeds, grid_jobs,
                              ablate_out);
        if (panel->parsed()) return cmd_panel(panel_ckpt, panel_dataset, panel_out);
        return cmd_selfcheck();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const RuntimeAbort& e) {
        std::cerr << "aborted: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
