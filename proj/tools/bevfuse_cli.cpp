#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bevfuse/bevfuse.hpp"

namespace fs = std::filesystem;
using namespace bevfuse;

namespace {

pipeline::RunConfig load_config(const std::string& config_path, std::optional<double> lr,
                                std::optional<int> batch, std::optional<int> epochs,
                                std::optional<std::uint64_t> seed,
                                const std::string& dataset_root, const std::string& out) {
    pipeline::RunConfig cfg = config_path.empty() ? pipeline::preset_config("desk")
                                                  : pipeline::load_run_config(config_path);
    // flags win over the config file
    if (lr) cfg.trainer.lr = *lr;
    if (batch) cfg.trainer.batch = *batch;
    if (epochs) cfg.trainer.epochs = *epochs;
    if (seed) cfg.trainer.seed = *seed;
    if (!dataset_root.empty()) cfg.dataset_root = dataset_root;
    if (!out.empty()) cfg.output_root = out;
    cfg.trainer.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BEV obstacle perception toolkit: fisheye + ultrasonic fusion"};
    app.require_subcommand(1);

    std::string config_path, dataset_root, out_path, mode_str = "multimodal", split = "val";
    std::optional<double> lr;
    std::optional<int> batch, epochs;
    std::optional<std::uint64_t> seed_flag;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration");
        cmd->add_option("--seed", seed, "master RNG seed");
        cmd->add_option("--out", out_path, "output path");
    };

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic dataset");
    add_common(sim_cmd);
    std::optional<int> scenes;
    sim_cmd->add_option("--scenes", scenes, "total scene count (splits by the 24/3/8 ratio)");
    sim_cmd->add_option("--dataset", dataset_root, "dataset root to write");

    // map-uls
    auto* map_cmd = app.add_subcommand("map-uls", "export ultrasonic BEV maps for one scene");
    std::string scene_dir;
    map_cmd->add_option("scene", scene_dir, "scene directory")->required();
    map_cmd->add_option("--out", out_path, "output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd);
    train_cmd->add_option("--mode", mode_str, "multimodal|visible|uls");
    train_cmd->add_option("--dataset", dataset_root, "dataset root");
    train_cmd->add_option("--lr", lr, "learning rate");
    train_cmd->add_option("--batch", batch, "batch size");
    train_cmd->add_option("--epochs", epochs, "epoch count");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string checkpoint;
    bool range_bands = false;
    eval_cmd->add_option("checkpoint", checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--dataset", dataset_root, "dataset root")->required();
    eval_cmd->add_option("--split", split, "train|val|test");
    eval_cmd->add_option("--out", out_path, "report CSV path")->required();
    eval_cmd->add_flag("--range-bands", range_bands, "add per-range-band rows");

    // render
    auto* render_cmd = app.add_subcommand("render", "render grids/masks/overlays to images");
    std::string render_type = "grid";
    std::vector<std::string> render_inputs;
    render_cmd->add_option("--type", render_type, "grid|mask|overlay");
    render_cmd->add_option("inputs", render_inputs, "input file(s)")->required();
    render_cmd->add_option("--out", out_path, "output image")->required();

    CLI11_PARSE(app, argc, argv);
    if (sim_cmd->count("--seed") || train_cmd->count("--seed")) seed_flag = seed;

    try {
        if (*sim_cmd) {
            auto cfg = load_config(config_path, lr, batch, epochs, seed_flag, dataset_root,
                                   out_path);
            if (cfg.dataset_root.empty() && !out_path.empty()) cfg.dataset_root = out_path;
            const auto summary = pipeline::cmd_simulate(cfg, seed_flag.value_or(cfg.trainer.seed),
                                                        scenes);
            std::printf("simulated %d scenes, %d frames -> %s\n", summary.scenes, summary.frames,
                        cfg.dataset_root.string().c_str());
        } else if (*map_cmd) {
            const int frames = pipeline::cmd_map_uls(scene_dir, out_path);
            std::printf("exported %d ultrasonic BEV maps -> %s\n", frames, out_path.c_str());
        } else if (*train_cmd) {
            auto cfg = load_config(config_path, lr, batch, epochs, seed_flag, dataset_root,
                                   out_path);
            const auto result = pipeline::cmd_train(cfg, nn::mode_from_name(mode_str));
            std::printf("trained %s for %zu epochs, final loss %.6g\ncheckpoint: %s\nloss log: %s\n",
                        mode_str.c_str(), result.epoch_losses.size(),
                        result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back(),
                        result.checkpoint.string().c_str(), result.loss_log.string().c_str());
        } else if (*eval_cmd) {
            pipeline::EvalOptions opts;
            opts.range_bands = range_bands;
            const auto result = pipeline::cmd_eval(checkpoint, dataset_root, split, out_path, opts);
            std::printf("evaluated %zu frames -> %s\n", result.per_frame.size(),
                        out_path.c_str());
            std::printf("aggregate: recall %.4f dice %.4f precision %.4f iou %.4f E %.4f D %.4f "
                        "ND %.4f\n",
                        result.aggregate.recall, result.aggregate.dice, result.aggregate.precision,
                        result.aggregate.iou, result.aggregate.euclidean_e,
                        result.aggregate.distance_d, result.aggregate.norm_nd);
        } else if (*render_cmd) {
            std::vector<fs::path> inputs(render_inputs.begin(), render_inputs.end());
            pipeline::cmd_render(pipeline::render_kind_from_name(render_type), inputs, out_path);
            std::printf("rendered %s -> %s\n", render_type.c_str(), out_path.c_str());
        }
    } catch (const Error& e) {
        std::cerr << format_error(e) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "ERROR internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
