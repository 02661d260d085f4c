#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "bevfuse/common.hpp"
#include "bevfuse/dataset.hpp"
#include "bevfuse/io.hpp"
#include "bevfuse/metrics.hpp"
#include "bevfuse/nn/network.hpp"
#include "bevfuse/nn/optim.hpp"
#include "bevfuse/sim.hpp"
#include "bevfuse/sync.hpp"

namespace bevfuse::pipeline {

namespace fs = std::filesystem;

struct TrainerConfig {
    double lr = 1e-3;
    int batch = 8;
    int epochs = 100;
    std::uint64_t seed = 0;
    int max_frames_per_scene = 0;  // 0 = use every frame
    double tau_decay = 0.95;       // per-epoch annealing of the sampling temperature
    double camera_range = 6.0;

    void validate() const {
        require(lr > 0.0, "config", "learning rate must be positive");
        require(batch >= 1, "config", "batch size must be >= 1");
        require(epochs >= 1, "config", "epoch count must be >= 1");
    }
};

struct RunConfig {
    GridSpec grid{6.0, 6.0, 0.05};
    nn::NetworkConfig net;
    TrainerConfig trainer;
    sim::DatasetConfig dataset;
    fs::path dataset_root;
    fs::path output_root;
};

// Desk preset: 5 cm grid, 64 px images, 3 pyramid levels. The fidelity preset
// switches to the full-scale constants: 1 cm grid (600 x 1200 cells) and a
// 5-level pyramid.
inline RunConfig preset_config(const std::string& name) {
    RunConfig cfg;
    if (name == "desk") {
        cfg.grid = GridSpec(6.0, 6.0, 0.05);
        cfg.net.pyramid_levels = 3;
        cfg.net.bev_rows = 12;
        cfg.net.bev_cols = 24;
        cfg.net.image_size = 64;
    } else if (name == "fidelity") {
        cfg.grid = GridSpec(6.0, 6.0, 0.01);
        cfg.net.pyramid_levels = 5;
        cfg.net.bev_rows = 24;
        cfg.net.bev_cols = 48;
        cfg.net.image_size = 128;
    } else {
        fail("config", "unknown preset '" + name + "' (expected desk or fidelity)");
    }
    cfg.dataset.grid = cfg.grid;
    cfg.dataset.image_size = cfg.net.image_size;
    return cfg;
}

inline RunConfig load_run_config(const fs::path& path) {
    const io::json j = io::read_json(path);
    RunConfig cfg = preset_config(j.value("preset", "desk"));
    if (j.contains("grid")) cfg.grid = io::gridspec_from_json(j["grid"]);
    if (j.contains("network")) {
        io::json merged = io::network_config_to_json(cfg.net);
        merged.update(j["network"]);
        cfg.net = io::network_config_from_json(merged);
    }
    if (j.contains("trainer")) {
        const io::json& t = j["trainer"];
        cfg.trainer.lr = t.value("lr", cfg.trainer.lr);
        cfg.trainer.batch = t.value("batch", cfg.trainer.batch);
        cfg.trainer.epochs = t.value("epochs", cfg.trainer.epochs);
        cfg.trainer.seed = t.value("seed", cfg.trainer.seed);
        cfg.trainer.max_frames_per_scene =
            t.value("max_frames_per_scene", cfg.trainer.max_frames_per_scene);
        cfg.trainer.tau_decay = t.value("tau_decay", cfg.trainer.tau_decay);
        cfg.trainer.camera_range = t.value("camera_range", cfg.trainer.camera_range);
    }
    if (j.contains("simulate")) {
        const io::json& s = j["simulate"];
        cfg.dataset.scenes_train = s.value("scenes_train", cfg.dataset.scenes_train);
        cfg.dataset.scenes_val = s.value("scenes_val", cfg.dataset.scenes_val);
        cfg.dataset.scenes_test = s.value("scenes_test", cfg.dataset.scenes_test);
        cfg.dataset.scene_duration_ms = s.value("duration_ms", cfg.dataset.scene_duration_ms);
        cfg.dataset.min_obstacles = s.value("min_obstacles", cfg.dataset.min_obstacles);
        cfg.dataset.max_obstacles = s.value("max_obstacles", cfg.dataset.max_obstacles);
        cfg.dataset.ego_speed_max = s.value("ego_speed_max", cfg.dataset.ego_speed_max);
        cfg.dataset.moving_fraction = s.value("moving_fraction", cfg.dataset.moving_fraction);
    }
    if (j.contains("layout_path")) {
        const fs::path p = j["layout_path"].get<std::string>();
        require(fs::exists(p), "config", "layout file does not exist: " + p.string());
        cfg.dataset.layout_override = io::layout_from_json(io::read_json(p));
    }
    if (j.contains("calib_path")) {
        const fs::path p = j["calib_path"].get<std::string>();
        require(fs::exists(p), "config", "calibration file does not exist: " + p.string());
        cfg.dataset.calib_override = io::calibration_from_json(io::read_json(p));
    }
    if (j.contains("dataset_root")) cfg.dataset_root = j["dataset_root"].get<std::string>();
    if (j.contains("output_root")) cfg.output_root = j["output_root"].get<std::string>();
    cfg.trainer.validate();
    cfg.dataset.grid = cfg.grid;
    cfg.dataset.image_size = cfg.net.image_size;
    return cfg;
}

// ---- grid resampling helpers -------------------------------------------------

// Downsamples an amplitude grid to a coarser raster over the same extents:
// exact block mean when the cell ratio is integral, bilinear point sampling
// otherwise.
inline BevGrid resample_amplitude(const BevGrid& src, const GridSpec& dst_spec) {
    BevGrid dst(dst_spec, src.channels);
    const double ratio = dst_spec.cell_size / src.spec.cell_size;
    const bool integral = std::abs(ratio - std::llround(ratio)) < 1e-9 && ratio >= 1.0;
    if (integral) {
        const int k = static_cast<int>(std::llround(ratio));
        for (int r = 0; r < dst.rows(); ++r)
            for (int c = 0; c < dst.cols(); ++c)
                for (int ch = 0; ch < dst.channels; ++ch) {
                    double sum = 0.0;
                    for (int dr = 0; dr < k; ++dr)
                        for (int dc = 0; dc < k; ++dc) sum += src.at(r * k + dr, c * k + dc, ch);
                    dst.at(r, c, ch) = sum / (k * k);
                }
        return dst;
    }
    for (int r = 0; r < dst.rows(); ++r)
        for (int c = 0; c < dst.cols(); ++c) {
            const Vec2 center = cell_center(dst_spec, {r, c});
            const Vec2 g = grid_coords(src.spec, center);
            for (int ch = 0; ch < dst.channels; ++ch)
                dst.at(r, c, ch) = bilinear_sample(src, g.x, g.y, ch);
        }
    return dst;
}

// Label pooling: a coarse cell is an obstacle when any covered fine cell is.
inline BevGrid pool_labels(const BevGrid& src, const GridSpec& dst_spec) {
    BevGrid dst(dst_spec, 1);
    for (int r = 0; r < src.rows(); ++r)
        for (int c = 0; c < src.cols(); ++c) {
            if (src.at(r, c) <= 0.5) continue;
            if (auto cell = world_to_cell(dst_spec, cell_center(src.spec, {r, c})))
                dst.at(cell->row, cell->col) = 1.0;
        }
    return dst;
}

inline BevGrid mask_from_pgm(const io::Image8& img, const GridSpec& spec) {
    require(img.width == spec.cols() && img.height == spec.rows(), "io",
            "mask image does not match the grid raster");
    BevGrid mask(spec, 1);
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        mask.data[i] = img.pixels[i] > 127 ? 1.0 : 0.0;
    return mask;
}

// ---- sample preparation --------------------------------------------------------

struct PreparedSample {
    nn::ModelInput input;
    nn::Tensor occupancy_target;  // one-hot (1,2,2H,2W)
    nn::Tensor heatmap_target;    // (1,1,2H,2W) centroid gaussians
    BevGrid gt_mask;              // labels at the network output raster
    std::vector<ObstacleInstance> gt_instances;
    std::string frame_id;
};

inline double compress_amplitude(double a) { return a / (a + 0.5); }

// Turns one recorded frame into network tensors: the ultrasonic BEV map is
// mapped, ego-motion compensated to camera time, downsampled and compressed;
// the image is scaled to [0,1]; labels are pooled onto the output raster.
inline PreparedSample prepare_sample(const data::SceneData& scene, std::size_t frame_idx,
                                     const FramePair& pair, const nn::FusionModel& model) {
    const data::FrameRecord& rec = scene.frames[frame_idx];
    PreparedSample s;
    s.frame_id = scene.id + "/" + std::to_string(rec.id);

    if (model.uses_camera()) {
        const io::Image8 img = io::read_pgm(rec.image);
        require(img.width == model.config().image_size && img.height == model.config().image_size,
                "io", "image size does not match the network configuration");
        std::vector<double> vals(img.pixels.size());
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = img.pixels[i] / 255.0;
        s.input.image = nn::Tensor::from({1, 1, img.height, img.width}, std::move(vals));
    }
    if (model.uses_ultrasonic()) {
        const BevGrid raw = fill_grid(scene.uls[pair.uls_index], scene.layout.layout, scene.grid);
        const BevGrid comp = compensate_ego_motion(raw, pair.pose_delta);
        const BevGrid coarse = resample_amplitude(comp, model.output_grid());
        std::vector<double> vals(coarse.data.size());
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = compress_amplitude(coarse.data[i]);
        s.input.uls = nn::Tensor::from({1, 1, coarse.rows(), coarse.cols()}, std::move(vals));
    }

    const BevGrid fine_mask = mask_from_pgm(io::read_pgm(rec.gt), scene.grid);
    s.gt_mask = pool_labels(fine_mask, model.output_grid());
    s.gt_instances = extract_obstacles(s.gt_mask);

    const int rows = s.gt_mask.rows(), cols = s.gt_mask.cols();
    nn::Tensor target = nn::Tensor::zeros({1, 2, rows, cols});
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const bool obstacle = s.gt_mask.at(r, c) > 0.5;
            target.values()[(static_cast<std::size_t>(obstacle ? 1 : 0) * rows + r) * cols + c] =
                1.0;
        }
    s.occupancy_target = target;

    nn::Tensor heat = nn::Tensor::zeros({1, 1, rows, cols});
    const double sigma = 1.5 * model.output_grid().cell_size;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const Vec2 center = cell_center(model.output_grid(), {r, c});
            double best = 0.0;
            for (const auto& inst : s.gt_instances) {
                const Vec2 d = center - inst.centroid;
                best = std::max(best, std::exp(-dot(d, d) / (2.0 * sigma * sigma)));
            }
            heat.values()[static_cast<std::size_t>(r) * cols + c] = best;
        }
    s.heatmap_target = heat;
    return s;
}

inline std::vector<PreparedSample> prepare_scene(const data::SceneData& scene,
                                                 const nn::FusionModel& model,
                                                 int max_frames = 0) {
    std::vector<double> camera_ts;
    for (const auto& f : scene.frames) camera_ts.push_back(f.camera_ts);
    const auto pairs = match_frames(camera_ts, scene.uls, scene.odometry);
    require(pairs.size() == scene.frames.size(), "sync",
            "frame pairing dropped camera frames in scene " + scene.id);

    std::vector<std::size_t> picks;
    if (max_frames > 0 && static_cast<int>(scene.frames.size()) > max_frames) {
        const double step = static_cast<double>(scene.frames.size()) / max_frames;
        for (int i = 0; i < max_frames; ++i)
            picks.push_back(static_cast<std::size_t>(i * step));
    } else {
        picks.resize(scene.frames.size());
        std::iota(picks.begin(), picks.end(), 0);
    }

    std::vector<PreparedSample> out(picks.size());
    parallel_for(picks.size(), [&](std::size_t i) {
        out[i] = prepare_sample(scene, picks[i], pairs[picks[i]], model);
    });
    return out;
}

// ---- commands -------------------------------------------------------------------

inline sim::DatasetSummary cmd_simulate(const RunConfig& cfg, std::uint64_t seed,
                                        std::optional<int> scenes_override = {}) {
    sim::DatasetConfig dc = cfg.dataset;
    dc.root = cfg.dataset_root;
    require(!dc.root.empty(), "config", "simulate needs a dataset_root");
    if (scenes_override) dc = sim::scenes_by_ratio(dc, *scenes_override);
    return sim::generate_dataset(dc, seed);
}

// Exports one ego-motion-compensated ultrasonic BEV map per camera frame:
// a per-frame min/max normalized PGM for viewing plus the exact float dump.
inline int cmd_map_uls(const fs::path& scene_dir, const fs::path& out_dir) {
    const data::SceneData scene = data::load_scene(scene_dir);
    std::vector<double> camera_ts;
    for (const auto& f : scene.frames) camera_ts.push_back(f.camera_ts);
    const auto pairs = match_frames(camera_ts, scene.uls, scene.odometry);
    io::ensure_dir(out_dir);

    parallel_for(pairs.size(), [&](std::size_t k) {
        const BevGrid raw = fill_grid(scene.uls[pairs[k].uls_index], scene.layout.layout,
                                      scene.grid);
        const BevGrid comp = compensate_ego_motion(raw, pairs[k].pose_delta);
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu", k);
        io::write_grid(out_dir / (std::string(name) + ".grid"), comp);

        double lo = comp.data.empty() ? 0.0 : comp.data[0], hi = lo;
        for (double v : comp.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        io::Image8 img{comp.cols(), comp.rows(), std::vector<std::uint8_t>(comp.data.size(), 0)};
        if (hi > lo)
            for (std::size_t i = 0; i < comp.data.size(); ++i)
                img.pixels[i] =
                    static_cast<std::uint8_t>(std::lround((comp.data[i] - lo) / (hi - lo) * 255.0));
        io::write_pgm(out_dir / (std::string(name) + ".pgm"), img);
    });
    return static_cast<int>(pairs.size());
}

struct TrainResult {
    fs::path checkpoint;
    fs::path loss_log;
    std::vector<double> epoch_losses;
};

inline TrainResult cmd_train(const RunConfig& cfg, nn::Mode mode) {
    require(!cfg.dataset_root.empty() && fs::is_directory(cfg.dataset_root), "config",
            "train needs an existing dataset_root");
    require(!cfg.output_root.empty(), "config", "train needs an output_root");
    io::ensure_dir(cfg.output_root);

    // calibration comes from the first training scene
    const auto scene_dirs = data::list_scenes(cfg.dataset_root, "train");
    std::vector<data::SceneData> scenes;
    for (const auto& dir : scene_dirs) scenes.push_back(data::load_scene(dir));
    const io::Calibration calib = scenes.front().calib;
    const GridSpec data_grid = scenes.front().grid;

    nn::FusionModel model(mode, cfg.net, data_grid, calib.intrinsics, calib.extrinsics,
                          cfg.trainer.seed);

    std::vector<PreparedSample> samples;
    for (const auto& scene : scenes) {
        auto s = prepare_scene(scene, model, cfg.trainer.max_frames_per_scene);
        for (auto& sample : s) samples.push_back(std::move(sample));
    }
    require(!samples.empty(), "config", "training set is empty");

    // per-parameter Adam state, swept in registration order
    nn::AdamConfig adam_cfg;
    adam_cfg.lr = cfg.trainer.lr;
    std::map<std::string, nn::AdamState> adam;
    for (const auto& name : model.params().order())
        adam.emplace(name, nn::AdamState(model.params().get(name).size()));

    Rng shuffle_rng(derive_seed(cfg.trainer.seed, 0x51u));
    Rng gumbel_rng(derive_seed(cfg.trainer.seed, 0x52u));
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    std::ostringstream log;
    log << "epoch,train_loss\n";
    for (int epoch = 0; epoch < cfg.trainer.epochs; ++epoch) {
        model.set_tau(cfg.net.tau * std::pow(cfg.trainer.tau_decay, epoch));
        // Fisher-Yates with the run's own rng keeps epochs reproducible
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

        double epoch_loss = 0.0;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end =
                std::min(cursor + static_cast<std::size_t>(cfg.trainer.batch), order.size());
            model.params().zero_grads();
            double batch_loss = 0.0;
            for (std::size_t b = cursor; b < batch_end; ++b) {
                const PreparedSample& s = samples[order[b]];
                const nn::Tensor out = model.forward(s.input, true, &gumbel_rng);
                const nn::Tensor loss = mode == nn::Mode::UlsOnly
                                            ? nn::mse_loss(out, s.heatmap_target)
                                            : nn::cce_loss(out, s.occupancy_target);
                loss.backward();
                batch_loss += loss.item();
            }
            const double inv = 1.0 / static_cast<double>(batch_end - cursor);
            for (const auto& name : model.params().order()) {
                nn::Tensor& p = model.params().get(name);
                std::vector<double> g = p.grad();
                for (auto& v : g) v *= inv;
                adam_step(p.values(), g, adam.at(name), adam_cfg);
            }
            epoch_loss += batch_loss;
            cursor = batch_end;
        }
        epoch_loss /= static_cast<double>(order.size());
        result.epoch_losses.push_back(epoch_loss);
        log << epoch << "," << io::fmt_double(epoch_loss) << "\n";
    }

    result.checkpoint = cfg.output_root / (nn::mode_name(mode) + std::string(".bvf"));
    result.loss_log = cfg.output_root / (nn::mode_name(mode) + std::string("_loss.csv"));
    io::save_checkpoint(result.checkpoint, model, data_grid, calib);
    io::write_text(result.loss_log, log.str());
    return result;
}

// ---- evaluation -------------------------------------------------------------------

// Metrics frame: lateral first, the rearward (depth) axis second, about the
// grid anchor.
inline Vec2 to_metric_frame(const GridSpec& spec, Vec2 p) {
    const Vec2 local = pose_apply(pose_inverse(spec.anchor), p);
    return {local.y, -local.x};
}

struct FrameEval {
    std::string frame_id;
    long tp = 0, fp = 0, fn = 0;
    bool has_distance = false;
    DistanceMetrics dist;
    std::vector<double> gt_ranges;       // per gt instance, distance to ego
    std::vector<bool> gt_matched;
    std::vector<double> gt_e, gt_d, gt_nd;  // per gt instance contributions
};

struct EvalResult {
    std::vector<MetricsReport> per_frame;
    std::vector<std::string> frame_ids;
    MetricsReport aggregate;
    fs::path report_path;
};

inline MetricsReport occupancy_report(long tp, long fp, long fn) {
    auto ratio = [](double num, double den) { return den == 0.0 ? 1.0 : num / den; };
    MetricsReport r;
    r.recall = ratio(tp, tp + fn);
    r.precision = ratio(tp, tp + fp);
    r.dice = ratio(2.0 * tp, 2.0 * tp + fp + fn);
    r.iou = ratio(tp, tp + fp + fn);
    return r;
}

// Local maxima of the centroid heatmap above a threshold; used to read
// instance predictions out of the ultrasonic-only regression output.
inline std::vector<Vec2> heatmap_peaks(const nn::Tensor& heat, const GridSpec& spec,
                                       double threshold = 0.3) {
    const nn::Dims4 d = nn::dims4(heat, "heatmap");
    std::vector<Vec2> peaks;
    for (int r = 0; r < d.h; ++r)
        for (int c = 0; c < d.w; ++c) {
            const double v = heat.values()[nn::idx4(d, 0, 0, r, c)];
            if (v < threshold) continue;
            bool is_peak = true;
            for (int dr = -1; dr <= 1 && is_peak; ++dr)
                for (int dc = -1; dc <= 1 && is_peak; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int nr = r + dr, nc = c + dc;
                    if (nr < 0 || nr >= d.h || nc < 0 || nc >= d.w) continue;
                    const double nv = heat.values()[nn::idx4(d, 0, 0, nr, nc)];
                    if (nv > v || (nv == v && (dr < 0 || (dr == 0 && dc < 0)))) is_peak = false;
                }
            if (is_peak) peaks.push_back(cell_center(spec, {r, c}));
        }
    return peaks;
}

struct EvalOptions {
    bool range_bands = false;
    double camera_range = 6.0;
    double nd_cap = 0.0;  // optional cap on the normalized distance, 0 = off
};

inline EvalResult cmd_eval(const fs::path& checkpoint, const fs::path& dataset_root,
                           const std::string& split, const fs::path& out_csv,
                           const EvalOptions& opts = {}) {
    io::LoadedModel loaded = io::load_checkpoint(checkpoint);
    nn::FusionModel& model = *loaded.model;
    const GridSpec out_grid = model.output_grid();

    std::vector<FrameEval> evals;
    for (const auto& dir : data::list_scenes(dataset_root, split)) {
        const data::SceneData scene = data::load_scene(dir);
        require(scene.grid.cell_size == loaded.data_grid.cell_size, "io",
                "incompatible checkpoint: dataset grid resolution differs");
        auto samples = prepare_scene(scene, model);

        std::vector<FrameEval> scene_evals(samples.size());
        parallel_for(samples.size(), [&](std::size_t i) {
            const PreparedSample& s = samples[i];
            FrameEval fe;
            fe.frame_id = s.frame_id;

            std::vector<Vec2> pred_pts;
            if (model.mode() == nn::Mode::UlsOnly) {
                const nn::Tensor heat = model.forward(s.input, false);
                pred_pts = heatmap_peaks(heat, out_grid);
                fe.tp = fe.fp = fe.fn = -1;  // occupancy undefined for regression
            } else {
                const nn::Tensor logits = model.forward(s.input, false);
                const nn::Dims4 d = nn::dims4(logits, "eval logits");
                BevGrid pred(out_grid, 1);
                for (int r = 0; r < d.h; ++r)
                    for (int c = 0; c < d.w; ++c)
                        pred.at(r, c) = logits.values()[nn::idx4(d, 0, 1, r, c)] >
                                                logits.values()[nn::idx4(d, 0, 0, r, c)]
                                            ? 1.0
                                            : 0.0;
                for (std::size_t k = 0; k < pred.data.size(); ++k) {
                    const bool p = pred.data[k] > 0.5;
                    const bool g = s.gt_mask.data[k] > 0.5;
                    fe.tp += p && g;
                    fe.fp += p && !g;
                    fe.fn += !p && g;
                }
                for (const auto& inst : extract_obstacles(pred)) pred_pts.push_back(inst.centroid);
            }

            if (!s.gt_instances.empty()) {
                std::vector<Vec2> gt_pts, pred_metric;
                for (const auto& inst : s.gt_instances)
                    gt_pts.push_back(to_metric_frame(out_grid, inst.centroid));
                for (const auto& p : pred_pts) pred_metric.push_back(to_metric_frame(out_grid, p));
                fe.dist = distance_metrics(pred_metric, gt_pts, {0.0, 0.0}, opts.camera_range,
                                           opts.nd_cap);
                fe.has_distance = true;
                // per-instance contributions for optional range banding
                for (std::size_t gi = 0; gi < gt_pts.size(); ++gi) {
                    const DistanceMetrics one = distance_metrics(
                        pred_metric, {gt_pts[gi]}, {0.0, 0.0}, opts.camera_range, opts.nd_cap);
                    fe.gt_ranges.push_back(norm(gt_pts[gi]));
                    fe.gt_matched.push_back(one.matched == 1);
                    fe.gt_e.push_back(one.euclidean_e);
                    fe.gt_d.push_back(one.distance_d);
                    fe.gt_nd.push_back(one.norm_nd);
                }
            } else {
                fe.dist.spurious = static_cast<int>(pred_pts.size());
            }
            scene_evals[i] = std::move(fe);
        });
        for (auto& fe : scene_evals) evals.push_back(std::move(fe));
    }

    EvalResult result;
    std::ostringstream csv;
    csv << io::report_csv_header() << "\n";
    long tp = 0, fp = 0, fn = 0;
    bool occupancy_defined = model.mode() != nn::Mode::UlsOnly;
    double sum_e = 0.0, sum_d = 0.0, sum_nd = 0.0;
    long n_gt = 0;
    int matched = 0, missed = 0, spurious = 0;
    for (const auto& fe : evals) {
        MetricsReport row;
        if (occupancy_defined) {
            row = occupancy_report(fe.tp, fe.fp, fe.fn);
            tp += fe.tp;
            fp += fe.fp;
            fn += fe.fn;
        } else {
            row.recall = row.dice = row.precision = row.iou = std::nan("");
        }
        row.distance_d = fe.dist.distance_d;
        row.norm_nd = fe.dist.norm_nd;
        row.euclidean_e = fe.dist.euclidean_e;
        row.matched = fe.dist.matched;
        row.missed = fe.dist.missed;
        row.spurious = fe.dist.spurious;
        if (fe.has_distance) {
            const int n = fe.dist.matched + fe.dist.missed;
            sum_e += fe.dist.euclidean_e * n;
            sum_d += fe.dist.distance_d * n;
            sum_nd += fe.dist.norm_nd * n;
            n_gt += n;
        }
        matched += fe.dist.matched;
        missed += fe.dist.missed;
        spurious += fe.dist.spurious;
        result.per_frame.push_back(row);
        result.frame_ids.push_back(fe.frame_id);
        csv << io::report_csv_row(fe.frame_id, row) << "\n";
    }

    MetricsReport agg;
    if (occupancy_defined) {
        agg = occupancy_report(tp, fp, fn);
    } else {
        agg.recall = agg.dice = agg.precision = agg.iou = std::nan("");
    }
    // distance metrics pool all ground-truth instances across frames
    agg.euclidean_e = n_gt ? sum_e / n_gt : 0.0;
    agg.distance_d = n_gt ? sum_d / n_gt : 0.0;
    agg.norm_nd = n_gt ? sum_nd / n_gt : 0.0;
    agg.matched = matched;
    agg.missed = missed;
    agg.spurious = spurious;
    result.aggregate = agg;
    csv << io::report_csv_row("all", agg) << "\n";

    if (opts.range_bands) {
        // the capture-style range bins; the last band absorbs anything beyond
        const double edges[5] = {0.0, 1.45, 2.9, 4.35, std::numeric_limits<double>::infinity()};
        const char* labels[4] = {"band_0-1.45", "band_1.45-2.9", "band_2.9-4.35", "band_4.35-5.8"};
        for (int b = 0; b < 4; ++b) {
            double be = 0.0, bd = 0.0, bnd = 0.0;
            int bn = 0, bmatched = 0, bmissed = 0;
            for (const auto& fe : evals)
                for (std::size_t gi = 0; gi < fe.gt_ranges.size(); ++gi) {
                    if (fe.gt_ranges[gi] < edges[b] || fe.gt_ranges[gi] >= edges[b + 1]) continue;
                    be += fe.gt_e[gi];
                    bd += fe.gt_d[gi];
                    bnd += fe.gt_nd[gi];
                    bn += 1;
                    (fe.gt_matched[gi] ? bmatched : bmissed) += 1;
                }
            MetricsReport row;
            row.recall = row.dice = row.precision = row.iou = std::nan("");
            row.euclidean_e = bn ? be / bn : 0.0;
            row.distance_d = bn ? bd / bn : 0.0;
            row.norm_nd = bn ? bnd / bn : 0.0;
            row.matched = bmatched;
            row.missed = bmissed;
            row.spurious = 0;
            csv << io::report_csv_row(labels[b], row) << "\n";
        }
    }

    if (!out_csv.empty()) {
        if (out_csv.has_parent_path()) io::ensure_dir(out_csv.parent_path());
        io::write_text(out_csv, csv.str());
        result.report_path = out_csv;
    }
    return result;
}

// ---- rendering --------------------------------------------------------------------

enum class RenderKind { Grid, Mask, Overlay };

inline RenderKind render_kind_from_name(const std::string& s) {
    if (s == "grid") return RenderKind::Grid;
    if (s == "mask") return RenderKind::Mask;
    if (s == "overlay") return RenderKind::Overlay;
    fail("render", "unknown render type '" + s + "' (grid|mask|overlay)");
}

inline io::Image8 mask_image(const fs::path& p) {
    if (p.extension() == ".grid") {
        const BevGrid g = io::read_grid(p);
        io::Image8 img{g.cols(), g.rows(), std::vector<std::uint8_t>(g.data.size())};
        for (std::size_t i = 0; i < g.data.size(); ++i) img.pixels[i] = g.data[i] > 0.5 ? 255 : 0;
        return img;
    }
    io::Image8 img = io::read_pgm(p);
    for (auto& px : img.pixels) px = px > 127 ? 255 : 0;
    return img;
}

// grid -> per-image min/max normalized PGM; mask -> strict 0/255 PGM;
// overlay -> PPM with prediction in red and ground truth in green.
inline void cmd_render(RenderKind kind, const std::vector<fs::path>& inputs,
                       const fs::path& out) {
    switch (kind) {
        case RenderKind::Grid: {
            require(inputs.size() == 1, "render", "grid rendering takes one input");
            const BevGrid g = io::read_grid(inputs[0]);
            double lo = g.data.empty() ? 0.0 : g.data[0], hi = lo;
            for (double v : g.data) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            io::Image8 img{g.cols(), g.rows(), std::vector<std::uint8_t>(g.data.size(), 0)};
            if (hi > lo)
                for (std::size_t i = 0; i < g.data.size(); ++i)
                    img.pixels[i] = static_cast<std::uint8_t>(
                        std::lround((g.data[i] - lo) / (hi - lo) * 255.0));
            io::write_pgm(out, img);
            return;
        }
        case RenderKind::Mask: {
            require(inputs.size() == 1, "render", "mask rendering takes one input");
            io::write_pgm(out, mask_image(inputs[0]));
            return;
        }
        case RenderKind::Overlay: {
            require(inputs.size() == 2, "render",
                    "overlay rendering takes prediction and ground-truth inputs");
            const io::Image8 pred = mask_image(inputs[0]);
            const io::Image8 gt = mask_image(inputs[1]);
            require(pred.width == gt.width && pred.height == gt.height, "render",
                    "overlay inputs differ in size");
            io::ImageRgb8 img{pred.width, pred.height,
                              std::vector<std::uint8_t>(pred.pixels.size() * 3, 0)};
            for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
                img.pixels[3 * i + 0] = pred.pixels[i];
                img.pixels[3 * i + 1] = gt.pixels[i];
            }
            io::write_ppm(out, img);
            return;
        }
    }
}

}  // namespace bevfuse::pipeline
