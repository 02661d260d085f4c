#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bevfuse/common.hpp"
#include "bevfuse/io.hpp"
#include "bevfuse/sim.hpp"
#include "bevfuse/sync.hpp"

namespace bevfuse::sim {

namespace fs = std::filesystem;

// Rear bumper array: six sensors fanned across the bumper looking rearward,
// eight default signalways (six mono-static, two bistatic between the central
// sensors).
inline SensorLayout default_layout() {
    SensorLayout layout;
    const double ys[6] = {-1.25, -0.75, -0.25, 0.25, 0.75, 1.25};
    const double fan[6] = {-0.35, -0.15, 0.0, 0.0, 0.15, 0.35};
    for (int i = 0; i < 6; ++i)
        layout.sensors.push_back({i, Pose2D(0.0, ys[i], kPi + fan[i])});
    return layout;
}

inline std::vector<Signalway> default_signalways() {
    std::vector<Signalway> ways;
    for (int i = 0; i < 6; ++i) ways.push_back({i, i});
    ways.push_back({2, 3});
    ways.push_back({3, 2});
    return ways;
}

// Rear fisheye covering ~140 deg horizontally; every pixel stays inside the
// valid distortion radius.
inline io::Calibration default_calibration(int image_size = 64) {
    io::Calibration c;
    const double f = 26.0 * image_size / 64.0;
    const double center = image_size / 2.0;
    c.intrinsics = FisheyeIntrinsics(f, f, center, center, -0.02, 0.004, 0.0, 0.0, image_size,
                                     image_size);
    c.extrinsics = CameraExtrinsics{0.0, 0.0, 0.9, 40.0 * kPi / 180.0, 0.0, 0.0};
    return c;
}

struct DatasetConfig {
    fs::path root;
    int scenes_train = 12;
    int scenes_val = 2;
    int scenes_test = 0;
    double scene_duration_ms = 1000.0;
    GridSpec grid{6.0, 6.0, 0.05};
    int image_size = 64;
    int min_obstacles = 2;
    int max_obstacles = 4;
    double ego_speed_max = 0.4;     // m/s, reversing
    double moving_fraction = 0.5;
    std::optional<io::LayoutFile> layout_override;
    std::optional<io::Calibration> calib_override;

    int total_scenes() const { return scenes_train + scenes_val + scenes_test; }
};

// Split sizes follow the 24/3/8-of-35 proportions of the capture campaign.
inline DatasetConfig scenes_by_ratio(DatasetConfig cfg, int total) {
    require(total >= 1, "sim", "need at least one scene");
    cfg.scenes_test = static_cast<int>(std::lround(total * 8.0 / 35.0));
    cfg.scenes_val = std::max(1, static_cast<int>(std::lround(total * 3.0 / 35.0)));
    cfg.scenes_train = std::max(0, total - cfg.scenes_val - cfg.scenes_test);
    return cfg;
}

// Ultrasonic packages ride the 40 ms update cycle; a measurement interval
// longer than the cycle skips slots, so gaps cluster at 40 and 80 ms.
inline double draw_uls_gap(Rng& rng) {
    const double base = rng.uniform() < 0.6 ? 40.0 : 80.0;
    const double u = rng.uniform();
    double jitter;
    if (u < 0.40) jitter = 0.0;
    else if (u < 0.55) jitter = 1.0;
    else if (u < 0.70) jitter = -1.0;
    else if (u < 0.80) jitter = 2.0;
    else if (u < 0.90) jitter = -2.0;
    else if (u < 0.95) jitter = 3.0;
    else jitter = -3.0;
    return std::clamp(base + jitter, 34.0, 85.0);
}

// Obstacle range prior: most mass inside 0-2 m, a thinner far tail.
inline double draw_obstacle_range(Rng& rng, double lo = 0.35, double hi = 5.5) {
    if (rng.uniform() < 0.65) {
        // triangular on [lo, 2.2] with mode 1.0
        const double a = lo, b = 2.2, m = 1.0;
        const double u = rng.uniform();
        const double fc = (m - a) / (b - a);
        return u < fc ? a + std::sqrt(u * (b - a) * (m - a))
                      : b - std::sqrt((1.0 - u) * (b - a) * (b - m));
    }
    return rng.uniform(2.2, hi);
}

inline Scene make_scene(const DatasetConfig& cfg, std::uint64_t master_seed, int scene_index) {
    Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(scene_index)));
    Scene scene;
    scene.seed = derive_seed(master_seed, 0x9000u + static_cast<std::uint64_t>(scene_index));
    if (cfg.layout_override) {
        scene.layout = cfg.layout_override->layout;
        scene.signalways = cfg.layout_override->signalways;
    } else {
        scene.layout = default_layout();
        scene.signalways = default_signalways();
    }
    scene.calib = cfg.calib_override ? *cfg.calib_override : default_calibration(cfg.image_size);

    // per-scene environment: some scenes are dark/low contrast (hard for the
    // camera), acoustic noise varies independently
    scene.contrast = rng.uniform(0.15, 1.0);
    scene.background_top = rng.uniform(0.05, 0.5);
    scene.background_bottom = rng.uniform(0.02, scene.background_top);
    scene.image_noise = rng.uniform(0.01, 0.04);
    scene.noise_level = rng.uniform(0.005, 0.03);

    // ego track (world frame = initial vehicle frame), 20 ms odometry
    const bool moving = rng.uniform() < cfg.moving_fraction;
    const double speed = moving ? rng.uniform(0.05, cfg.ego_speed_max) : 0.0;
    const double yaw_rate = moving ? rng.uniform(-0.05, 0.05) : 0.0;
    Pose2D pose;
    const double dt_ms = 20.0;
    for (double t = -40.0; t <= cfg.scene_duration_ms + 80.0; t += dt_ms) {
        scene.ego_track.push_back({t, pose});
        const double dt = dt_ms / 1000.0;
        pose = Pose2D(pose.x - speed * std::cos(pose.yaw) * dt,
                      pose.y - speed * std::sin(pose.yaw) * dt, pose.yaw + yaw_rate * dt);
    }

    const double travel = speed * cfg.scene_duration_ms / 1000.0;
    const int count = cfg.min_obstacles +
                      static_cast<int>(rng.uniform_index(cfg.max_obstacles - cfg.min_obstacles + 1));
    for (int k = 0; k < count; ++k) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            const double range = draw_obstacle_range(rng, 0.35 + travel);
            const double az = rng.uniform(-55.0, 55.0) * kPi / 180.0;
            const Vec2 pos{-range * std::cos(az), range * std::sin(az)};
            const double allowed = std::min({0.7, range - travel - 0.2, 5.8 - range});
            if (allowed < 0.12) continue;

            Obstacle o;
            const double shape_draw = rng.uniform();
            if (shape_draw < 0.08) {
                o.kind = ShapeKind::Point;
            } else if (shape_draw < 0.54) {
                o.kind = ShapeKind::Box;
                o.width = rng.uniform(0.4, 1.4);
                o.length = rng.uniform(0.4, 1.4);
                const double ext = 0.5 * std::hypot(o.width, o.length);
                if (ext > allowed) {
                    o.width *= allowed / ext;
                    o.length *= allowed / ext;
                }
            } else {
                o.kind = ShapeKind::Cylinder;
                o.radius = std::min(rng.uniform(0.2, 0.7), allowed);
            }
            o.pose = Pose2D(pos.x, pos.y, rng.uniform(-kPi, kPi));
            o.height = rng.uniform(0.3, 1.2);
            o.reflectivity = rng.uniform(0.35, 1.0);
            o.shade = rng.uniform(0.25, 1.0);

            bool clear = true;
            for (const auto& other : scene.obstacles) {
                const double gap = norm(Vec2{o.pose.x, o.pose.y} - Vec2{other.pose.x, other.pose.y});
                if (gap < o.footprint_extent() + other.footprint_extent() + 0.3) {
                    clear = false;
                    break;
                }
            }
            if (!clear) continue;
            scene.obstacles.push_back(o);
            break;
        }
    }
    scene.validate();
    return scene;
}

struct DatasetSummary {
    int scenes = 0;
    int frames = 0;
};

// Writes one scene directory: calib.json, layout.json, odometry.csv,
// uls.jsonl, images/NNNNNN.pgm, gt/NNNNNN.pgm, index.json.
inline int write_scene(const Scene& scene, const DatasetConfig& cfg, const fs::path& dir,
                       const std::string& scene_id) {
    io::ensure_dir(dir / "images");
    io::ensure_dir(dir / "gt");

    io::write_text(dir / "calib.json", io::calibration_to_json(scene.calib).dump(2) + "\n");
    io::LayoutFile lf{scene.layout, scene.signalways};
    io::write_text(dir / "layout.json", io::layout_to_json(lf).dump(2) + "\n");
    io::write_odometry_csv(dir / "odometry.csv", scene.ego_track);

    Rng gap_rng(derive_seed(scene.seed, 0x7au));
    std::vector<UltrasonicFrame> uls;
    for (double t = 0.0; t <= cfg.scene_duration_ms; t += draw_uls_gap(gap_rng))
        uls.push_back(synth_echoes(scene, t));
    io::write_uls_jsonl(dir / "uls.jsonl", uls);

    std::vector<double> camera_ts;
    for (double t = 0.0; t < cfg.scene_duration_ms; t += 1000.0 / 30.0) camera_ts.push_back(t);
    const auto pairs = match_frames(camera_ts, uls, scene.ego_track);

    io::json frames = io::json::array();
    char name[32];
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        std::snprintf(name, sizeof(name), "%06zu", k);
        const std::string img_rel = std::string("images/") + name + ".pgm";
        const std::string gt_rel = std::string("gt/") + name + ".pgm";
        io::write_pgm(dir / img_rel, render_fisheye(scene, pairs[k].camera_ts));

        const auto [mask, instances] = rasterize_gt(scene, pairs[k].camera_ts, cfg.grid);
        io::Image8 gt_img{mask.cols(), mask.rows(),
                          std::vector<std::uint8_t>(mask.data.size())};
        for (std::size_t i = 0; i < mask.data.size(); ++i)
            gt_img.pixels[i] = mask.data[i] > 0.5 ? 255 : 0;
        io::write_pgm(dir / gt_rel, gt_img);

        frames.push_back({{"id", static_cast<int>(k)},
                          {"camera_ts", pairs[k].camera_ts},
                          {"uls_ts", pairs[k].uls_ts},
                          {"image", img_rel},
                          {"gt", gt_rel}});
    }
    const io::json index{{"scene_id", scene_id},
                         {"camera_fps", 30},
                         {"duration_ms", cfg.scene_duration_ms},
                         {"grid", io::gridspec_to_json(cfg.grid)},
                         {"frames", frames}};
    io::write_text(dir / "index.json", index.dump(2) + "\n");
    return static_cast<int>(pairs.size());
}

// Emits the full dataset, split per scene (never per frame). Scene RNGs are
// derived from (seed, scene index) so generation order and thread count do
// not change the output.
inline DatasetSummary generate_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
    require(cfg.total_scenes() >= 1, "sim", "dataset needs at least one scene");
    io::ensure_dir(cfg.root);

    struct Job {
        int scene_index;
        std::string split;
        std::string scene_id;
    };
    std::vector<Job> jobs;
    for (int i = 0; i < cfg.total_scenes(); ++i) {
        std::string split = i < cfg.scenes_train ? "train"
                            : i < cfg.scenes_train + cfg.scenes_val ? "val"
                                                                    : "test";
        char id[32];
        std::snprintf(id, sizeof(id), "scene_%04d", i);
        jobs.push_back({i, split, id});
    }

    std::vector<int> frame_counts(jobs.size(), 0);
    parallel_for(jobs.size(), [&](std::size_t j) {
        const Scene scene = make_scene(cfg, seed, jobs[j].scene_index);
        const fs::path dir = cfg.root / jobs[j].split / jobs[j].scene_id;
        io::ensure_dir(dir);
        frame_counts[j] = write_scene(scene, cfg, dir, jobs[j].scene_id);
    });

    DatasetSummary summary;
    summary.scenes = static_cast<int>(jobs.size());
    for (int f : frame_counts) summary.frames += f;
    return summary;
}

}  // namespace bevfuse::sim

namespace bevfuse::data {

namespace fs = std::filesystem;

struct FrameRecord {
    int id = 0;
    double camera_ts = 0.0;
    double uls_ts = 0.0;
    fs::path image;
    fs::path gt;
};

struct SceneData {
    std::string id;
    io::Calibration calib;
    io::LayoutFile layout;
    std::vector<OdometrySample> odometry;
    std::vector<UltrasonicFrame> uls;
    GridSpec grid;
    std::vector<FrameRecord> frames;
};

inline SceneData load_scene(const fs::path& dir) {
    SceneData s;
    const io::json index = io::read_json(dir / "index.json");
    s.id = index.value("scene_id", dir.filename().string());
    s.calib = io::calibration_from_json(io::read_json(dir / "calib.json"));
    s.layout = io::layout_from_json(io::read_json(dir / "layout.json"));
    s.odometry = io::read_odometry_csv(dir / "odometry.csv");
    s.uls = io::read_uls_jsonl(dir / "uls.jsonl");
    s.grid = io::gridspec_from_json(index.at("grid"));
    for (const auto& f : index.at("frames")) {
        FrameRecord rec;
        rec.id = f.at("id").get<int>();
        rec.camera_ts = f.at("camera_ts").get<double>();
        rec.uls_ts = f.at("uls_ts").get<double>();
        rec.image = dir / f.at("image").get<std::string>();
        rec.gt = dir / f.at("gt").get<std::string>();
        require(fs::exists(rec.image), "io", "missing image " + rec.image.string());
        require(fs::exists(rec.gt), "io", "missing ground truth " + rec.gt.string());
        s.frames.push_back(std::move(rec));
    }
    return s;
}

inline std::vector<fs::path> list_scenes(const fs::path& root, const std::string& split) {
    const fs::path dir = root / split;
    require(fs::is_directory(dir), "io", "missing dataset split directory " + dir.string());
    std::vector<fs::path> scenes;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) scenes.push_back(e.path());
    std::sort(scenes.begin(), scenes.end());
    require(!scenes.empty(), "io", "no scenes in " + dir.string());
    return scenes;
}

}  // namespace bevfuse::data
