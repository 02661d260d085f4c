#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "bevfuse/bevfuse.hpp"

using namespace bevfuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("bevfuse_test_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

pipeline::RunConfig toy_config(const fs::path& dataset_root, const fs::path& output_root) {
    pipeline::RunConfig cfg = pipeline::preset_config("desk");
    cfg.net.pyramid_levels = 2;
    cfg.net.pyramid_channels = 4;
    cfg.net.bev_channels = 4;
    cfg.net.bev_rows = 6;
    cfg.net.bev_cols = 12;
    cfg.net.image_size = 32;
    cfg.net.dilation_options = {1, 2};
    cfg.dataset.image_size = 32;
    cfg.dataset.scenes_train = 2;
    cfg.dataset.scenes_val = 1;
    cfg.dataset.scenes_test = 0;
    cfg.dataset.scene_duration_ms = 220.0;
    cfg.dataset.calib_override = sim::default_calibration(32);
    cfg.trainer.epochs = 2;
    cfg.trainer.batch = 4;
    cfg.trainer.seed = 5;
    cfg.dataset_root = dataset_root;
    cfg.output_root = output_root;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool trees_identical(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> rel_a, rel_b;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a));
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b));
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) return false;
    for (const auto& rel : rel_a)
        if (slurp(a / rel) != slurp(b / rel)) return false;
    return true;
}

}  // namespace

TEST_CASE("presets pin the desk and fidelity constants", "[pipeline]") {
    const auto desk = pipeline::preset_config("desk");
    CHECK(desk.grid.cell_size == 0.05);
    CHECK(desk.grid.rows() == 120);
    CHECK(desk.grid.cols() == 240);
    CHECK(desk.net.pyramid_levels == 3);
    CHECK(desk.net.image_size == 64);

    const auto fidelity = pipeline::preset_config("fidelity");
    CHECK(fidelity.grid.cell_size == 0.01);
    CHECK(fidelity.grid.rows() == 600);
    CHECK(fidelity.grid.cols() == 1200);
    CHECK(fidelity.net.pyramid_levels == 5);

    CHECK_THROWS_AS(pipeline::preset_config("bogus"), Error);
}

TEST_CASE("trainer defaults follow the training recipe", "[pipeline]") {
    const pipeline::TrainerConfig t;
    CHECK(t.lr == 1e-3);
    CHECK(t.batch == 8);
    CHECK(t.epochs == 100);
    CHECK_THROWS_AS([] {
        pipeline::TrainerConfig bad;
        bad.lr = 0.0;
        bad.validate();
    }(), Error);
}

TEST_CASE("run config files load with overrides", "[pipeline]") {
    TempDir tmp("config");
    const fs::path cfg_path = tmp.path / "run.json";
    io::write_text(cfg_path, R"({
      "preset": "desk",
      "trainer": {"lr": 0.01, "batch": 4, "epochs": 3, "seed": 9},
      "network": {"pyramid_levels": 2, "image_size": 32},
      "simulate": {"scenes_train": 3, "scenes_val": 1, "duration_ms": 250},
      "dataset_root": "/tmp/ds",
      "output_root": "/tmp/out"
    })");
    const auto cfg = pipeline::load_run_config(cfg_path);
    CHECK(cfg.trainer.lr == 0.01);
    CHECK(cfg.trainer.batch == 4);
    CHECK(cfg.trainer.epochs == 3);
    CHECK(cfg.net.pyramid_levels == 2);
    CHECK(cfg.net.image_size == 32);
    CHECK(cfg.dataset.scenes_train == 3);
    CHECK(cfg.dataset.scene_duration_ms == 250.0);
    CHECK(cfg.dataset_root == fs::path("/tmp/ds"));

    // referenced paths must exist
    io::write_text(cfg_path, R"({"layout_path": "/nonexistent/layout.json"})");
    CHECK_THROWS_AS(pipeline::load_run_config(cfg_path), Error);
}

TEST_CASE("amplitude resampling and label pooling", "[pipeline]") {
    const GridSpec fine(1.0, 1.0, 0.05);
    const GridSpec coarse(1.0, 1.0, 0.25);
    BevGrid src(fine, 1);
    // block of 25 fine cells = one coarse cell
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c) src.at(r, c) = 2.0;
    const BevGrid avg = pipeline::resample_amplitude(src, coarse);
    CHECK(avg.at(0, 0) == Catch::Approx(2.0));
    CHECK(avg.at(0, 1) == 0.0);

    BevGrid labels(fine, 1);
    labels.at(7, 7) = 1.0;  // single fine obstacle cell
    const BevGrid pooled = pipeline::pool_labels(labels, coarse);
    double total = 0.0;
    for (double v : pooled.data) total += v;
    CHECK(total == 1.0);
    CHECK(pooled.at(1, 1) == 1.0);
}

TEST_CASE("synthetic dataset round-trips through the loaders", "[pipeline]") {
    TempDir tmp("dataset");
    auto cfg = toy_config(tmp.path / "ds", tmp.path / "out");
    const auto summary = pipeline::cmd_simulate(cfg, 33);
    CHECK(summary.scenes == 3);
    CHECK(summary.frames > 0);

    const auto train_scenes = data::list_scenes(cfg.dataset_root, "train");
    REQUIRE(train_scenes.size() == 2);
    const auto val_scenes = data::list_scenes(cfg.dataset_root, "val");
    REQUIRE(val_scenes.size() == 1);

    // per-scene split: ids are disjoint across splits
    std::vector<std::string> ids;
    for (const auto& dir : train_scenes) ids.push_back(dir.filename().string());
    for (const auto& dir : val_scenes) ids.push_back(dir.filename().string());
    std::sort(ids.begin(), ids.end());
    CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());

    const data::SceneData scene = data::load_scene(train_scenes[0]);
    CHECK(!scene.frames.empty());
    CHECK(!scene.uls.empty());
    CHECK(scene.grid.cell_size == 0.05);
    CHECK(scene.calib.intrinsics.width == 32);
    CHECK(scene.layout.layout.sensors.size() == 6);
    CHECK(scene.layout.signalways.size() == 8);
    for (const auto& f : scene.uls) f.validate();

    // gap support stays within the capture bounds
    for (std::size_t i = 1; i < scene.uls.size(); ++i) {
        const double gap = scene.uls[i].timestamp_ms - scene.uls[i - 1].timestamp_ms;
        CHECK(gap >= 34.0);
        CHECK(gap <= 85.0);
    }

    // images and gt masks decode to the advertised sizes
    const io::Image8 img = io::read_pgm(scene.frames[0].image);
    CHECK(img.width == 32);
    const io::Image8 gt = io::read_pgm(scene.frames[0].gt);
    CHECK(gt.width == scene.grid.cols());
    CHECK(gt.height == scene.grid.rows());
    for (auto px : gt.pixels) CHECK((px == 0 || px == 255));
}

TEST_CASE("map-uls exports one compensated grid per camera frame", "[pipeline]") {
    TempDir tmp("mapuls");
    auto cfg = toy_config(tmp.path / "ds", tmp.path / "out");
    pipeline::cmd_simulate(cfg, 44);
    const auto scenes = data::list_scenes(cfg.dataset_root, "train");
    const fs::path out_dir = tmp.path / "maps";
    const int frames = pipeline::cmd_map_uls(scenes[0], out_dir);

    const data::SceneData scene = data::load_scene(scenes[0]);
    CHECK(frames == static_cast<int>(scene.frames.size()));

    // wiring identity: output equals fill_grid + compensate directly
    std::vector<double> camera_ts;
    for (const auto& f : scene.frames) camera_ts.push_back(f.camera_ts);
    const auto pairs = match_frames(camera_ts, scene.uls, scene.odometry);
    const BevGrid direct = compensate_ego_motion(
        fill_grid(scene.uls[pairs[2].uls_index], scene.layout.layout, scene.grid),
        pairs[2].pose_delta);
    const BevGrid exported = io::read_grid(out_dir / "000002.grid");
    CHECK(exported.data == direct.data);

    // the viewing PGM exists alongside
    CHECK(fs::exists(out_dir / "000002.pgm"));
}

TEST_CASE("stationary scenes: frames sharing an ultrasonic frame map identically",
          "[pipeline]") {
    TempDir tmp("static");
    auto cfg = toy_config(tmp.path / "ds", tmp.path / "out");
    cfg.dataset.moving_fraction = 0.0;  // every scene stationary
    pipeline::cmd_simulate(cfg, 202);
    const auto scenes = data::list_scenes(cfg.dataset_root, "train");
    const fs::path out_dir = tmp.path / "maps";
    pipeline::cmd_map_uls(scenes[0], out_dir);

    const data::SceneData scene = data::load_scene(scenes[0]);
    std::vector<double> camera_ts;
    for (const auto& f : scene.frames) camera_ts.push_back(f.camera_ts);
    const auto pairs = match_frames(camera_ts, scene.uls, scene.odometry);

    // the 30 fps camera reuses ultrasonic frames; with zero ego motion those
    // exports must be byte-identical
    int shared = 0;
    for (std::size_t k = 1; k < pairs.size(); ++k) {
        if (pairs[k].uls_index != pairs[k - 1].uls_index) continue;
        char a[32], b[32];
        std::snprintf(a, sizeof(a), "%06zu.grid", k - 1);
        std::snprintf(b, sizeof(b), "%06zu.grid", k);
        CHECK(slurp(out_dir / a) == slurp(out_dir / b));
        ++shared;
    }
    CHECK(shared > 0);
}

#ifdef BEVFUSE_CLI
TEST_CASE("command-line tool round trip and error contract", "[pipeline]") {
    TempDir tmp("cli");
    const std::string cli = BEVFUSE_CLI;
    const fs::path ds = tmp.path / "ds";

    // happy path: simulate a one-scene dataset through the binary
    const std::string cmd = cli + " simulate --scenes 2 --seed 3 --dataset " + ds.string() +
                            " > " + (tmp.path / "sim.log").string() + " 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(ds / "val"));

    // failure path: nonzero exit and the one-line error prefix on stderr
    const fs::path errlog = tmp.path / "err.log";
    const std::string bad = cli + " map-uls " + (tmp.path / "nope").string() + " --out " +
                            (tmp.path / "x").string() + " 2> " + errlog.string();
    CHECK(std::system(bad.c_str()) != 0);
    const std::string err = slurp(errlog);
    CHECK(err.rfind("ERROR ", 0) == 0);
}
#endif

TEST_CASE("training writes a checkpoint that reloads bit-exactly", "[pipeline]") {
    TempDir tmp("train");
    auto cfg = toy_config(tmp.path / "ds", tmp.path / "out");
    pipeline::cmd_simulate(cfg, 55);
    cfg.trainer.max_frames_per_scene = 2;

    const auto result = pipeline::cmd_train(cfg, nn::Mode::UlsOnly);
    REQUIRE(fs::exists(result.checkpoint));
    REQUIRE(fs::exists(result.loss_log));
    CHECK(result.epoch_losses.size() == 2);

    // loss log has a header plus one row per epoch
    const std::string log = slurp(result.loss_log);
    CHECK(std::count(log.begin(), log.end(), '\n') == 3);

    auto loaded = io::load_checkpoint(result.checkpoint);
    CHECK(loaded.model->mode() == nn::Mode::UlsOnly);
    CHECK(loaded.data_grid.cell_size == cfg.grid.cell_size);

    // a re-trained model with the same seed produces identical parameters
    const auto rerun = pipeline::cmd_train(cfg, nn::Mode::UlsOnly);
    CHECK(slurp(result.checkpoint) == slurp(rerun.checkpoint));
}

TEST_CASE("evaluation writes per-frame rows plus the aggregate", "[pipeline]") {
    TempDir tmp("eval");
    auto cfg = toy_config(tmp.path / "ds", tmp.path / "out");
    pipeline::cmd_simulate(cfg, 66);
    cfg.trainer.max_frames_per_scene = 2;
    cfg.trainer.epochs = 1;
    const auto train_result = pipeline::cmd_train(cfg, nn::Mode::Multimodal);

    pipeline::EvalOptions opts;
    opts.range_bands = true;
    const fs::path report = tmp.path / "report.csv";
    const auto result =
        pipeline::cmd_eval(train_result.checkpoint, cfg.dataset_root, "val", report, opts);

    const std::string csv = slurp(report);
    const long lines = std::count(csv.begin(), csv.end(), '\n');
    // header + per-frame + aggregate + four band rows
    CHECK(lines == 1 + static_cast<long>(result.per_frame.size()) + 1 + 4);
    CHECK(csv.rfind("frame,recall,dice,precision,iou,distance_d,norm_nd,euclidean_e,"
                    "matched,missed,spurious",
                    0) == 0);

    // the range bands partition every ground-truth instance exactly once
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    long band_instances = 0;
    long agg_instances = -1;
    while (std::getline(in, line)) {
        const bool band = line.rfind("band_", 0) == 0;
        const bool agg = line.rfind("all,", 0) == 0;
        if (!band && !agg) continue;
        // matched and missed are the 9th and 10th comma-separated fields
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        REQUIRE(fields.size() == 11);
        const long n = std::stol(fields[8]) + std::stol(fields[9]);
        if (band) band_instances += n;
        if (agg) agg_instances = n;
    }
    CHECK(band_instances == agg_instances);
}

TEST_CASE("render emits strict masks, normalized grids and overlays", "[pipeline]") {
    TempDir tmp("render");

    // mask: only 0/255 pixels out
    io::Image8 fuzzy{4, 3, {0, 10, 200, 255, 3, 130, 90, 250, 0, 0, 255, 128}};
    const fs::path mask_in = tmp.path / "mask.pgm";
    io::write_pgm(mask_in, fuzzy);
    pipeline::cmd_render(pipeline::RenderKind::Mask, {mask_in}, tmp.path / "mask_out.pgm");
    const io::Image8 mask_out = io::read_pgm(tmp.path / "mask_out.pgm");
    for (auto px : mask_out.pixels) CHECK((px == 0 || px == 255));

    // grid: min/max map to 0/255
    BevGrid grid(GridSpec(1.0, 1.0, 0.5), 1);
    grid.data = {0.5, 1.0, 2.0, 0.5, 1.5, 0.5, 0.5, 0.5};
    const fs::path grid_in = tmp.path / "amp.grid";
    io::write_grid(grid_in, grid);
    pipeline::cmd_render(pipeline::RenderKind::Grid, {grid_in}, tmp.path / "amp.pgm");
    const io::Image8 grid_out = io::read_pgm(tmp.path / "amp.pgm");
    CHECK(*std::min_element(grid_out.pixels.begin(), grid_out.pixels.end()) == 0);
    CHECK(*std::max_element(grid_out.pixels.begin(), grid_out.pixels.end()) == 255);

    // overlay of identical masks: yellow where set
    pipeline::cmd_render(pipeline::RenderKind::Overlay, {mask_in, mask_in},
                         tmp.path / "overlay.ppm");
    std::ifstream ppm(tmp.path / "overlay.ppm", std::ios::binary);
    std::string header;
    std::getline(ppm, header);
    CHECK(header == "P6");
    int w, h, maxv;
    ppm >> w >> h >> maxv;
    ppm.get();
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
    ppm.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    for (std::size_t i = 0; i < mask_out.pixels.size(); ++i) {
        CHECK(rgb[3 * i + 0] == mask_out.pixels[i]);  // red = prediction
        CHECK(rgb[3 * i + 1] == mask_out.pixels[i]);  // green = ground truth
        CHECK(rgb[3 * i + 2] == 0);
    }

    CHECK_THROWS_AS(pipeline::render_kind_from_name("sparkles"), Error);
}

TEST_CASE("simulate is byte-identical across runs and thread counts", "[pipeline]") {
    TempDir tmp("determinism");
    auto cfg1 = toy_config(tmp.path / "a", tmp.path / "out");
    auto cfg2 = toy_config(tmp.path / "b", tmp.path / "out");

    setenv("BEVFUSE_THREADS", "1", 1);
    pipeline::cmd_simulate(cfg1, 99);
    setenv("BEVFUSE_THREADS", "2", 1);
    pipeline::cmd_simulate(cfg2, 99);
    unsetenv("BEVFUSE_THREADS");

    CHECK(trees_identical(tmp.path / "a", tmp.path / "b"));
}

TEST_CASE("errors carry the machine-parsable prefix", "[pipeline]") {
    try {
        pipeline::preset_config("nope");
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string line = format_error(e);
        CHECK(line.rfind("ERROR config: ", 0) == 0);
    }
}
