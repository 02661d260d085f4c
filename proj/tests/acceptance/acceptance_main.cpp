// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bevfuse/bevfuse.hpp"

using namespace bevfuse;
namespace fs = std::filesystem;

namespace {

struct Checker {
    bool ok = true;
    std::vector<std::string> notes;

    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            notes.push_back(what);
        }
    }
};

fs::path work_root() {
    return fs::temp_directory_path() / "bevfuse_acceptance";
}

nn::Tensor random_tensor(nn::Shape shape, Rng& rng, double scale = 1.0) {
    nn::Tensor t = nn::Tensor::zeros(std::move(shape));
    for (auto& v : t.values()) v = rng.normal(0.0, scale);
    return t;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool trees_identical(const fs::path& a, const fs::path& b, std::string* why) {
    std::vector<fs::path> rel_a, rel_b;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a));
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b));
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) {
        *why = "file lists differ";
        return false;
    }
    for (const auto& rel : rel_a)
        if (slurp(a / rel) != slurp(b / rel)) {
            *why = "content differs: " + rel.string();
            return false;
        }
    return true;
}

// ---- criterion 1: mapper oracle equivalence --------------------------------

bool criterion_mapper_oracle() {
    Checker c;
    SensorLayout layout = sim::default_layout();
    const GridSpec spec(6.0, 6.0, 0.05);
    Rng rng(0xACCE551);
    double worst = 0.0;
    for (int frame_idx = 0; frame_idx < 50; ++frame_idx) {
        UltrasonicFrame frame;
        frame.timestamp_ms = frame_idx;
        for (int way = 0; way < 8; ++way) {
            EchoEnvelope env;
            env.emitter_id = static_cast<int>(rng.uniform_index(6));
            env.receiver_id = static_cast<int>(rng.uniform_index(6));
            env.sample_spacing = 0.04;
            env.amplitudes.resize(220);
            for (auto& a : env.amplitudes) a = rng.uniform();
            frame.envelopes.push_back(std::move(env));
        }
        const BevGrid fast = fill_grid(frame, layout, spec);
        const BevGrid slow = fill_grid_oracle(frame, layout, spec);
        for (std::size_t i = 0; i < fast.data.size(); ++i)
            worst = std::max(worst, std::abs(fast.data[i] - slow.data[i]));
    }
    c.expect(worst < 1e-9, "max abs difference " + std::to_string(worst));
    std::printf("        max |fill_grid - oracle| = %.3g over 50 frames\n", worst);
    return c.ok;
}

// ---- criterion 2: paper-constant conformance --------------------------------

bool criterion_constants() {
    Checker c;
    const auto fidelity = pipeline::preset_config("fidelity");
    c.expect(fidelity.grid.rows() == 600 && fidelity.grid.cols() == 1200,
             "fidelity grid is not 600 x 1200");

    const auto bands = default_depth_bands(5);
    const double expected[5][2] = {{3.2, 6.0}, {1.6, 3.2}, {0.8, 1.6}, {0.4, 0.8}, {0.2, 0.4}};
    c.expect(bands.size() == 5, "band count");
    for (int i = 0; i < 5; ++i) {
        c.expect(std::abs(bands[i].z_min - expected[i][0]) < 1e-12 &&
                     std::abs(bands[i].z_max - expected[i][1]) < 1e-12,
                 "band " + std::to_string(i + 1) + " bounds");
    }

    const double h = 0.9;
    c.expect(attenuation_weight(0.0, h) == 1.0, "attenuation weight at 0");
    c.expect(attenuation_weight(h, h) == 0.0, "attenuation weight at +h");
    c.expect(attenuation_weight(-h, h) == 0.0, "attenuation weight at -h");
    c.expect(std::abs(attenuation_weight(h / 2.0, h) - 0.75) < 1e-12,
             "attenuation closed form at h/2");

    const nn::NetworkConfig net;
    c.expect(net.classes == 2, "class count");
    const pipeline::TrainerConfig trainer;
    c.expect(trainer.lr == 1e-3, "base learning rate");
    c.expect(trainer.batch == 8, "batch size");
    c.expect(trainer.epochs == 100, "epoch count");
    for (const auto& n : c.notes) std::printf("        FAILED: %s\n", n.c_str());
    return c.ok;
}

// ---- criterion 3: fisheye round trip ----------------------------------------

bool criterion_fisheye_roundtrip() {
    Checker c;
    Rng rng(0xF15EE7E);
    int total_tested = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        FisheyeIntrinsics intr;
        for (;;) {
            const double f = rng.uniform(80.0, 300.0);
            const int width = 640, height = 480;
            try {
                intr = FisheyeIntrinsics(f, f * rng.uniform(0.95, 1.05),
                                         width / 2.0 + rng.uniform(-10, 10),
                                         height / 2.0 + rng.uniform(-10, 10),
                                         rng.uniform(-0.04, 0.02), rng.uniform(-0.004, 0.008),
                                         rng.uniform(-0.001, 0.001), rng.uniform(-0.0002, 0.0002),
                                         width, height);
                break;
            } catch (const Error&) {
                continue;  // non-monotone draw, resample
            }
        }
        c.expect(intr.k1 != 0.0 || intr.k2 != 0.0, "distortion coefficients drawn zero");
        for (int gx = 0; gx < 32; ++gx) {
            for (int gy = 0; gy < 32; ++gy) {
                const Pixel px{(gx + 0.5) * intr.width / 32.0, (gy + 0.5) * intr.height / 32.0};
                const double rd =
                    std::hypot((px.u - intr.cx) / intr.fx, (px.v - intr.cy) / intr.fy);
                if (rd > intr.max_radial() * 0.999) continue;
                try {
                    const Vec3 ray = unproject(px, intr);  // throws after 50 iterations
                    const Pixel back = project(ray, intr);
                    worst = std::max(worst,
                                     std::max(std::abs(back.u - px.u), std::abs(back.v - px.v)));
                    ++total_tested;
                } catch (const Error& e) {
                    c.expect(false, std::string("inversion failed: ") + e.what());
                }
            }
        }
    }
    c.expect(worst <= 1e-6, "round-trip error " + std::to_string(worst));
    c.expect(total_tested > 1000, "too few lattice pixels tested");
    std::printf("        %d pixels, worst round-trip %.3g px\n", total_tested, worst);
    for (const auto& n : c.notes) std::printf("        FAILED: %s\n", n.c_str());
    return c.ok;
}

// ---- criterion 4: gradient suite ---------------------------------------------

bool criterion_gradients() {
    Checker c;
    Rng rng(0x6A2D);
    auto report = [&](const char* name, double err, double tol) {
        std::printf("        %-22s %.3g (tol %.0e)\n", name, err, tol);
        c.expect(err <= tol, std::string(name) + " gradient error too large");
    };

    report("conv2d", nn::grad_check(
        [](const std::vector<nn::Tensor>& in) {
            return nn::conv2d(in[0], in[1], in[2], {1, 1, 1});
        },
        {random_tensor({1, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng),
         random_tensor({3}, rng)}, 301), 1e-6);

    report("conv2d dilated s2", nn::grad_check(
        [](const std::vector<nn::Tensor>& in) {
            return nn::conv2d(in[0], in[1], in[2], {2, 2, 2});
        },
        {random_tensor({1, 2, 8, 8}, rng), random_tensor({2, 2, 3, 3}, rng),
         random_tensor({2}, rng)}, 302), 1e-6);

    report("conv_transpose 4x4", nn::grad_check(
        [](const std::vector<nn::Tensor>& in) {
            return nn::conv_transpose2d(in[0], in[1], in[2], 2, 1);
        },
        {random_tensor({1, 2, 4, 4}, rng), random_tensor({2, 2, 4, 4}, rng),
         random_tensor({2}, rng)}, 303), 1e-6);

    report("conv_transpose 2x2", nn::grad_check(
        [](const std::vector<nn::Tensor>& in) {
            return nn::conv_transpose2d(in[0], in[1], in[2], 2, 0);
        },
        {random_tensor({1, 2, 4, 4}, rng), random_tensor({2, 2, 2, 2}, rng),
         random_tensor({2}, rng)}, 304), 1e-6);

    nn::BatchNormState bn_state(2);
    report("batchnorm train", nn::grad_check(
        [&bn_state](const std::vector<nn::Tensor>& in) {
            return nn::batchnorm2d(in[0], in[1], in[2], &bn_state, true);
        },
        {random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng), random_tensor({2}, rng)},
        305), 1e-5);

    nn::Tensor noise = nn::Tensor::zeros({1, 4, 8, 8});
    for (auto& v : noise.values()) v = rng.gumbel();
    report("adaptive_dilated_conv", nn::grad_check(
        [&noise](const std::vector<nn::Tensor>& in) {
            return nn::adaptive_dilated_conv(in[0], in[1], in[2], in[3], in[4], {1, 2, 3, 4},
                                             0.9, noise);
        },
        {random_tensor({1, 2, 8, 8}, rng), random_tensor({2, 2, 3, 3}, rng),
         random_tensor({2}, rng), random_tensor({4, 2, 1, 1}, rng), random_tensor({4}, rng)},
        306), 1e-5);

    report("polar head", nn::grad_check(
        [](const std::vector<nn::Tensor>& in) {
            return nn::image_to_polar_bev(in[0], in[1], in[2], 4);
        },
        {random_tensor({1, 2, 3, 5}, rng), random_tensor({8, 6}, rng), random_tensor({8}, rng)},
        307), 1e-6);

    {
        nn::ParamStore dec;
        Rng drng(14);
        nn::FusionModel::register_decoder(dec, 2, 2, drng);
        for (const auto& name : dec.order())
            if (name.ends_with(".b"))
                for (auto& v : dec.get(name).values()) v = drng.normal(0.0, 0.1);
        std::vector<nn::Tensor> inputs{random_tensor({1, 2, 4, 4}, drng, 0.5)};
        for (const auto& name : dec.order()) inputs.push_back(dec.get(name));
        report("decoder", nn::grad_check(
            [&dec](const std::vector<nn::Tensor>& in) {
                return nn::FusionModel::decoder_forward(in[0], dec, 2);
            },
            inputs, 203), 1e-5);
    }

    {
        nn::Tensor target = nn::Tensor::zeros({1, 3, 2, 2});
        Rng trng(308);
        for (int h = 0; h < 2; ++h)
            for (int w = 0; w < 2; ++w) {
                const int cls = static_cast<int>(trng.uniform_index(3));
                target.values()[(static_cast<std::size_t>(cls) * 2 + h) * 2 + w] = 1.0;
            }
        report("cce loss", nn::grad_check(
            [&target](const std::vector<nn::Tensor>& in) {
                return nn::cce_loss(in[0], target);
            },
            {random_tensor({1, 3, 2, 2}, rng)}, 309), 1e-5);
    }

    report("mse loss", nn::grad_check(
        [](const std::vector<nn::Tensor>& in) { return nn::mse_loss(in[0], in[1]); },
        {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, 310), 1e-5);

    for (const auto& n : c.notes) std::printf("        FAILED: %s\n", n.c_str());
    return c.ok;
}

// ---- criterion 5: CaMFuse degeneracy -----------------------------------------

bool criterion_camfuse_degeneracy() {
    Checker c;
    Rng rng(0xCAFE);
    nn::Tensor x = random_tensor({1, 2, 8, 8}, rng);
    nn::Tensor w = random_tensor({2, 2, 3, 3}, rng);
    nn::Tensor b = random_tensor({2}, rng);
    nn::Tensor pw = random_tensor({1, 2, 1, 1}, rng);
    nn::Tensor pb = random_tensor({1}, rng);

    // D = {d}: bitwise equality with the static dilated convolution
    for (int d : {1, 2, 3, 4}) {
        const nn::Tensor adaptive = nn::adaptive_dilated_conv(
            x, w, b, pw, pb, {d}, 1.0, nn::Tensor::zeros({1, 1, 8, 8}));
        const nn::Tensor plain = nn::conv2d(x, w, b, {1, d, d});
        bool bitwise = adaptive.shape() == plain.shape();
        for (std::size_t i = 0; bitwise && i < adaptive.size(); ++i)
            bitwise = adaptive.values()[i] == plain.values()[i];
        c.expect(bitwise, "D={" + std::to_string(d) + "} not bitwise equal to the static conv");
    }

    // DilationField rows sum to 1 within 1e-9
    nn::Tensor pw4 = random_tensor({4, 2, 1, 1}, rng);
    nn::Tensor pb4 = random_tensor({4}, rng);
    nn::Tensor noise = nn::Tensor::zeros({1, 4, 8, 8});
    for (auto& v : noise.values()) v = rng.gumbel();
    const nn::Tensor field =
        nn::gumbel_softmax(nn::markov_hidden_prior(x, pw4, pb4), 0.8, noise);
    const nn::Dims4 d = nn::dims4(field, "field");
    double worst_sum = 0.0;
    for (int h = 0; h < d.h; ++h)
        for (int ww = 0; ww < d.w; ++ww) {
            double s = 0.0;
            for (int ch = 0; ch < d.c; ++ch) s += field.values()[nn::idx4(d, 0, ch, h, ww)];
            worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        }
    c.expect(worst_sum < 1e-9, "dilation field rows do not sum to 1");

    // tau -> 1e6 approaches the uniform distribution
    const nn::Tensor hot = nn::gumbel_softmax(nn::markov_hidden_prior(x, pw4, pb4), 1e6,
                                              nn::Tensor::zeros({1, 4, 8, 8}));
    double worst_dev = 0.0;
    for (double v : hot.values()) worst_dev = std::max(worst_dev, std::abs(v - 0.25));
    c.expect(worst_dev < 1e-4, "tau=1e6 deviates from uniform by " + std::to_string(worst_dev));
    std::printf("        row-sum dev %.3g, uniform dev %.3g\n", worst_sum, worst_dev);
    for (const auto& n : c.notes) std::printf("        FAILED: %s\n", n.c_str());
    return c.ok;
}

// ---- criterion 6: metric hand cases ------------------------------------------

bool criterion_metric_hand_cases() {
    Checker c;
    const GridSpec spec(1.0, 1.0, 0.1);
    BevGrid gt(spec, 1), pred(spec, 1);
    gt.at(1, 1) = gt.at(1, 2) = gt.at(2, 1) = gt.at(2, 2) = 1.0;
    pred.at(1, 1) = pred.at(1, 2) = 1.0;
    const auto occ = occupancy_metrics(pred, gt);
    c.expect(std::abs(occ.dice - 0.6667) < 1e-4, "dice hand case");
    c.expect(std::abs(occ.iou - 0.5) < 1e-4, "iou hand case");
    c.expect(std::abs(occ.recall - 0.5) < 1e-4, "recall hand case");
    c.expect(std::abs(occ.precision - 1.0) < 1e-4, "precision hand case");

    const auto dist = distance_metrics({{1.0, 2.0}}, {{1.0, 1.0}}, {0.0, 0.0}, 6.0);
    c.expect(std::abs(dist.euclidean_e - 1.0) < 1e-4, "euclidean hand case");
    c.expect(std::abs(dist.distance_d - 1.0) < 1e-4, "distance hand case");
    c.expect(std::abs(dist.norm_nd - 0.70711) < 1e-4, "normalized distance hand case");

    Rng rng(0xD1CE);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        BevGrid a(spec, 1), bmask(spec, 1);
        for (auto& v : a.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
        for (auto& v : bmask.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
        const auto r = occupancy_metrics(a, bmask);
        worst = std::max(worst, std::abs(r.dice - 2.0 * r.iou / (1.0 + r.iou)));
    }
    c.expect(worst < 1e-12, "dice / iou identity violated");
    std::printf("        dice-identity worst dev %.3g over 1000 pairs\n", worst);
    for (const auto& n : c.notes) std::printf("        FAILED: %s\n", n.c_str());
    return c.ok;
}

// ---- criterion 7: end-to-end toy learning -------------------------------------

pipeline::RunConfig toy_run_config(const fs::path& dataset_root, const fs::path& out_root) {
    pipeline::RunConfig cfg = pipeline::preset_config("desk");
    cfg.dataset.scenes_train = 12;
    cfg.dataset.scenes_val = 2;
    cfg.dataset.scenes_test = 0;
    cfg.dataset.scene_duration_ms = 1000.0;
    cfg.trainer.epochs = 30;
    cfg.trainer.seed = 2024;
    cfg.trainer.max_frames_per_scene = 6;
    cfg.dataset_root = dataset_root;
    cfg.output_root = out_root;
    return cfg;
}

bool criterion_end_to_end() {
    Checker c;
    const fs::path root = work_root() / "e2e";
    fs::remove_all(root);
    auto cfg = toy_run_config(root / "ds", root / "out");
    const auto summary = pipeline::cmd_simulate(cfg, 424242);
    std::printf("        dataset: %d scenes, %d frames\n", summary.scenes, summary.frames);

    struct ModeResult {
        double iou = 0.0;
        double euclidean = 0.0;
    };
    std::map<nn::Mode, ModeResult> results;
    for (nn::Mode mode : {nn::Mode::Multimodal, nn::Mode::VisibleOnly, nn::Mode::UlsOnly}) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto train = pipeline::cmd_train(cfg, mode);
        const auto eval = pipeline::cmd_eval(
            train.checkpoint, cfg.dataset_root, "val",
            cfg.output_root / (nn::mode_name(mode) + std::string("_report.csv")));
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        results[mode] = {eval.aggregate.iou, eval.aggregate.euclidean_e};
        std::printf("        %-10s iou %.4f  E %.4f m  (loss %.4f -> %.4f, %.0f s)\n",
                    nn::mode_name(mode).c_str(), eval.aggregate.iou, eval.aggregate.euclidean_e,
                    train.epoch_losses.front(), train.epoch_losses.back(), secs);
        std::fflush(stdout);
    }

    const auto& mm = results[nn::Mode::Multimodal];
    const auto& vis = results[nn::Mode::VisibleOnly];
    const auto& uls = results[nn::Mode::UlsOnly];
    c.expect(mm.iou >= 0.5, "multimodal IoU below 0.5");
    c.expect(mm.iou - vis.iou > 0.05, "multimodal IoU margin over visible <= 0.05");
    c.expect(mm.euclidean < vis.euclidean, "multimodal E not below visible E");
    c.expect(mm.euclidean < uls.euclidean, "multimodal E not below ultrasonic E");
    for (const auto& n : c.notes) std::printf("        FAILED: %s\n", n.c_str());
    return c.ok;
}

// ---- criterion 8: simulator statistics -----------------------------------------

bool criterion_simulator_statistics() {
    Checker c;
    const fs::path root = work_root() / "stats";
    fs::remove_all(root);
    pipeline::RunConfig cfg = pipeline::preset_config("desk");
    cfg.dataset.scenes_train = 10;
    cfg.dataset.scenes_val = 2;
    cfg.dataset.scenes_test = 3;
    cfg.dataset.scene_duration_ms = 4000.0;
    cfg.dataset_root = root / "ds";
    pipeline::cmd_simulate(cfg, 777);

    std::map<int, int> gaps;
    std::map<int, int> range_bins;
    std::set<std::string> seen_ids;
    int scene_count = 0;
    for (const std::string split : {"train", "val", "test"}) {
        for (const auto& dir : data::list_scenes(cfg.dataset_root, split)) {
            const data::SceneData scene = data::load_scene(dir);
            ++scene_count;
            c.expect(seen_ids.insert(scene.id).second,
                     "scene id " + scene.id + " appears in two splits");
            for (std::size_t i = 1; i < scene.uls.size(); ++i) {
                const double gap = scene.uls[i].timestamp_ms - scene.uls[i - 1].timestamp_ms;
                c.expect(gap >= 34.0 && gap <= 85.0,
                         "gap " + std::to_string(gap) + " outside [34, 85]");
                gaps[static_cast<int>(std::lround(gap))] += 1;
            }
            // obstacle ranges from the first frame's ground truth
            const BevGrid mask = pipeline::mask_from_pgm(io::read_pgm(scene.frames[0].gt),
                                                         scene.grid);
            for (const auto& inst : extract_obstacles(mask))
                range_bins[static_cast<int>(norm(inst.centroid) / 2.0)] += 1;
        }
    }
    c.expect(scene_count == 15, "expected 15 scenes");

    std::vector<std::pair<int, int>> sorted(gaps.begin(), gaps.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    c.expect(sorted.size() >= 2, "too few distinct gaps");
    const int m1 = std::min(sorted[0].first, sorted[1].first);
    const int m2 = std::max(sorted[0].first, sorted[1].first);
    c.expect(m1 == 40 && m2 == 80,
             "gap modes are " + std::to_string(m1) + "/" + std::to_string(m2) + ", not 40/80");
    std::printf("        gap modes %d and %d ms; range bin counts [0-2):%d [2-4):%d [4-6):%d\n",
                m1, m2, range_bins[0], range_bins[1], range_bins[2]);
    c.expect(range_bins[0] > range_bins[1] && range_bins[0] > range_bins[2],
             "obstacle range mode not in the 0-2 m bin");
    for (const auto& n : c.notes) std::printf("        FAILED: %s\n", n.c_str());
    return c.ok;
}

// ---- criterion 9: determinism ---------------------------------------------------

bool criterion_determinism() {
    Checker c;
    const fs::path root = work_root() / "det";
    fs::remove_all(root);

    auto make_cfg = [&](const fs::path& ds, const fs::path& out) {
        pipeline::RunConfig cfg = pipeline::preset_config("desk");
        cfg.dataset.scenes_train = 2;
        cfg.dataset.scenes_val = 1;
        cfg.dataset.scenes_test = 1;
        cfg.dataset.scene_duration_ms = 300.0;
        cfg.trainer.epochs = 2;
        cfg.trainer.seed = 31337;
        cfg.trainer.max_frames_per_scene = 2;
        cfg.net.pyramid_levels = 2;
        cfg.net.pyramid_channels = 4;
        cfg.net.bev_channels = 8;
        cfg.dataset_root = ds;
        cfg.output_root = out;
        return cfg;
    };

    std::string why;
    setenv("BEVFUSE_THREADS", "1", 1);
    auto cfg1 = make_cfg(root / "ds1", root / "out1");
    pipeline::cmd_simulate(cfg1, 99);
    pipeline::cmd_train(cfg1, nn::Mode::Multimodal);

    setenv("BEVFUSE_THREADS", "4", 1);
    auto cfg4 = make_cfg(root / "ds4", root / "out4");
    pipeline::cmd_simulate(cfg4, 99);
    pipeline::cmd_train(cfg4, nn::Mode::Multimodal);
    unsetenv("BEVFUSE_THREADS");

    c.expect(trees_identical(root / "ds1", root / "ds4", &why),
             "simulate not byte-identical across thread counts: " + why);
    c.expect(trees_identical(root / "out1", root / "out4", &why),
             "train not byte-identical across thread counts: " + why);
    for (const auto& n : c.notes) std::printf("        FAILED: %s\n", n.c_str());
    return c.ok;
}

}  // namespace

int main(int argc, char** argv) {
    struct Entry {
        int id;
        const char* name;
        std::function<bool()> run;
    };
    const std::vector<Entry> criteria{
        {1, "mapper oracle equivalence (50 frames, 1e-9)", criterion_mapper_oracle},
        {2, "paper-constant conformance", criterion_constants},
        {3, "fisheye round-trip (32x32 lattice, 1e-6 px)", criterion_fisheye_roundtrip},
        {4, "gradient suite (every layer vs finite differences)", criterion_gradients},
        {5, "CaMFuse degeneracy and dilation field", criterion_camfuse_degeneracy},
        {6, "metric hand-cases and dice/IoU identity", criterion_metric_hand_cases},
        {7, "end-to-end toy learning (multimodal superiority)", criterion_end_to_end},
        {8, "simulator statistics (gaps, ranges, splits)", criterion_simulator_statistics},
        {9, "determinism across seeds and thread counts", criterion_determinism},
    };

    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    bool all_ok = true;
    for (const auto& entry : criteria) {
        if (!only.empty() && !only.count(entry.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = false;
        try {
            ok = entry.run();
        } catch (const std::exception& e) {
            std::printf("        EXCEPTION: %s\n", e.what());
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %d: %s (%.1f s)\n", ok ? "PASS" : "FAIL", entry.id,
                    entry.name, secs);
        std::fflush(stdout);
        all_ok = all_ok && ok;
    }
    return all_ok ? 0 : 1;
}
