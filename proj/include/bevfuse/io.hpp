#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevfuse/common.hpp"
#include "bevfuse/fisheye.hpp"
#include "bevfuse/geometry.hpp"
#include "bevfuse/metrics.hpp"
#include "bevfuse/nn/network.hpp"
#include "bevfuse/sync.hpp"
#include "bevfuse/ultrasonic.hpp"

namespace bevfuse::io {

using nlohmann::json;
namespace fs = std::filesystem;

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    require(!ec && fs::is_directory(p), "io", "cannot create directory " + p.string());
}

inline std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(in.good(), "io", "cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    require(out.good(), "io", "cannot write " + p.string());
    out << text;
    require(out.good(), "io", "write failed for " + p.string());
}

inline json read_json(const fs::path& p) {
    try {
        return json::parse(read_text(p));
    } catch (const json::exception& e) {
        fail("io", "invalid JSON in " + p.string() + ": " + e.what());
    }
}

// ---- images ---------------------------------------------------------------

struct Image8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    std::uint8_t& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
};

inline void write_pgm(const fs::path& p, const Image8& img) {
    std::ofstream out(p, std::ios::binary);
    require(out.good(), "io", "cannot write " + p.string());
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    require(out.good(), "io", "write failed for " + p.string());
}

inline Image8 read_pgm(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(in.good(), "io", "cannot open " + p.string());
    std::string magic;
    in >> magic;
    require(magic == "P5", "io", p.string() + " is not a binary PGM");
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    require(w > 0 && h > 0 && maxval == 255, "io", "unsupported PGM header in " + p.string());
    in.get();  // single whitespace after header
    Image8 img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h)};
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    require(in.gcount() == static_cast<std::streamsize>(img.pixels.size()), "io",
            "truncated PGM " + p.string());
    return img;
}

struct ImageRgb8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel
};

inline void write_ppm(const fs::path& p, const ImageRgb8& img) {
    std::ofstream out(p, std::ios::binary);
    require(out.good(), "io", "cannot write " + p.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    require(out.good(), "io", "write failed for " + p.string());
}

// ---- grids ----------------------------------------------------------------

// Exact float dump of a BEV grid ("BVG1"): header + little-endian f64 data.
inline void write_grid(const fs::path& p, const BevGrid& grid) {
    std::ofstream out(p, std::ios::binary);
    require(out.good(), "io", "cannot write " + p.string());
    out.write("BVG1", 4);
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_f64 = [&](double v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(static_cast<std::uint32_t>(grid.rows()));
    put_u32(static_cast<std::uint32_t>(grid.cols()));
    put_u32(static_cast<std::uint32_t>(grid.channels));
    put_f64(grid.spec.lateral_half_extent);
    put_f64(grid.spec.rear_extent);
    put_f64(grid.spec.cell_size);
    put_f64(grid.spec.anchor.x);
    put_f64(grid.spec.anchor.y);
    put_f64(grid.spec.anchor.yaw);
    out.write(reinterpret_cast<const char*>(grid.data.data()),
              static_cast<std::streamsize>(grid.data.size() * sizeof(double)));
    require(out.good(), "io", "write failed for " + p.string());
}

inline BevGrid read_grid(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(in.good(), "io", "cannot open " + p.string());
    char magic[4];
    in.read(magic, 4);
    require(in.gcount() == 4 && std::string(magic, 4) == "BVG1", "io",
            p.string() + " is not a grid dump");
    auto get_u32 = [&] {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_f64 = [&] {
        double v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    const std::uint32_t rows = get_u32();
    const std::uint32_t cols = get_u32();
    const std::uint32_t channels = get_u32();
    const double lateral = get_f64();
    const double rear = get_f64();
    const double cell = get_f64();
    const double ax = get_f64(), ay = get_f64(), ayaw = get_f64();
    BevGrid grid(GridSpec(lateral, rear, cell, Pose2D(ax, ay, ayaw)), static_cast<int>(channels));
    require(grid.rows() == static_cast<int>(rows) && grid.cols() == static_cast<int>(cols), "io",
            "grid header inconsistent in " + p.string());
    in.read(reinterpret_cast<char*>(grid.data.data()),
            static_cast<std::streamsize>(grid.data.size() * sizeof(double)));
    require(in.gcount() == static_cast<std::streamsize>(grid.data.size() * sizeof(double)), "io",
            "truncated grid dump " + p.string());
    return grid;
}

// ---- calibration / layout / grid spec --------------------------------------

inline json gridspec_to_json(const GridSpec& spec) {
    return json{{"lateral_half_extent", spec.lateral_half_extent},
                {"rear_extent", spec.rear_extent},
                {"cell_size", spec.cell_size},
                {"anchor", {{"x", spec.anchor.x}, {"y", spec.anchor.y}, {"yaw", spec.anchor.yaw}}}};
}

inline GridSpec gridspec_from_json(const json& j) {
    Pose2D anchor;
    if (j.contains("anchor"))
        anchor = Pose2D(j["anchor"].value("x", 0.0), j["anchor"].value("y", 0.0),
                        j["anchor"].value("yaw", 0.0));
    return GridSpec(j.at("lateral_half_extent").get<double>(), j.at("rear_extent").get<double>(),
                    j.at("cell_size").get<double>(), anchor);
}

struct Calibration {
    FisheyeIntrinsics intrinsics;
    CameraExtrinsics extrinsics;
};

inline json calibration_to_json(const Calibration& c) {
    return json{{"fx", c.intrinsics.fx},
                {"fy", c.intrinsics.fy},
                {"cx", c.intrinsics.cx},
                {"cy", c.intrinsics.cy},
                {"k1", c.intrinsics.k1},
                {"k2", c.intrinsics.k2},
                {"k3", c.intrinsics.k3},
                {"k4", c.intrinsics.k4},
                {"width", c.intrinsics.width},
                {"height", c.intrinsics.height},
                {"theta_max", c.intrinsics.theta_max},
                {"cam_pose",
                 {{"x", c.extrinsics.x},
                  {"y", c.extrinsics.y},
                  {"z", c.extrinsics.z},
                  {"pitch", c.extrinsics.pitch},
                  {"yaw", c.extrinsics.yaw},
                  {"roll", c.extrinsics.roll}}}};
}

inline Calibration calibration_from_json(const json& j) {
    Calibration c;
    c.intrinsics =
        FisheyeIntrinsics(j.at("fx").get<double>(), j.at("fy").get<double>(),
                          j.at("cx").get<double>(), j.at("cy").get<double>(),
                          j.value("k1", 0.0), j.value("k2", 0.0), j.value("k3", 0.0),
                          j.value("k4", 0.0), j.at("width").get<int>(), j.at("height").get<int>(),
                          j.value("theta_max", 100.0 * kPi / 180.0));
    const json& p = j.at("cam_pose");
    c.extrinsics = CameraExtrinsics{p.value("x", 0.0),     p.value("y", 0.0),
                                    p.value("z", 1.0),     p.value("pitch", 0.0),
                                    p.value("yaw", 0.0),   p.value("roll", 0.0)};
    return c;
}

struct LayoutFile {
    SensorLayout layout;
    std::vector<Signalway> signalways;
};

inline json layout_to_json(const LayoutFile& lf) {
    json sensors = json::array();
    for (const auto& s : lf.layout.sensors)
        sensors.push_back({{"id", s.id}, {"x", s.pose.x}, {"y", s.pose.y}, {"yaw", s.pose.yaw}});
    json ways = json::array();
    for (const auto& w : lf.signalways) ways.push_back({{"tx", w.tx}, {"rx", w.rx}});
    return json{{"sensors", sensors},
                {"half_angle_near", lf.layout.half_angle_near},
                {"half_angle_far", lf.layout.half_angle_far},
                {"max_range", lf.layout.max_range},
                {"signalways", ways}};
}

inline LayoutFile layout_from_json(const json& j) {
    LayoutFile lf;
    for (const auto& s : j.at("sensors"))
        lf.layout.sensors.push_back({s.at("id").get<int>(),
                                     Pose2D(s.at("x").get<double>(), s.at("y").get<double>(),
                                            s.at("yaw").get<double>())});
    lf.layout.half_angle_near = j.value("half_angle_near", 65.0 * kPi / 180.0);
    lf.layout.half_angle_far = j.value("half_angle_far", 35.0 * kPi / 180.0);
    lf.layout.max_range = j.value("max_range", 4.5);
    for (const auto& w : j.value("signalways", json::array()))
        lf.signalways.push_back({w.at("tx").get<int>(), w.at("rx").get<int>()});
    lf.layout.validate();
    require(!lf.signalways.empty(), "io", "layout file lists no signalways");
    return lf;
}

// ---- odometry / ultrasonic streams -----------------------------------------

inline void write_odometry_csv(const fs::path& p, const std::vector<OdometrySample>& track) {
    std::ostringstream out;
    out << "ts_ms,x_m,y_m,yaw_rad\n";
    for (const auto& s : track)
        out << fmt_double(s.timestamp_ms) << "," << fmt_double(s.pose.x) << ","
            << fmt_double(s.pose.y) << "," << fmt_double(s.pose.yaw) << "\n";
    write_text(p, out.str());
}

inline std::vector<OdometrySample> read_odometry_csv(const fs::path& p) {
    std::istringstream in(read_text(p));
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "io", "empty odometry file " + p.string());
    std::vector<OdometrySample> track;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        double ts, x, y, yaw;
        require(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &ts, &x, &y, &yaw) == 4, "io",
                "bad odometry row in " + p.string() + ": " + line);
        track.push_back({ts, Pose2D(x, y, yaw)});
    }
    require(!track.empty(), "io", "odometry file has no samples: " + p.string());
    for (std::size_t i = 1; i < track.size(); ++i)
        require(track[i].timestamp_ms > track[i - 1].timestamp_ms, "io",
                "odometry timestamps not strictly increasing in " + p.string());
    return track;
}

inline void write_uls_jsonl(const fs::path& p, const std::vector<UltrasonicFrame>& frames) {
    std::ostringstream out;
    for (const auto& f : frames) {
        json ways = json::array();
        for (const auto& e : f.envelopes)
            ways.push_back({{"tx", e.emitter_id},
                            {"rx", e.receiver_id},
                            {"spacing_m", e.sample_spacing},
                            {"amps", e.amplitudes}});
        out << json{{"ts_ms", f.timestamp_ms}, {"signalways", ways}}.dump() << "\n";
    }
    write_text(p, out.str());
}

inline std::vector<UltrasonicFrame> read_uls_jsonl(const fs::path& p) {
    std::istringstream in(read_text(p));
    std::string line;
    std::vector<UltrasonicFrame> frames;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail("io", "bad JSONL line in " + p.string() + ": " + e.what());
        }
        UltrasonicFrame f;
        f.timestamp_ms = j.at("ts_ms").get<double>();
        for (const auto& w : j.at("signalways")) {
            EchoEnvelope e;
            e.emitter_id = w.at("tx").get<int>();
            e.receiver_id = w.at("rx").get<int>();
            e.sample_spacing = w.at("spacing_m").get<double>();
            e.amplitudes = w.at("amps").get<std::vector<double>>();
            f.envelopes.push_back(std::move(e));
        }
        f.validate();
        frames.push_back(std::move(f));
    }
    require(!frames.empty(), "io", "ultrasonic stream is empty: " + p.string());
    return frames;
}

// ---- metrics reports --------------------------------------------------------

inline std::string report_csv_header() {
    return "frame,recall,dice,precision,iou,distance_d,norm_nd,euclidean_e,matched,missed,"
           "spurious";
}

inline std::string report_csv_row(const std::string& frame, const MetricsReport& r) {
    std::ostringstream out;
    out << frame << "," << fmt_double(r.recall) << "," << fmt_double(r.dice) << ","
        << fmt_double(r.precision) << "," << fmt_double(r.iou) << "," << fmt_double(r.distance_d)
        << "," << fmt_double(r.norm_nd) << "," << fmt_double(r.euclidean_e) << "," << r.matched
        << "," << r.missed << "," << r.spurious;
    return out.str();
}

// ---- checkpoints -------------------------------------------------------------

inline json network_config_to_json(const nn::NetworkConfig& c) {
    return json{{"pyramid_levels", c.pyramid_levels},
                {"pyramid_channels", c.pyramid_channels},
                {"bev_channels", c.bev_channels},
                {"polar_depth_bins", c.polar_depth_bins},
                {"dilation_options", c.dilation_options},
                {"tau", c.tau},
                {"classes", c.classes},
                {"bev_rows", c.bev_rows},
                {"bev_cols", c.bev_cols},
                {"image_size", c.image_size},
                {"band_near", c.band_near},
                {"band_y_min", c.band_y_min},
                {"band_y_max", c.band_y_max},
                {"hard_inference", c.hard_inference}};
}

inline nn::NetworkConfig network_config_from_json(const json& j) {
    nn::NetworkConfig c;
    c.pyramid_levels = j.value("pyramid_levels", c.pyramid_levels);
    c.pyramid_channels = j.value("pyramid_channels", c.pyramid_channels);
    c.bev_channels = j.value("bev_channels", c.bev_channels);
    c.polar_depth_bins = j.value("polar_depth_bins", c.polar_depth_bins);
    c.dilation_options = j.value("dilation_options", c.dilation_options);
    c.tau = j.value("tau", c.tau);
    c.classes = j.value("classes", c.classes);
    c.bev_rows = j.value("bev_rows", c.bev_rows);
    c.bev_cols = j.value("bev_cols", c.bev_cols);
    c.image_size = j.value("image_size", c.image_size);
    c.band_near = j.value("band_near", c.band_near);
    c.band_y_min = j.value("band_y_min", c.band_y_min);
    c.band_y_max = j.value("band_y_max", c.band_y_max);
    c.hard_inference = j.value("hard_inference", c.hard_inference);
    c.validate();
    return c;
}

namespace detail {

inline void put_blob(std::ofstream& out, const std::string& name, const std::vector<int>& shape,
                     const std::vector<double>& data) {
    const auto name_len = static_cast<std::uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 4);
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rank = static_cast<std::uint32_t>(shape.size());
    out.write(reinterpret_cast<const char*>(&rank), 4);
    for (int d : shape) {
        const auto dim = static_cast<std::uint64_t>(d);
        out.write(reinterpret_cast<const char*>(&dim), 8);
    }
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
}

struct Blob {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
};

inline Blob get_blob(std::ifstream& in, const fs::path& p) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 4);
    require(in.good() && name_len < 4096, "io", "corrupt checkpoint " + p.string());
    Blob b;
    b.name.resize(name_len);
    in.read(b.name.data(), name_len);
    std::uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 4);
    require(in.good() && rank <= 8, "io", "corrupt checkpoint " + p.string());
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint64_t dim = 0;
        in.read(reinterpret_cast<char*>(&dim), 8);
        b.shape.push_back(static_cast<int>(dim));
        n *= dim;
    }
    b.data.resize(n);
    in.read(reinterpret_cast<char*>(b.data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    require(in.gcount() == static_cast<std::streamsize>(n * sizeof(double)), "io",
            "truncated checkpoint " + p.string());
    return b;
}

}  // namespace detail

// Checkpoint: "BVF1" magic, a JSON metadata blob (mode, network config, grid,
// calibration), then named little-endian float64 parameter blobs in
// registration order, batch-norm running statistics included.
inline void save_checkpoint(const fs::path& p, nn::FusionModel& model, const GridSpec& data_grid,
                            const Calibration& calib) {
    std::ofstream out(p, std::ios::binary);
    require(out.good(), "io", "cannot write " + p.string());
    out.write("BVF1", 4);
    const json meta{{"mode", nn::mode_name(model.mode())},
                    {"config", network_config_to_json(model.config())},
                    {"grid", gridspec_to_json(data_grid)},
                    {"calibration", calibration_to_json(calib)}};
    const std::string meta_str = meta.dump();
    const auto meta_len = static_cast<std::uint32_t>(meta_str.size());
    out.write(reinterpret_cast<const char*>(&meta_len), 4);
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    auto& store = model.params();
    std::uint32_t count = static_cast<std::uint32_t>(store.order().size()) +
                          2 * static_cast<std::uint32_t>(store.bn_order().size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& name : store.order()) {
        const nn::Tensor& t = store.get(name);
        detail::put_blob(out, name, t.shape(), t.values());
    }
    for (const auto& name : store.bn_order()) {
        const nn::BatchNormState& s = store.bn(name);
        detail::put_blob(out, name + ".running_mean", {static_cast<int>(s.mean.size())}, s.mean);
        detail::put_blob(out, name + ".running_var", {static_cast<int>(s.var.size())}, s.var);
    }
    require(out.good(), "io", "write failed for " + p.string());
}

struct LoadedModel {
    std::unique_ptr<nn::FusionModel> model;
    GridSpec data_grid;
    Calibration calib;
};

inline LoadedModel load_checkpoint(const fs::path& p, std::uint64_t seed = 0) {
    std::ifstream in(p, std::ios::binary);
    require(in.good(), "io", "cannot open checkpoint " + p.string());
    char magic[4];
    in.read(magic, 4);
    require(in.gcount() == 4 && std::string(magic, 4) == "BVF1", "io",
            p.string() + " is not a BVF1 checkpoint");
    std::uint32_t meta_len = 0;
    in.read(reinterpret_cast<char*>(&meta_len), 4);
    require(in.good() && meta_len < (1u << 20), "io", "corrupt checkpoint " + p.string());
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), meta_len);
    json meta;
    try {
        meta = json::parse(meta_str);
    } catch (const json::exception& e) {
        fail("io", "corrupt checkpoint metadata in " + p.string() + ": " + e.what());
    }

    LoadedModel out;
    out.data_grid = gridspec_from_json(meta.at("grid"));
    out.calib = calibration_from_json(meta.at("calibration"));
    out.model = std::make_unique<nn::FusionModel>(
        nn::mode_from_name(meta.at("mode").get<std::string>()),
        network_config_from_json(meta.at("config")), out.data_grid, out.calib.intrinsics,
        out.calib.extrinsics, seed);

    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    require(in.good(), "io", "corrupt checkpoint " + p.string());
    auto& store = out.model->params();
    for (std::uint32_t i = 0; i < count; ++i) {
        detail::Blob b = detail::get_blob(in, p);
        if (b.name.ends_with(".running_mean") || b.name.ends_with(".running_var")) {
            const bool is_mean = b.name.ends_with(".running_mean");
            const std::string bn_name = b.name.substr(0, b.name.rfind('.'));
            nn::BatchNormState& s = store.bn(bn_name);
            auto& dst = is_mean ? s.mean : s.var;
            require(dst.size() == b.data.size(), "io",
                    "incompatible checkpoint: batchnorm size mismatch for " + b.name);
            dst = std::move(b.data);
        } else {
            require(store.has(b.name), "io", "incompatible checkpoint: unknown parameter " + b.name);
            nn::Tensor& t = store.get(b.name);
            require(t.shape() == b.shape, "io",
                    "incompatible checkpoint: shape mismatch for " + b.name);
            t.values() = std::move(b.data);
        }
    }
    return out;
}

}  // namespace bevfuse::io
