#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>
#include <vector>

#include "bevfuse/common.hpp"
#include "bevfuse/fisheye.hpp"
#include "bevfuse/geometry.hpp"
#include "bevfuse/io.hpp"
#include "bevfuse/metrics.hpp"
#include "bevfuse/sync.hpp"
#include "bevfuse/ultrasonic.hpp"

namespace bevfuse::sim {

enum class ShapeKind { Point, Box, Cylinder };

struct Obstacle {
    ShapeKind kind = ShapeKind::Cylinder;
    double width = 0.5;   // box lateral size
    double length = 0.5;  // box longitudinal size
    double radius = 0.3;  // cylinder
    Pose2D pose;          // world frame
    double height = 0.8;
    double reflectivity = 1.0;  // acoustic, (0, 1]
    double shade = 0.8;         // rendered intensity, [0, 1]

    double footprint_extent() const {
        switch (kind) {
            case ShapeKind::Point: return 0.0;
            case ShapeKind::Box: return 0.5 * std::hypot(width, length);
            case ShapeKind::Cylinder: return radius;
        }
        return 0.0;
    }
};

// Ground-truth world: static obstacles, an ego trajectory, the sensor suite
// and per-scene environment knobs (lighting, noise).
struct Scene {
    std::vector<Obstacle> obstacles;
    std::vector<OdometrySample> ego_track;
    SensorLayout layout;
    std::vector<Signalway> signalways;
    io::Calibration calib;
    std::uint64_t seed = 0;

    double envelope_spacing = 0.02;
    int envelope_samples = 440;  // max round trip 8.78 m < 2 * 4.5 m
    double noise_level = 0.0;    // uniform envelope noise floor
    double image_noise = 0.0;    // grayscale noise stddev (0..1 scale)
    double background_top = 0.35;
    double background_bottom = 0.15;
    double contrast = 1.0;       // scene lighting factor on obstacle shade

    void validate() const {
        layout.validate();
        require(!signalways.empty(), "sim", "scene lists no signalways");
        require(!ego_track.empty(), "sim", "scene has no ego trajectory");
        require(envelope_spacing > 0.0 && envelope_samples > 1, "sim", "bad envelope sampling");
        const Vec2 bumper{ego_track.front().pose.x, ego_track.front().pose.y};
        for (const auto& o : obstacles) {
            require(o.reflectivity > 0.0 && o.reflectivity <= 1.0, "sim",
                    "reflectivity must be in (0, 1]");
            const double r = norm(Vec2{o.pose.x, o.pose.y} - bumper);
            require(r - o.footprint_extent() >= 0.1 && r + o.footprint_extent() <= 6.0, "sim",
                    "obstacle footprint outside the 0.1-6 m working range");
        }
    }
};

namespace detail {

// Nearest footprint boundary point to a query (both in the same frame).
inline Vec2 nearest_boundary(const Obstacle& o, const Pose2D& obstacle_pose, Vec2 query) {
    switch (o.kind) {
        case ShapeKind::Point:
            return {obstacle_pose.x, obstacle_pose.y};
        case ShapeKind::Cylinder: {
            const Vec2 center{obstacle_pose.x, obstacle_pose.y};
            const Vec2 d = query - center;
            const double n = norm(d);
            if (n < 1e-9) return center + Vec2{o.radius, 0.0};
            return center + (o.radius / n) * d;
        }
        case ShapeKind::Box: {
            const Vec2 local = pose_apply(pose_inverse(obstacle_pose), query);
            const Vec2 clamped{std::clamp(local.x, -o.length / 2.0, o.length / 2.0),
                               std::clamp(local.y, -o.width / 2.0, o.width / 2.0)};
            return pose_apply(obstacle_pose, clamped);
        }
    }
    return {obstacle_pose.x, obstacle_pose.y};
}

inline bool contains(const Obstacle& o, const Pose2D& obstacle_pose, Vec2 p) {
    switch (o.kind) {
        case ShapeKind::Point:
            return false;  // handled by direct cell marking
        case ShapeKind::Cylinder:
            return norm(p - Vec2{obstacle_pose.x, obstacle_pose.y}) <= o.radius;
        case ShapeKind::Box: {
            const Vec2 local = pose_apply(pose_inverse(obstacle_pose), p);
            return std::abs(local.x) <= o.length / 2.0 && std::abs(local.y) <= o.width / 2.0;
        }
    }
    return false;
}

inline std::vector<Vec2> footprint_boundary(const Obstacle& o, const Pose2D& pose, int samples) {
    std::vector<Vec2> pts;
    pts.reserve(samples);
    switch (o.kind) {
        case ShapeKind::Point:
            pts.push_back({pose.x, pose.y});
            break;
        case ShapeKind::Cylinder:
            for (int i = 0; i < samples; ++i) {
                const double a = 2.0 * kPi * i / samples;
                pts.push_back(pose_apply(pose, {o.radius * std::cos(a), o.radius * std::sin(a)}));
            }
            break;
        case ShapeKind::Box: {
            const int per_side = std::max(1, samples / 4);
            for (int i = 0; i < per_side; ++i) {
                const double t = static_cast<double>(i) / per_side;
                const double hx = o.length / 2.0, hy = o.width / 2.0;
                pts.push_back(pose_apply(pose, {-hx + 2.0 * hx * t, -hy}));
                pts.push_back(pose_apply(pose, {hx, -hy + 2.0 * hy * t}));
                pts.push_back(pose_apply(pose, {hx - 2.0 * hx * t, hy}));
                pts.push_back(pose_apply(pose, {-hx, hy - 2.0 * hy * t}));
            }
            break;
        }
    }
    return pts;
}

}  // namespace detail

// Time-of-flight echo synthesis at time t: every signalway receives, per
// obstacle, a Gaussian pulse (sigma = 2 samples) at round-trip distance
// d1 + d2 with amplitude reflectivity * beta-attenuation at both sensors *
// inverse-square decay (1 m reference). Reflectors beyond the radial field
// of view contribute nothing.
inline UltrasonicFrame synth_echoes(const Scene& scene, double t_ms) {
    scene.validate();
    const Pose2D ego = interpolate_pose(scene.ego_track, t_ms);
    const Pose2D ego_inv = pose_inverse(ego);

    Rng rng(derive_seed(scene.seed, 0x5u ^ std::bit_cast<std::uint64_t>(t_ms)));
    UltrasonicFrame frame;
    frame.timestamp_ms = t_ms;
    const double sigma = 2.0 * scene.envelope_spacing;

    for (const auto& way : scene.signalways) {
        const UltrasonicSensor& tx = scene.layout.sensor(way.tx);
        const UltrasonicSensor& rx = scene.layout.sensor(way.rx);
        EchoEnvelope env;
        env.emitter_id = way.tx;
        env.receiver_id = way.rx;
        env.sample_spacing = scene.envelope_spacing;
        env.amplitudes.assign(scene.envelope_samples, 0.0);

        for (const auto& o : scene.obstacles) {
            const Pose2D obs_vehicle = pose_compose(ego_inv, o.pose);
            const Vec2 p1 = detail::nearest_boundary(o, obs_vehicle, {tx.pose.x, tx.pose.y});
            const Vec2 p2 = detail::nearest_boundary(o, obs_vehicle, {rx.pose.x, rx.pose.y});
            const Vec2 r1 = p1 - Vec2{tx.pose.x, tx.pose.y};
            const Vec2 r2 = p2 - Vec2{rx.pose.x, rx.pose.y};
            const double d1 = norm(r1);
            const double d2 = norm(r2);
            if (d1 > scene.layout.max_range || d2 > scene.layout.max_range) continue;
            if (d1 < 1e-6 || d2 < 1e-6) continue;
            const double a1 = normalize_angle(std::atan2(r1.y, r1.x) - tx.pose.yaw);
            const double a2 = normalize_angle(std::atan2(r2.y, r2.x) - rx.pose.yaw);
            const double round_trip = d1 + d2;
            const double amp = o.reflectivity *
                               attenuation_weight(a1, effective_half_angle(scene.layout, d1)) *
                               attenuation_weight(a2, effective_half_angle(scene.layout, d2)) *
                               (1.0 / (round_trip * round_trip));
            if (amp <= 0.0) continue;
            const int lo = std::max(
                0, static_cast<int>((round_trip - 4.0 * sigma) / scene.envelope_spacing));
            const int hi = std::min(
                scene.envelope_samples - 1,
                static_cast<int>((round_trip + 4.0 * sigma) / scene.envelope_spacing) + 1);
            for (int k = lo; k <= hi; ++k) {
                const double x = k * scene.envelope_spacing - round_trip;
                env.amplitudes[k] += amp * std::exp(-x * x / (2.0 * sigma * sigma));
            }
        }
        if (scene.noise_level > 0.0)
            for (auto& a : env.amplitudes) a = std::max(0.0, a + rng.uniform(0.0, scene.noise_level));
        frame.envelopes.push_back(std::move(env));
    }
    return frame;
}

// Grayscale silhouette render through the fisheye model: obstacles are filled
// per image column between the extreme projections of their boundary/height
// samples, painted far to near over a vertical background gradient.
inline io::Image8 render_fisheye(const Scene& scene, double t_ms) {
    scene.validate();
    const FisheyeIntrinsics& intr = scene.calib.intrinsics;
    const CameraExtrinsics& ext = scene.calib.extrinsics;
    const Pose2D ego = interpolate_pose(scene.ego_track, t_ms);
    const Pose2D ego_inv = pose_inverse(ego);

    const int W = intr.width, H = intr.height;
    std::vector<double> canvas(static_cast<std::size_t>(W) * H);
    for (int r = 0; r < H; ++r) {
        const double level = scene.background_top +
                             (scene.background_bottom - scene.background_top) * r / (H - 1.0);
        for (int c = 0; c < W; ++c) canvas[static_cast<std::size_t>(r) * W + c] = level;
    }

    // painter's order: farthest first, nearest last
    std::vector<std::size_t> order(scene.obstacles.size());
    std::vector<double> cam_dist(scene.obstacles.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
        const Pose2D obs = pose_compose(ego_inv, scene.obstacles[i].pose);
        cam_dist[i] = norm(Vec2{obs.x - ext.x, obs.y - ext.y});
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return cam_dist[a] > cam_dist[b]; });

    constexpr int kBoundarySamples = 96;
    constexpr int kHeightSamples = 12;
    for (std::size_t oi : order) {
        const Obstacle& o = scene.obstacles[oi];
        const Pose2D obs = pose_compose(ego_inv, o.pose);
        const auto boundary = detail::footprint_boundary(o, obs, kBoundarySamples);
        std::vector<double> col_min(W, 1e300), col_max(W, -1e300);
        bool any = false;
        for (const Vec2& b : boundary) {
            for (int k = 0; k < kHeightSamples; ++k) {
                const double z = o.height * k / (kHeightSamples - 1.0);
                const Vec3 cam = ext.to_camera({b.x, b.y, z});
                if (cam.z <= 1e-6 || !in_fov(cam, intr)) continue;
                const Pixel px = project(cam, intr);
                const int col = static_cast<int>(std::floor(px.u));
                if (col < 0 || col >= W) continue;
                col_min[col] = std::min(col_min[col], px.v);
                col_max[col] = std::max(col_max[col], px.v);
                any = true;
            }
        }
        if (!any) continue;
        const double shade = std::clamp(o.shade * scene.contrast, 0.0, 1.0);
        for (int c = 0; c < W; ++c) {
            if (col_max[c] < col_min[c]) continue;
            const int r0 = std::max(0, static_cast<int>(std::floor(col_min[c])));
            const int r1 = std::min(H - 1, static_cast<int>(std::ceil(col_max[c])));
            for (int r = r0; r <= r1; ++r) canvas[static_cast<std::size_t>(r) * W + c] = shade;
        }
    }

    if (scene.image_noise > 0.0) {
        Rng rng(derive_seed(scene.seed, 0x11u ^ std::bit_cast<std::uint64_t>(t_ms)));
        for (auto& v : canvas) v += rng.normal(0.0, scene.image_noise);
    }

    io::Image8 img{W, H, std::vector<std::uint8_t>(canvas.size())};
    for (std::size_t i = 0; i < canvas.size(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(canvas[i], 0.0, 1.0) * 255.0));
    return img;
}

// BEV ground truth at time t: cells whose center lies inside a footprint are
// obstacle cells (points mark their containing cell), instances are the
// 4-connected components.
inline std::pair<BevGrid, std::vector<ObstacleInstance>> rasterize_gt(const Scene& scene,
                                                                      double t_ms,
                                                                      const GridSpec& spec) {
    const Pose2D ego = interpolate_pose(scene.ego_track, t_ms);
    const Pose2D ego_inv = pose_inverse(ego);
    BevGrid mask(spec, 1);
    for (const auto& o : scene.obstacles) {
        const Pose2D obs = pose_compose(ego_inv, o.pose);
        if (o.kind == ShapeKind::Point) {
            if (auto cell = world_to_cell(spec, {obs.x, obs.y})) mask.at(cell->row, cell->col) = 1.0;
            continue;
        }
        // restrict the scan to the footprint's bounding box
        const double ext = o.footprint_extent();
        for (int r = 0; r < spec.rows(); ++r) {
            for (int c = 0; c < spec.cols(); ++c) {
                const Vec2 center = cell_center(spec, {r, c});
                if (std::abs(center.x - obs.x) > ext || std::abs(center.y - obs.y) > ext) continue;
                if (detail::contains(o, obs, center)) mask.at(r, c) = 1.0;
            }
        }
    }
    return {mask, extract_obstacles(mask)};
}

}  // namespace bevfuse::sim
