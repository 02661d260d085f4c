#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "bevfuse/common.hpp"
#include "bevfuse/geometry.hpp"
#include "bevfuse/ultrasonic.hpp"

namespace bevfuse {

struct OdometrySample {
    double timestamp_ms = 0.0;
    Pose2D pose;  // vehicle in a fixed world frame
};

// One camera frame paired with the ultrasonic frame serving it. pose_delta is
// the vehicle pose at camera time expressed in the uls-time vehicle frame.
struct FramePair {
    double camera_ts = 0.0;
    double uls_ts = 0.0;
    std::size_t uls_index = 0;
    Pose2D pose_delta;
};

inline constexpr double kMaxOdometryGapMs = 200.0;

// Linear x/y, shortest-arc yaw between the bracketing odometry samples.
inline Pose2D interpolate_pose(const std::vector<OdometrySample>& odo, double t_ms) {
    require(!odo.empty(), "sync", "odometry track is empty");
    require(t_ms >= odo.front().timestamp_ms && t_ms <= odo.back().timestamp_ms, "sync",
            "odometry does not span timestamp " + std::to_string(t_ms));
    const auto it = std::lower_bound(odo.begin(), odo.end(), t_ms,
                                     [](const OdometrySample& s, double t) {
                                         return s.timestamp_ms < t;
                                     });
    if (it == odo.begin()) return it->pose;
    const OdometrySample& b = *it;
    const OdometrySample& a = *(it - 1);
    require(b.timestamp_ms - a.timestamp_ms <= kMaxOdometryGapMs, "sync",
            "odometry gap larger than 200 ms around timestamp " + std::to_string(t_ms));
    const double frac = (t_ms - a.timestamp_ms) / (b.timestamp_ms - a.timestamp_ms);
    return Pose2D(a.pose.x + frac * (b.pose.x - a.pose.x),
                  a.pose.y + frac * (b.pose.y - a.pose.y),
                  a.pose.yaw + frac * normalize_angle(b.pose.yaw - a.pose.yaw));
}

// Causal association: each camera timestamp takes the latest ultrasonic frame
// at or before it; camera frames older than every ultrasonic frame are
// dropped. Both timestamp lists must be sorted.
inline std::vector<FramePair> match_frames(const std::vector<double>& camera_ts,
                                           const std::vector<UltrasonicFrame>& uls_frames,
                                           const std::vector<OdometrySample>& odo) {
    require(!uls_frames.empty(), "sync", "ultrasonic stream is empty");
    std::vector<double> uls_ts;
    uls_ts.reserve(uls_frames.size());
    for (const auto& f : uls_frames) uls_ts.push_back(f.timestamp_ms);

    std::vector<FramePair> pairs;
    for (double cam_t : camera_ts) {
        const auto it = std::upper_bound(uls_ts.begin(), uls_ts.end(), cam_t);
        if (it == uls_ts.begin()) continue;  // no causal ultrasonic data yet
        const std::size_t idx = static_cast<std::size_t>(it - uls_ts.begin()) - 1;
        const Pose2D pose_u = interpolate_pose(odo, uls_ts[idx]);
        const Pose2D pose_c = interpolate_pose(odo, cam_t);
        pairs.push_back({cam_t, uls_ts[idx], idx, pose_compose(pose_inverse(pose_u), pose_c)});
    }
    return pairs;
}

// Bilinear read of one channel at continuous grid coordinates (integer values
// on cell centers); zero outside the extent.
inline double bilinear_sample(const BevGrid& grid, double row_f, double col_f, int ch = 0) {
    const int r0 = static_cast<int>(std::floor(row_f));
    const int c0 = static_cast<int>(std::floor(col_f));
    const double fr = row_f - r0;
    const double fc = col_f - c0;
    double out = 0.0;
    for (int dr = 0; dr <= 1; ++dr) {
        for (int dc = 0; dc <= 1; ++dc) {
            const int r = r0 + dr;
            const int c = c0 + dc;
            if (r < 0 || r >= grid.rows() || c < 0 || c >= grid.cols()) continue;
            const double w = (dr ? fr : 1.0 - fr) * (dc ? fc : 1.0 - fc);
            if (w != 0.0) out += w * grid.at(r, c, ch);
        }
    }
    return out;
}

// Warps a measurement-time grid into the camera-time vehicle frame: each
// output cell pulls from the source grid at pose_delta applied to its center.
// Source coordinates are snapped to the cell lattice when within 1e-9 cells
// so whole-cell motions stay exact.
inline BevGrid compensate_ego_motion(const BevGrid& grid, const Pose2D& pose_delta) {
    if (pose_delta.x == 0.0 && pose_delta.y == 0.0 && pose_delta.yaw == 0.0) return grid;
    BevGrid out(grid.spec, grid.channels);
    auto snap = [](double v) {
        const double r = std::round(v);
        return std::abs(v - r) < 1e-9 ? r : v;
    };
    for (int r = 0; r < out.rows(); ++r) {
        for (int c = 0; c < out.cols(); ++c) {
            const Vec2 target = cell_center(grid.spec, {r, c});
            const Vec2 source = pose_apply(pose_delta, target);
            const Vec2 g = grid_coords(grid.spec, source);
            const double row_f = snap(g.x);
            const double col_f = snap(g.y);
            for (int ch = 0; ch < grid.channels; ++ch)
                out.at(r, c, ch) = bilinear_sample(grid, row_f, col_f, ch);
        }
    }
    return out;
}

}  // namespace bevfuse
