#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "bevfuse/common.hpp"

namespace bevfuse {

// ISO 8855 vehicle frame throughout: x forward, y left, z up. The BEV grid
// hangs off the rear, anchored at the camera position.

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }

// Normalizes to (-pi, pi].
inline double normalize_angle(double yaw) {
    double y = std::fmod(yaw + kPi, 2.0 * kPi);
    if (y <= 0.0) y += 2.0 * kPi;
    return y - kPi;
}

struct Pose2D {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;

    Pose2D() = default;
    Pose2D(double x_, double y_, double yaw_) : x(x_), y(y_), yaw(normalize_angle(yaw_)) {}
};

inline Vec2 pose_apply(const Pose2D& pose, Vec2 p) {
    const double c = std::cos(pose.yaw);
    const double s = std::sin(pose.yaw);
    return {pose.x + c * p.x - s * p.y, pose.y + s * p.x + c * p.y};
}

inline Pose2D pose_compose(const Pose2D& a, const Pose2D& b) {
    const Vec2 t = pose_apply(a, {b.x, b.y});
    return Pose2D(t.x, t.y, a.yaw + b.yaw);
}

inline Pose2D pose_inverse(const Pose2D& a) {
    const double c = std::cos(a.yaw);
    const double s = std::sin(a.yaw);
    return Pose2D(-(c * a.x + s * a.y), -(-s * a.x + c * a.y), -a.yaw);
}

struct CellIndex {
    int row = 0;
    int col = 0;
    friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

// Metric raster over the rear area: `rear_extent` meters behind the anchor,
// `lateral_half_extent` meters to each side. Row 0 sits at the anchor (rear
// bumper) and rows grow rearward; col 0 is the leftmost (+y) edge.
struct GridSpec {
    double lateral_half_extent = 6.0;
    double rear_extent = 6.0;
    double cell_size = 0.05;
    Pose2D anchor{};

    GridSpec() = default;
    GridSpec(double lateral_half, double rear, double cell, Pose2D anchor_pose = {})
        : lateral_half_extent(lateral_half), rear_extent(rear), cell_size(cell), anchor(anchor_pose) {
        validate();
    }

    void validate() const {
        require(cell_size > 0.0, "geometry", "grid cell_size must be positive");
        require(lateral_half_extent > 0.0 && rear_extent > 0.0, "geometry",
                "grid extents must be positive");
        require(integral_cells(rear_extent) && integral_cells(2.0 * lateral_half_extent), "geometry",
                "grid extents must be integral multiples of cell_size");
    }

    int rows() const { return static_cast<int>(std::llround(rear_extent / cell_size)); }
    int cols() const { return static_cast<int>(std::llround(2.0 * lateral_half_extent / cell_size)); }

private:
    bool integral_cells(double extent) const {
        const double n = extent / cell_size;
        return n >= 0.5 && std::abs(n - std::llround(n)) < 1e-9;
    }
};

// Dense raster of rows x cols x channels doubles. Amplitude grids stay
// non-negative; label grids hold {0, 1}.
struct BevGrid {
    GridSpec spec;
    int channels = 1;
    std::vector<double> data;

    BevGrid() = default;
    explicit BevGrid(const GridSpec& s, int ch = 1)
        : spec(s), channels(ch),
          data(static_cast<std::size_t>(s.rows()) * s.cols() * ch, 0.0) {
        require(ch >= 1, "geometry", "grid channel count must be >= 1");
    }

    int rows() const { return spec.rows(); }
    int cols() const { return spec.cols(); }

    double& at(int row, int col, int ch = 0) {
        return data[(static_cast<std::size_t>(row) * cols() + col) * channels + ch];
    }
    double at(int row, int col, int ch = 0) const {
        return data[(static_cast<std::size_t>(row) * cols() + col) * channels + ch];
    }
};

// Continuous grid coordinates of a vehicle-frame point: integer values sit on
// cell centers, so (row_f, col_f) = (-0.5, ...) is the anchor-side grid edge.
inline Vec2 grid_coords(const GridSpec& spec, Vec2 p) {
    const Vec2 local = pose_apply(pose_inverse(spec.anchor), p);
    const double rear = -local.x;
    const double t = spec.lateral_half_extent - local.y;
    return {rear / spec.cell_size - 0.5, t / spec.cell_size - 0.5};
}

// Cell containing p, or absent outside the extent. Points exactly on a cell
// boundary belong to the larger index (half-open cells).
inline std::optional<CellIndex> world_to_cell(const GridSpec& spec, Vec2 p) {
    const Vec2 local = pose_apply(pose_inverse(spec.anchor), p);
    const double rear = -local.x;
    const double t = spec.lateral_half_extent - local.y;
    const int row = static_cast<int>(std::floor(rear / spec.cell_size));
    const int col = static_cast<int>(std::floor(t / spec.cell_size));
    if (row < 0 || row >= spec.rows() || col < 0 || col >= spec.cols()) return std::nullopt;
    return CellIndex{row, col};
}

// Metric center of a cell in the vehicle frame.
inline Vec2 cell_center(const GridSpec& spec, CellIndex idx) {
    require(idx.row >= 0 && idx.row < spec.rows() && idx.col >= 0 && idx.col < spec.cols(),
            "geometry", "cell index out of range");
    const double rear = (idx.row + 0.5) * spec.cell_size;
    const double y = spec.lateral_half_extent - (idx.col + 0.5) * spec.cell_size;
    return pose_apply(spec.anchor, {-rear, y});
}

}  // namespace bevfuse
