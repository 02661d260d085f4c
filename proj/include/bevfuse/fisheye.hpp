#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "bevfuse/common.hpp"
#include "bevfuse/geometry.hpp"

namespace bevfuse {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline double norm(Vec3 v) { return std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z); }

struct Mat3 {
    // row-major
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    Vec3 apply(Vec3 v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
                r.m[i * 3 + j] = s;
            }
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i * 3 + j] = m[j * 3 + i];
        return r;
    }

    double orthonormality_defect() const {
        const Mat3 g = *this * transposed();
        double worst = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                worst = std::max(worst, std::abs(g.m[i * 3 + j] - (i == j ? 1.0 : 0.0)));
        return worst;
    }
};

inline Mat3 rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return Mat3{{1, 0, 0, 0, c, -s, 0, s, c}};
}
inline Mat3 rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return Mat3{{c, 0, s, 0, 1, 0, -s, 0, c}};
}
inline Mat3 rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}};
}

// Kannala-Brandt intrinsics. d(theta) must be strictly increasing on
// [0, theta_max]; verified at construction by sampling, since Newton
// inversion relies on it.
struct FisheyeIntrinsics {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    double k1 = 0.0, k2 = 0.0, k3 = 0.0, k4 = 0.0;
    int width = 0, height = 0;
    double theta_max = 100.0 * kPi / 180.0;

    FisheyeIntrinsics() = default;
    FisheyeIntrinsics(double fx_, double fy_, double cx_, double cy_,
                      double k1_, double k2_, double k3_, double k4_,
                      int width_, int height_, double theta_max_ = 100.0 * kPi / 180.0)
        : fx(fx_), fy(fy_), cx(cx_), cy(cy_), k1(k1_), k2(k2_), k3(k3_), k4(k4_),
          width(width_), height(height_), theta_max(theta_max_) {
        validate();
    }

    void validate() const {
        require(fx > 0.0 && fy > 0.0, "fisheye", "focal lengths must be positive");
        require(width > 0 && height > 0, "fisheye", "image size must be positive");
        require(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height, "fisheye",
                "principal point outside image");
        require(theta_max > 0.0 && theta_max < kPi, "fisheye", "theta_max out of range");
        double prev = distortion_unchecked(0.0);
        for (double t = 1e-3; t <= theta_max + 1e-12; t += 1e-3) {
            const double d = distortion_unchecked(std::min(t, theta_max));
            require(d > prev, "fisheye", "d(theta) not strictly increasing on [0, theta_max]");
            prev = d;
        }
    }

    double distortion_unchecked(double theta) const {
        const double t2 = theta * theta;
        return theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))));
    }

    double distortion_derivative(double theta) const {
        const double t2 = theta * theta;
        return 1.0 + t2 * (3.0 * k1 + t2 * (5.0 * k2 + t2 * (7.0 * k3 + t2 * 9.0 * k4)));
    }

    double max_radial() const { return distortion_unchecked(theta_max); }
};

// d(theta) = theta + k1 th^3 + k2 th^5 + k3 th^7 + k4 th^9
inline double distortion(double theta, const FisheyeIntrinsics& intr) {
    require(theta >= 0.0 && theta <= intr.theta_max, "fisheye",
            "incidence angle outside [0, theta_max]");
    return intr.distortion_unchecked(theta);
}

struct Pixel {
    double u = 0.0;
    double v = 0.0;
};

inline double incidence_angle(Vec3 p) {
    return std::atan2(std::hypot(p.x, p.y), p.z);
}

// True when a camera-frame point projects inside the modelled field of view.
inline bool in_fov(Vec3 p, const FisheyeIntrinsics& intr) {
    const double r = std::hypot(p.x, p.y);
    if (r == 0.0) return p.z > 0.0;
    return incidence_angle(p) <= intr.theta_max;
}

inline Pixel project(Vec3 p, const FisheyeIntrinsics& intr) {
    const double r = std::hypot(p.x, p.y);
    if (r == 0.0) {
        require(p.z > 0.0, "fisheye",
                p.z == 0.0 ? "cannot project the camera origin" : "on-axis point behind the camera");
        return {intr.cx, intr.cy};
    }
    const double theta = std::atan2(r, p.z);
    const double d = distortion(theta, intr);
    return {intr.fx * d * p.x / r + intr.cx, intr.fy * d * p.y / r + intr.cy};
}

// Numerical inverse of the projection. Newton on d(theta) = r_d, tolerance
// 1e-10 rad, at most 50 iterations.
inline Vec3 unproject(Pixel px, const FisheyeIntrinsics& intr) {
    require(px.u >= 0.0 && px.u <= intr.width && px.v >= 0.0 && px.v <= intr.height,
            "fisheye", "pixel outside image bounds");
    const double mx = (px.u - intr.cx) / intr.fx;
    const double my = (px.v - intr.cy) / intr.fy;
    const double rd = std::hypot(mx, my);
    if (rd < 1e-14) return {0.0, 0.0, 1.0};
    require(rd <= intr.max_radial() * (1.0 + 1e-12), "fisheye",
            "pixel beyond the valid distortion radius");

    double theta = std::min(rd, intr.theta_max);
    bool converged = false;
    double residual = 0.0;
    for (int it = 0; it < 50; ++it) {
        residual = intr.distortion_unchecked(theta) - rd;
        const double step = residual / intr.distortion_derivative(theta);
        theta -= step;
        if (theta < 0.0) theta = 0.0;
        if (theta > intr.theta_max) theta = intr.theta_max;
        if (std::abs(step) <= 1e-10) {
            converged = true;
            break;
        }
    }
    require(converged, "fisheye",
            "distortion inversion did not converge; last residual " + std::to_string(residual));
    const double s = std::sin(theta) / rd;
    return {s * mx, s * my, std::cos(theta)};
}

// Rigid vehicle->camera transform for a rear-mounted camera. With zero
// pitch/yaw/roll the optical axis points along vehicle -x (rearward), image
// u along vehicle +y and image v downward. Pitch tilts the view toward the
// ground for positive angles; pitch, yaw, roll are applied in that order
// about the camera's own axes.
struct CameraExtrinsics {
    double x = 0.0;      // camera position in the vehicle frame
    double y = 0.0;
    double z = 1.0;      // mounting height
    double pitch = 0.0;
    double yaw = 0.0;
    double roll = 0.0;

    Mat3 rotation() const {
        const Mat3 base{{0, 1, 0, 0, 0, -1, -1, 0, 0}};
        return rot_z(roll) * rot_y(yaw) * rot_x(pitch) * base;
    }

    Vec3 to_camera(Vec3 p_vehicle) const {
        return rotation().apply(p_vehicle - Vec3{x, y, z});
    }

    // Ground-plane direction of the optical axis in the vehicle frame.
    Vec2 boresight_ground() const {
        const Vec3 axis = rotation().transposed().apply({0.0, 0.0, 1.0});
        const double n = std::hypot(axis.x, axis.y);
        require(n > 1e-9, "fisheye", "camera boresight has no ground-plane component");
        return {axis.x / n, axis.y / n};
    }
};

// Depth band of one pyramid level: radial depth range [z_min, z_max] plus the
// world-height slab [y_min, y_max] it is cropped against.
struct DepthBand {
    double z_min = 0.0;
    double z_max = 0.0;
    double y_min = 0.0;
    double y_max = 1.2;

    DepthBand() = default;
    DepthBand(double zmin, double zmax, double ymin = 0.0, double ymax = 1.2)
        : z_min(zmin), z_max(zmax), y_min(ymin), y_max(ymax) {
        require(0.0 < z_min && z_min < z_max, "fisheye", "depth band requires 0 < z_min < z_max");
        require(y_min < y_max, "fisheye", "depth band requires y_min < y_max");
    }
};

// Default pyramid bands: boundaries near*2^k capped by far, farthest band
// first. With five levels over [0.2, 6] this yields 3.2-6, 1.6-3.2, 0.8-1.6,
// 0.4-0.8 and 0.2-0.4 meters.
inline std::vector<DepthBand> default_depth_bands(int levels, double near = 0.2, double far = 6.0,
                                                  double y_min = 0.0, double y_max = 1.2) {
    require(levels >= 1, "fisheye", "need at least one pyramid level");
    std::vector<double> bounds;
    for (int k = 0; k < levels; ++k) bounds.push_back(near * std::pow(2.0, k));
    require(bounds.back() < far, "fisheye", "band near/far range too tight for level count");
    bounds.push_back(far);
    std::vector<DepthBand> bands;
    for (int i = levels; i >= 1; --i) bands.emplace_back(bounds[i - 1], bounds[i], y_min, y_max);
    return bands;
}

struct CropBounds {
    int v_min = 0;  // inclusive row
    int v_max = 0;  // exclusive row
    int rows() const { return v_max - v_min; }
};

// Vertical image interval covered by a depth band, computed at the central
// azimuth: the four (depth, height) corners are placed along the camera
// boresight on the ground plane, projected, and the v range is clamped to
// the image.
inline CropBounds crop_bounds(const FisheyeIntrinsics& intr, const CameraExtrinsics& ext,
                              const DepthBand& band) {
    const Vec2 dir = ext.boresight_ground();
    double v_lo = std::numeric_limits<double>::infinity();
    double v_hi = -std::numeric_limits<double>::infinity();
    for (double depth : {band.z_min, band.z_max}) {
        for (double height : {band.y_min, band.y_max}) {
            const Vec3 p_vehicle{ext.x + depth * dir.x, ext.y + depth * dir.y, height};
            const Pixel px = project(ext.to_camera(p_vehicle), intr);
            v_lo = std::min(v_lo, px.v);
            v_hi = std::max(v_hi, px.v);
        }
    }
    CropBounds out;
    out.v_min = std::max(0, static_cast<int>(std::floor(v_lo)));
    out.v_max = std::min(intr.height, static_cast<int>(std::ceil(v_hi)));
    require(out.v_min < out.v_max, "fisheye", "depth band projects entirely outside the image");
    return out;
}

}  // namespace bevfuse
