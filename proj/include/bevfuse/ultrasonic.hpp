#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bevfuse/common.hpp"
#include "bevfuse/geometry.hpp"

namespace bevfuse {

// Echo amplitude over round-trip distance for one signalway. Samples are
// uniformly spaced starting at distance 0.
struct EchoEnvelope {
    int emitter_id = 0;
    int receiver_id = 0;
    double sample_spacing = 0.02;
    std::vector<double> amplitudes;

    double max_distance() const {
        return amplitudes.empty() ? 0.0 : (amplitudes.size() - 1) * sample_spacing;
    }

    void validate(double max_round_trip = 9.0) const {
        require(sample_spacing > 0.0, "ultrasonic", "envelope sample spacing must be positive");
        require(!amplitudes.empty(), "ultrasonic", "envelope has no samples");
        for (double a : amplitudes)
            require(a >= 0.0, "ultrasonic", "envelope amplitudes must be non-negative");
        require(max_distance() < max_round_trip, "ultrasonic",
                "envelope exceeds the sensor round-trip range");
    }
};

struct UltrasonicFrame {
    double timestamp_ms = 0.0;
    std::vector<EchoEnvelope> envelopes;  // one per signalway

    void validate() const {
        require(!envelopes.empty(), "ultrasonic", "frame holds no signalways");
        for (const auto& e : envelopes) {
            e.validate();
            require(e.sample_spacing == envelopes.front().sample_spacing, "ultrasonic",
                    "all signalways in a frame must share one sample spacing");
        }
    }
};

struct UltrasonicSensor {
    int id = 0;
    Pose2D pose;  // position + boresight yaw on the bumper, vehicle frame
};

// Emitter/receiver pair; mono-static when both ids match.
struct Signalway {
    int tx = 0;
    int rx = 0;
};

// Bumper sensor array. The horizontal field of view narrows with range: the
// half opening angle runs linearly from half_angle_near at range 0 down to
// half_angle_far at max_range.
struct SensorLayout {
    std::vector<UltrasonicSensor> sensors;
    double half_angle_near = 65.0 * kPi / 180.0;
    double half_angle_far = 35.0 * kPi / 180.0;
    double max_range = 4.5;

    void validate() const {
        require(!sensors.empty(), "ultrasonic", "layout needs at least one sensor");
        require(half_angle_far > 0.0 && half_angle_far <= half_angle_near &&
                    half_angle_near <= kPi / 2.0,
                "ultrasonic", "require 0 < half_angle_far <= half_angle_near <= pi/2");
        require(max_range > 0.0, "ultrasonic", "max_range must be positive");
    }

    const UltrasonicSensor& sensor(int id) const {
        for (const auto& s : sensors)
            if (s.id == id) return s;
        fail("ultrasonic", "unknown sensor id " + std::to_string(id));
    }
};

// Beta(2,2) off-axis attenuation, scaled to 1 on the sensor axis:
// with x = (1 + alpha/half_angle)/2 the density 6x(1-x) becomes
// 4x(1-x) = 1 - (alpha/half_angle)^2 after peak normalization.
inline double attenuation_weight(double alpha, double half_angle) {
    require(half_angle > 0.0, "ultrasonic", "half angle must be positive");
    const double a = alpha / half_angle;
    if (a <= -1.0 || a >= 1.0) return 0.0;
    return 1.0 - a * a;
}

// Linear interpolation of the envelope at a round-trip distance; zero beyond
// the listening window.
inline double sample_envelope(const EchoEnvelope& env, double round_trip) {
    require(round_trip >= 0.0, "ultrasonic", "round-trip distance must be non-negative");
    if (env.amplitudes.empty()) return 0.0;
    const double pos = round_trip / env.sample_spacing;
    const auto k = static_cast<std::size_t>(pos);
    if (pos > static_cast<double>(env.amplitudes.size() - 1)) return 0.0;
    if (k + 1 >= env.amplitudes.size()) return env.amplitudes.back();
    const double frac = pos - static_cast<double>(k);
    return env.amplitudes[k] * (1.0 - frac) + env.amplitudes[k + 1] * frac;
}

inline double effective_half_angle(const SensorLayout& layout, double range) {
    require(range >= 0.0, "ultrasonic", "range must be non-negative");
    const double t = std::min(range / layout.max_range, 1.0);
    return layout.half_angle_near + t * (layout.half_angle_far - layout.half_angle_near);
}

namespace detail {

inline double signalway_contribution(const EchoEnvelope& env, const UltrasonicSensor& tx,
                                     const UltrasonicSensor& rx, const SensorLayout& layout,
                                     Vec2 cell) {
    const Vec2 to_cell_tx = cell - Vec2{tx.pose.x, tx.pose.y};
    const Vec2 to_cell_rx = cell - Vec2{rx.pose.x, rx.pose.y};
    const double d1 = norm(to_cell_tx);
    const double d2 = norm(to_cell_rx);
    const double a1 = normalize_angle(std::atan2(to_cell_tx.y, to_cell_tx.x) - tx.pose.yaw);
    const double a2 = normalize_angle(std::atan2(to_cell_rx.y, to_cell_rx.x) - rx.pose.yaw);
    return sample_envelope(env, d1 + d2) *
           attenuation_weight(a1, effective_half_angle(layout, d1)) *
           attenuation_weight(a2, effective_half_angle(layout, d2));
}

}  // namespace detail

// Distributes the echo amplitudes of every signalway over the grid: per cell,
// the envelope is sampled at d1+d2 and attenuated by the off-axis angle at
// both the emitting and the receiving sensor, then summed across signalways.
inline BevGrid fill_grid(const UltrasonicFrame& frame, const SensorLayout& layout,
                         const GridSpec& spec) {
    frame.validate();
    layout.validate();
    BevGrid grid(spec, 1);
    const int rows = spec.rows();
    const int cols = spec.cols();

    // Distance/angle fields are cached per sensor, not per signalway, so a
    // sensor feeding several signalways is evaluated once.
    std::vector<int> sensor_ids;
    for (const auto& env : frame.envelopes) {
        layout.sensor(env.emitter_id);
        layout.sensor(env.receiver_id);
        for (int id : {env.emitter_id, env.receiver_id})
            if (std::find(sensor_ids.begin(), sensor_ids.end(), id) == sensor_ids.end())
                sensor_ids.push_back(id);
    }

    const std::size_t cells = static_cast<std::size_t>(rows) * cols;
    std::vector<std::vector<double>> dist(sensor_ids.size(), std::vector<double>(cells));
    std::vector<std::vector<double>> weight(sensor_ids.size(), std::vector<double>(cells));
    for (std::size_t si = 0; si < sensor_ids.size(); ++si) {
        const UltrasonicSensor& s = layout.sensor(sensor_ids[si]);
        std::size_t i = 0;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c, ++i) {
                const Vec2 cell = cell_center(spec, {r, c});
                const Vec2 d = cell - Vec2{s.pose.x, s.pose.y};
                dist[si][i] = norm(d);
                const double alpha = normalize_angle(std::atan2(d.y, d.x) - s.pose.yaw);
                weight[si][i] = attenuation_weight(alpha, effective_half_angle(layout, dist[si][i]));
            }
        }
    }

    auto slot = [&](int id) {
        return static_cast<std::size_t>(
            std::find(sensor_ids.begin(), sensor_ids.end(), id) - sensor_ids.begin());
    };
    for (const auto& env : frame.envelopes) {
        const std::size_t tx = slot(env.emitter_id);
        const std::size_t rx = slot(env.receiver_id);
        for (std::size_t i = 0; i < cells; ++i) {
            const double w = weight[tx][i] * weight[rx][i];
            if (w == 0.0) continue;
            grid.data[i] += sample_envelope(env, dist[tx][i] + dist[rx][i]) * w;
        }
    }
    return grid;
}

// Literal per-cell reference implementation of the same mapping, kept free of
// shared-sensor caching for differential testing.
inline BevGrid fill_grid_oracle(const UltrasonicFrame& frame, const SensorLayout& layout,
                                const GridSpec& spec) {
    frame.validate();
    layout.validate();
    BevGrid grid(spec, 1);
    for (int r = 0; r < spec.rows(); ++r) {
        for (int c = 0; c < spec.cols(); ++c) {
            const Vec2 cell = cell_center(spec, {r, c});
            double sum = 0.0;
            for (const auto& env : frame.envelopes) {
                sum += detail::signalway_contribution(env, layout.sensor(env.emitter_id),
                                                      layout.sensor(env.receiver_id), layout, cell);
            }
            grid.at(r, c) = sum;
        }
    }
    return grid;
}

}  // namespace bevfuse
