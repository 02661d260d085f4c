#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "bevfuse/common.hpp"
#include "bevfuse/geometry.hpp"

namespace bevfuse {

// 4-connected blob of obstacle cells; centroid is the mean of the metric
// cell centers.
struct ObstacleInstance {
    std::vector<CellIndex> cells;
    Vec2 centroid;
};

struct OccupancyMetrics {
    double recall = 1.0;
    double dice = 1.0;
    double precision = 1.0;
    double iou = 1.0;
};

struct DistanceMetrics {
    double euclidean_e = 0.0;   // mean instance-center offset
    double distance_d = 0.0;    // mean |depth| error along the rearward axis
    double norm_nd = 0.0;       // euclidean error normalized by ego distance
    int matched = 0;
    int missed = 0;
    int spurious = 0;
};

struct MetricsReport {
    double recall = 1.0;
    double dice = 1.0;
    double precision = 1.0;
    double iou = 1.0;
    double distance_d = 0.0;
    double norm_nd = 0.0;
    double euclidean_e = 0.0;
    int matched = 0;
    int missed = 0;
    int spurious = 0;
};

inline bool same_raster(const GridSpec& a, const GridSpec& b) {
    return a.lateral_half_extent == b.lateral_half_extent && a.rear_extent == b.rear_extent &&
           a.cell_size == b.cell_size && a.anchor.x == b.anchor.x && a.anchor.y == b.anchor.y &&
           a.anchor.yaw == b.anchor.yaw;
}

// Cellwise scores on the obstacle class. Vacuously perfect when both masks
// are empty (every 0/0 ratio reads as 1).
inline OccupancyMetrics occupancy_metrics(const BevGrid& pred, const BevGrid& gt) {
    require(same_raster(pred.spec, gt.spec), "metrics", "prediction/ground-truth grid mismatch");
    require(pred.channels == 1 && gt.channels == 1, "metrics", "label grids must be 1-channel");
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const bool p = pred.data[i] > 0.5;
        const bool g = gt.data[i] > 0.5;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    auto ratio = [](double num, double den) { return den == 0.0 ? 1.0 : num / den; };
    OccupancyMetrics m;
    m.recall = ratio(tp, tp + fn);
    m.precision = ratio(tp, tp + fp);
    m.dice = ratio(2.0 * tp, 2.0 * tp + fp + fn);
    m.iou = ratio(tp, tp + fp + fn);
    return m;
}

// 4-connected components of the obstacle mask, ordered by (min row, min col).
inline std::vector<ObstacleInstance> extract_obstacles(const BevGrid& mask) {
    require(mask.channels == 1, "metrics", "obstacle masks must be 1-channel");
    const int rows = mask.rows();
    const int cols = mask.cols();
    std::vector<char> seen(static_cast<std::size_t>(rows) * cols, 0);
    std::vector<ObstacleInstance> out;
    std::vector<std::pair<int, int>> keys;

    std::vector<CellIndex> stack;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * cols + c;
            if (seen[i] || mask.data[i] <= 0.5) continue;
            ObstacleInstance inst;
            int min_row = r, min_col = c;
            stack.push_back({r, c});
            seen[i] = 1;
            while (!stack.empty()) {
                const CellIndex cur = stack.back();
                stack.pop_back();
                inst.cells.push_back(cur);
                min_row = std::min(min_row, cur.row);
                min_col = std::min(min_col, cur.col);
                constexpr int dr[4] = {-1, 1, 0, 0};
                constexpr int dc[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int nr = cur.row + dr[k];
                    const int nc = cur.col + dc[k];
                    if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
                    const std::size_t ni = static_cast<std::size_t>(nr) * cols + nc;
                    if (seen[ni] || mask.data[ni] <= 0.5) continue;
                    seen[ni] = 1;
                    stack.push_back({nr, nc});
                }
            }
            Vec2 sum{0.0, 0.0};
            for (const auto& cell : inst.cells) sum = sum + cell_center(mask.spec, cell);
            inst.centroid = (1.0 / static_cast<double>(inst.cells.size())) * sum;
            out.push_back(std::move(inst));
            keys.emplace_back(min_row, min_col);
        }
    }
    std::vector<std::size_t> order(out.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    std::vector<ObstacleInstance> sorted;
    sorted.reserve(out.size());
    for (std::size_t i : order) sorted.push_back(std::move(out[i]));
    return sorted;
}

// Instance-level distance scores. Points live in a BEV metric frame whose
// SECOND coordinate is the rearward (depth) axis, matching the "Y position"
// used by the absolute distance error. Prediction and ground-truth centroids
// are matched greedily by ascending distance, one-to-one (ties: smaller gt
// index, then smaller pred index). An unmatched ground-truth instance scores
// against the farthest point of the camera-range disk from it: distance
// ego->gt plus camera_range along the ego->gt ray. Averages run over all
// ground-truth instances; unmatched predictions only count as spurious.
// nd_cap > 0 optionally caps the per-instance normalized distance.
inline DistanceMetrics distance_metrics(const std::vector<Vec2>& pred,
                                        const std::vector<Vec2>& gt, Vec2 ego,
                                        double camera_range, double nd_cap = 0.0) {
    require(camera_range > 0.0, "metrics", "camera range must be positive");
    require(!gt.empty(), "metrics", "distance metrics undefined without ground-truth instances");

    struct Pair {
        double dist;
        std::size_t gi, pi;
    };
    std::vector<Pair> pairs;
    pairs.reserve(gt.size() * pred.size());
    for (std::size_t gi = 0; gi < gt.size(); ++gi)
        for (std::size_t pi = 0; pi < pred.size(); ++pi)
            pairs.push_back({norm(gt[gi] - pred[pi]), gi, pi});
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.gi != b.gi) return a.gi < b.gi;
        return a.pi < b.pi;
    });

    std::vector<std::optional<std::size_t>> match(gt.size());
    std::vector<char> pred_used(pred.size(), 0);
    for (const auto& p : pairs) {
        if (match[p.gi] || pred_used[p.pi]) continue;
        match[p.gi] = p.pi;
        pred_used[p.pi] = 1;
    }

    DistanceMetrics m;
    double sum_e = 0.0, sum_d = 0.0, sum_nd = 0.0;
    for (std::size_t gi = 0; gi < gt.size(); ++gi) {
        const Vec2 t = gt[gi];
        const double ego_dist = std::max(norm(t - ego), 1e-9);
        Vec2 p;
        if (match[gi]) {
            p = pred[*match[gi]];
            m.matched += 1;
        } else {
            // farthest point of the camera-range disk from the target
            const Vec2 u = (1.0 / ego_dist) * (t - ego);
            p = ego - camera_range * u;
            m.missed += 1;
        }
        const double e = norm(t - p);
        sum_e += e;
        sum_d += std::abs(t.y - p.y);
        double nd = e / ego_dist;
        if (nd_cap > 0.0) nd = std::min(nd, nd_cap);
        sum_nd += nd;
    }
    for (char used : pred_used) m.spurious += used ? 0 : 1;
    const double n = static_cast<double>(gt.size());
    m.euclidean_e = sum_e / n;
    m.distance_d = sum_d / n;
    m.norm_nd = sum_nd / n;
    return m;
}

}  // namespace bevfuse
