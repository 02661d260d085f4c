#include <catch2/catch_amalgamated.hpp>

#include "bevfuse/common.hpp"
#include "bevfuse/metrics.hpp"

using namespace bevfuse;

namespace {

BevGrid mask_grid(const GridSpec& spec, const std::vector<CellIndex>& cells) {
    BevGrid g(spec, 1);
    for (const auto& c : cells) g.at(c.row, c.col) = 1.0;
    return g;
}

}  // namespace

TEST_CASE("occupancy metrics on hand cases", "[metrics]") {
    const GridSpec spec(1.0, 1.0, 0.1);

    SECTION("identical non-empty masks score 1 everywhere") {
        const BevGrid m = mask_grid(spec, {{2, 3}, {2, 4}, {3, 3}});
        const auto r = occupancy_metrics(m, m);
        CHECK(r.recall == 1.0);
        CHECK(r.dice == 1.0);
        CHECK(r.precision == 1.0);
        CHECK(r.iou == 1.0);
    }

    SECTION("disjoint non-empty masks score 0") {
        const auto r = occupancy_metrics(mask_grid(spec, {{0, 0}}), mask_grid(spec, {{5, 5}}));
        CHECK(r.recall == 0.0);
        CHECK(r.dice == 0.0);
        CHECK(r.precision == 0.0);
        CHECK(r.iou == 0.0);
    }

    SECTION("2-of-4 overlap") {
        const BevGrid gt = mask_grid(spec, {{1, 1}, {1, 2}, {2, 1}, {2, 2}});
        const BevGrid pred = mask_grid(spec, {{1, 1}, {1, 2}});
        const auto r = occupancy_metrics(pred, gt);
        CHECK(r.recall == Catch::Approx(0.5));
        CHECK(r.precision == Catch::Approx(1.0));
        CHECK(r.dice == Catch::Approx(2.0 / 3.0).epsilon(1e-6));
        CHECK(r.iou == Catch::Approx(0.5));
    }

    SECTION("empty vs empty is vacuously perfect") {
        const BevGrid e(spec, 1);
        const auto r = occupancy_metrics(e, e);
        CHECK(r.recall == 1.0);
        CHECK(r.dice == 1.0);
        CHECK(r.precision == 1.0);
        CHECK(r.iou == 1.0);
    }

    SECTION("raster mismatch fails") {
        CHECK_THROWS_AS(
            occupancy_metrics(BevGrid(GridSpec(1.0, 1.0, 0.1), 1),
                              BevGrid(GridSpec(1.0, 1.0, 0.05), 1)),
            Error);
    }
}

TEST_CASE("dice is 2 iou / (1 + iou) on random mask pairs", "[metrics]") {
    const GridSpec spec(1.0, 1.0, 0.1);
    Rng rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
        BevGrid a(spec, 1), b(spec, 1);
        for (auto& v : a.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
        for (auto& v : b.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
        const auto r = occupancy_metrics(a, b);
        CHECK(r.dice == Catch::Approx(2.0 * r.iou / (1.0 + r.iou)).margin(1e-12));
    }
}

TEST_CASE("extract_obstacles uses 4-connectivity and deterministic order", "[metrics]") {
    const GridSpec spec(1.0, 1.0, 0.1);

    CHECK(extract_obstacles(BevGrid(spec, 1)).empty());

    // diagonal cells are separate instances
    const auto diag = extract_obstacles(mask_grid(spec, {{3, 3}, {4, 4}}));
    REQUIRE(diag.size() == 2);
    CHECK(diag[0].cells.size() == 1);

    // 4-connected block is one instance with the centroid at the middle cell
    const auto block =
        extract_obstacles(mask_grid(spec, {{4, 4}, {4, 5}, {4, 6}, {5, 4}, {5, 5}, {5, 6},
                                           {6, 4}, {6, 5}, {6, 6}}));
    REQUIRE(block.size() == 1);
    CHECK(block[0].cells.size() == 9);
    const Vec2 center = cell_center(spec, {5, 5});
    CHECK(block[0].centroid.x == Catch::Approx(center.x).margin(1e-12));
    CHECK(block[0].centroid.y == Catch::Approx(center.y).margin(1e-12));

    // ordering by (min row, min col): an L-shaped blob starting at col 5 but
    // reaching col 2 sorts before a blob starting at (0, 3)
    BevGrid two(spec, 1);
    two.at(0, 5) = 1.0;
    two.at(1, 5) = 1.0;
    two.at(1, 2) = 1.0;
    two.at(1, 3) = 1.0;
    two.at(1, 4) = 1.0;
    two.at(0, 3) = 1.0;  // touches (1,3) -> same blob actually
    const auto blobs = extract_obstacles(two);
    REQUIRE(blobs.size() == 1);

    BevGrid sep(spec, 1);
    sep.at(0, 5) = 1.0;
    sep.at(0, 3) = 1.0;
    const auto pair = extract_obstacles(sep);
    REQUIRE(pair.size() == 2);
    // both min row 0: order by min col
    CHECK(pair[0].cells[0].col == 3);
    CHECK(pair[1].cells[0].col == 5);
}

TEST_CASE("distance metrics on matched pairs", "[metrics]") {
    // points are (lateral, depth); the second coordinate is the rearward axis
    SECTION("perfect prediction") {
        const auto m = distance_metrics({{1.0, 1.0}}, {{1.0, 1.0}}, {0.0, 0.0}, 6.0);
        CHECK(m.euclidean_e == 0.0);
        CHECK(m.distance_d == 0.0);
        CHECK(m.norm_nd == 0.0);
        CHECK(m.matched == 1);
        CHECK(m.missed == 0);
        CHECK(m.spurious == 0);
    }

    SECTION("worked example: gt (1,1), pred (1,2), ego origin") {
        const auto m = distance_metrics({{1.0, 2.0}}, {{1.0, 1.0}}, {0.0, 0.0}, 6.0);
        CHECK(m.euclidean_e == Catch::Approx(1.0));
        CHECK(m.distance_d == Catch::Approx(1.0));
        CHECK(m.norm_nd == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
    }

    SECTION("total miss uses the farthest point of the camera disk") {
        const double r = 2.0, R = 6.0;
        const auto m = distance_metrics({}, {{0.0, r}}, {0.0, 0.0}, R);
        CHECK(m.missed == 1);
        CHECK(m.euclidean_e == Catch::Approx(r + R));
        CHECK(m.norm_nd == Catch::Approx((r + R) / r));
        // the substitute point lies on the opposite side of the ego
        CHECK(m.distance_d == Catch::Approx(r + R));
    }

    SECTION("no ground truth instances is an error") {
        CHECK_THROWS_AS(distance_metrics({{1.0, 1.0}}, {}, {0.0, 0.0}, 6.0), Error);
    }

    SECTION("camera range must be positive") {
        CHECK_THROWS_AS(distance_metrics({{1.0, 1.0}}, {{1.0, 1.0}}, {0.0, 0.0}, 0.0), Error);
    }
}

TEST_CASE("greedy matching is one-to-one with deterministic ties", "[metrics]") {
    // two gt, one prediction equidistant from both: smaller gt index wins
    const std::vector<Vec2> gt{{0.0, 2.0}, {0.0, 4.0}};
    const std::vector<Vec2> pred{{0.0, 3.0}};
    const auto m = distance_metrics(pred, gt, {0.0, 0.0}, 6.0);
    CHECK(m.matched == 1);
    CHECK(m.missed == 1);
    CHECK(m.spurious == 0);
    // gt[0] takes the prediction (E = 1); gt[1] is a miss (E = 4 + 6)
    CHECK(m.euclidean_e == Catch::Approx((1.0 + 10.0) / 2.0));

    // extra predictions count as spurious only
    const auto m2 = distance_metrics({{0.0, 2.0}, {3.0, 3.0}, {-2.0, 1.0}}, {{0.0, 2.0}},
                                     {0.0, 0.0}, 6.0);
    CHECK(m2.matched == 1);
    CHECK(m2.spurious == 2);
    CHECK(m2.euclidean_e == 0.0);
}

TEST_CASE("normalized distance is scale invariant about the ego", "[metrics]") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Vec2> gt, pred;
        const Vec2 ego{rng.uniform(-1, 1), rng.uniform(-1, 1)};
        for (int i = 0; i < 4; ++i) {
            gt.push_back({rng.uniform(-4, 4), rng.uniform(1, 5)});
            pred.push_back({gt.back().x + rng.uniform(-0.3, 0.3),
                            gt.back().y + rng.uniform(-0.3, 0.3)});
        }
        const double s = rng.uniform(0.5, 3.0);
        auto scaled = [&](const std::vector<Vec2>& pts) {
            std::vector<Vec2> out;
            for (const auto& p : pts) out.push_back(ego + s * (p - ego));
            return out;
        };
        // scale camera_range too so no instance flips between matched/missed
        const auto a = distance_metrics(pred, gt, ego, 6.0);
        const auto b = distance_metrics(scaled(pred), scaled(gt), ego, 6.0 * s);
        CHECK(a.norm_nd == Catch::Approx(b.norm_nd).epsilon(1e-9));
    }
}

TEST_CASE("optional normalized-distance cap", "[metrics]") {
    const auto uncapped = distance_metrics({}, {{0.0, 1.0}}, {0.0, 0.0}, 6.0);
    CHECK(uncapped.norm_nd == Catch::Approx(7.0));
    const auto capped = distance_metrics({}, {{0.0, 1.0}}, {0.0, 0.0}, 6.0, 2.0);
    CHECK(capped.norm_nd == Catch::Approx(2.0));
}
