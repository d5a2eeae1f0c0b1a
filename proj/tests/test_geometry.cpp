#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "rotdet/errors.hpp"
#include "rotdet/geometry.hpp"
#include "rotdet/rng.hpp"

using namespace rotdet;

namespace {

RotatedRect random_rect(Rng& rng, double span, double size_min, double size_max) {
    const double w = rng.uniform(size_min, size_max);
    const double h = rng.uniform(size_min, size_max);
    const double theta = rng.uniform(-std::numbers::pi / 2 * 0.98, std::numbers::pi / 2 * 0.98);
    const double cx = rng.uniform(size_max, span - size_max);
    const double cy = rng.uniform(size_max, span - size_max);
    return rect_from_center({cx, cy}, w, h, theta, rng.uniform(0.0, 1.0));
}

// independent greedy definition with a suppression array
std::vector<RotatedRect> nms_oracle(const std::vector<RotatedRect>& boxes, double threshold) {
    std::vector<std::size_t> order(boxes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
    std::vector<bool> suppressed(boxes.size(), false);
    std::vector<RotatedRect> kept;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        if (suppressed[order[oi]]) continue;
        kept.push_back(boxes[order[oi]]);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            if (iou(boxes[order[oi]], boxes[order[oj]]) > threshold) suppressed[order[oj]] = true;
        }
    }
    return kept;
}

bool same_boxes(const std::vector<RotatedRect>& a, const std::vector<RotatedRect>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].score != b[i].score) return false;
        for (int v = 0; v < 4; ++v) {
            if ((a[i].vertices[v] - b[i].vertices[v]).norm() > 1e-12) return false;
        }
    }
    return true;
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("rotation matrix anchors") {
    CHECK(rotation_matrix(0.0).isApprox(Mat2::Identity(), 1e-15));

    const Mat2 m = rotation_matrix(std::numbers::pi / 4);
    const double r = std::sqrt(2.0) / 2.0;
    CHECK(m(0, 0) == doctest::Approx(r));
    CHECK(m(0, 1) == doctest::Approx(-r));
    CHECK(m(1, 0) == doctest::Approx(r));
    CHECK(m(1, 1) == doctest::Approx(r));

    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        const double t = rng.uniform(-1.5, 1.5);
        CHECK((rotation_matrix(t) * rotation_matrix(-t) - Mat2::Identity()).norm() < 1e-12);
        CHECK(std::abs(rotation_matrix(t).determinant() - 1.0) < 1e-12);
    }
}

TEST_CASE("restore_rect axis-aligned anchor") {
    PixelGeometry g;
    g.point = {10, 10};
    g.theta = 0.0;
    g.top = 2;
    g.right = 3;
    g.bottom = 4;
    g.left = 5;
    const RotatedRect r = restore_rect(g);
    CHECK(r.vertices[0].isApprox(Vec2(5, 8), 1e-12));
    CHECK(r.vertices[1].isApprox(Vec2(13, 8), 1e-12));
    CHECK(r.vertices[2].isApprox(Vec2(13, 14), 1e-12));
    CHECK(r.vertices[3].isApprox(Vec2(5, 14), 1e-12));
    CHECK(rect_width(r) == doctest::Approx(8.0));
    CHECK(rect_is_valid(r));
}

TEST_CASE("restore_rect unit square symmetry") {
    PixelGeometry g;
    g.point = {0, 0};
    g.top = g.right = g.bottom = g.left = 1;
    const RotatedRect r = restore_rect(g);
    CHECK(r.vertices[0].isApprox(Vec2(-1, -1), 1e-12));
    CHECK(r.vertices[2].isApprox(Vec2(1, 1), 1e-12));
}

TEST_CASE("restore_rect distances re-measure under rotation") {
    PixelGeometry g;
    g.point = {10, 10};
    g.theta = std::numbers::pi / 6;
    g.top = 2;
    g.right = 3;
    g.bottom = 4;
    g.left = 5;
    const RotatedRect r = restore_rect(g);
    const auto d = edge_distances(r, g.point);
    CHECK(std::abs(d[0] - g.top) < 1e-9);
    CHECK(std::abs(d[1] - g.right) < 1e-9);
    CHECK(std::abs(d[2] - g.bottom) < 1e-9);
    CHECK(std::abs(d[3] - g.left) < 1e-9);
    CHECK(std::abs(theta_from_vertices(r) - g.theta) < 1e-9);
    CHECK(rect_contains(r, g.point));
}

TEST_CASE("restore_rect rejects degenerate geometry") {
    PixelGeometry g;
    g.point = {0, 0};
    g.top = 0;
    g.bottom = 0;
    g.left = 1;
    g.right = 1;
    CHECK_THROWS_AS(restore_rect(g), NumericError);
}

TEST_CASE("restore round trip from random interior points") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const RotatedRect r = random_rect(rng, 100.0, 4.0, 40.0);
        // random interior point via the center plus a sub-half offset
        PixelGeometry g;
        const double fx = rng.uniform(-0.45, 0.45);
        const double fy = rng.uniform(-0.45, 0.45);
        const double w = rect_width(r);
        const double h = (r.vertices[3] - r.vertices[0]).norm();
        const Mat2 mt = rotation_matrix(r.theta).transpose();
        g.point = rect_center(r) + mt * Vec2(fx * w, fy * h);
        const auto d = edge_distances(r, g.point);
        g.top = d[0];
        g.right = d[1];
        g.bottom = d[2];
        g.left = d[3];
        g.theta = r.theta;
        const RotatedRect back = restore_rect(g);
        for (int v = 0; v < 4; ++v) {
            CHECK((back.vertices[v] - r.vertices[v]).norm() < 1e-9);
        }
    }
}

TEST_CASE("polygon intersection anchors") {
    const RotatedRect a = rect_from_xywh(0, 0, 1, 1);
    CHECK(polygon_intersection_area(a, a) == doctest::Approx(1.0));

    const RotatedRect b = rect_from_xywh(0.5, 0, 1, 1);
    CHECK(polygon_intersection_area(a, b) == doctest::Approx(0.5));
    CHECK(polygon_intersection_area(b, a) == doctest::Approx(0.5));

    const RotatedRect far = rect_from_xywh(10, 10, 1, 1);
    CHECK(polygon_intersection_area(a, far) == doctest::Approx(0.0));
}

TEST_CASE("polygon intersection matches dense rasterization") {
    Rng rng(41);
    for (int trial = 0; trial < 3; ++trial) {
        const RotatedRect a = random_rect(rng, 8.0, 1.0, 3.0);
        const RotatedRect b = random_rect(rng, 8.0, 1.0, 3.0);
        const double area = polygon_intersection_area(a, b);

        double min_x = 1e9, max_x = -1e9, min_y = 1e9, max_y = -1e9;
        for (const auto& r : {a, b}) {
            for (const Vec2& v : r.vertices) {
                min_x = std::min(min_x, v.x());
                max_x = std::max(max_x, v.x());
                min_y = std::min(min_y, v.y());
                max_y = std::max(max_y, v.y());
            }
        }
        const double step = 1e-3 * std::max(max_x - min_x, max_y - min_y);
        long hits = 0, total = 0;
        for (double y = min_y + step / 2; y < max_y; y += step) {
            for (double x = min_x + step / 2; x < max_x; x += step) {
                ++total;
                if (rect_contains(a, {x, y}) && rect_contains(b, {x, y})) ++hits;
            }
        }
        const double approx = (max_x - min_x) * (max_y - min_y) * static_cast<double>(hits) /
                              static_cast<double>(total);
        const double denom = std::max(1.0, std::max(area, approx));
        CHECK(std::abs(area - approx) / denom < 2e-3);
    }
}

TEST_CASE("iou anchors and properties") {
    const RotatedRect a = rect_from_xywh(0, 0, 1, 1);
    CHECK(iou(a, a) == doctest::Approx(1.0));
    CHECK(iou(a, rect_from_xywh(5, 5, 1, 1)) == doctest::Approx(0.0));
    CHECK(iou(a, rect_from_xywh(0.5, 0, 1, 1)) == doctest::Approx(1.0 / 3.0));

    Rng rng(43);
    for (int i = 0; i < 50; ++i) {
        const RotatedRect p = random_rect(rng, 20.0, 1.0, 6.0);
        const RotatedRect q = random_rect(rng, 20.0, 1.0, 6.0);
        const double v = iou(p, q);
        CHECK(v == doctest::Approx(iou(q, p)));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("nms anchors") {
    RotatedRect a = rect_from_xywh(0, 0, 2, 2);
    a.score = 0.9;
    CHECK(nms({a}, 0.2).size() == 1);

    RotatedRect b = a;
    b.score = 0.8;
    const auto kept = nms({b, a}, 0.2);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == doctest::Approx(0.9));
}

TEST_CASE("nms equals brute-force greedy definition and is idempotent") {
    Rng rng(47);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = rng.uniform_int(1, 10);
        std::vector<RotatedRect> boxes;
        for (int i = 0; i < n; ++i) boxes.push_back(random_rect(rng, 30.0, 2.0, 12.0));
        const double threshold = rng.uniform(0.1, 0.6);
        const auto kept = nms(boxes, threshold);
        const auto expect = nms_oracle(boxes, threshold);
        CHECK(same_boxes(kept, expect));
        CHECK(same_boxes(nms(kept, threshold), kept));
        for (std::size_t i = 0; i < kept.size(); ++i) {
            for (std::size_t j = i + 1; j < kept.size(); ++j) {
                CHECK(iou(kept[i], kept[j]) <= threshold + 1e-12);
            }
            CHECK((i == 0 || kept[i - 1].score >= kept[i].score));
        }
    }
}

TEST_SUITE_END();
