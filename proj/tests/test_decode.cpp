#include <doctest.h>

#include "rotdet/decode.hpp"
#include "rotdet/loss.hpp"
#include "rotdet/maps.hpp"
#include "rotdet/rng.hpp"

using namespace rotdet;

namespace {

// perfect maps for a set of annotations, as the score/rotation/distance triple
DetectionMaps<double> maps_from_ground_truth(const std::vector<RotatedRect>& boxes, int image_size,
                                             int stride, double shrink) {
    const GroundTruthMaps gt = encode_ground_truth(boxes, image_size, stride, shrink);
    DetectionMaps<double> m;
    m.stride = stride;
    m.score = Tensor<double>::from_array({1, 1, gt.height, gt.width}, gt.score);
    m.rotation = Tensor<double>::from_array({1, 1, gt.height, gt.width}, gt.rotation);
    m.distance = Tensor<double>::from_array({1, 4, gt.height, gt.width}, gt.distance);
    return m;
}

RotatedRect place_box(Rng& rng, double span, double size_min, double size_max) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        const double w = rng.uniform(size_min, size_max);
        const double h = rng.uniform(size_min, size_max);
        const double theta = rng.uniform(-1.2, 1.2);
        const double margin = std::hypot(w, h) / 2 + 1;
        const double cx = rng.uniform(margin, span - margin);
        const double cy = rng.uniform(margin, span - margin);
        RotatedRect r = rect_from_center({cx, cy}, w, h, theta);
        bool ok = true;
        for (const Vec2& v : r.vertices) {
            ok = ok && v.x() > 0.5 && v.x() < span - 0.5 && v.y() > 0.5 && v.y() < span - 0.5;
        }
        if (ok) return r;
    }
    throw std::runtime_error("placement failed");
}

}  // namespace

TEST_SUITE_BEGIN("decode");

TEST_CASE("all scores below threshold decode to nothing") {
    DetectionMaps<double> m;
    m.stride = 1;
    m.score = Tensor<double>::constant({1, 1, 8, 8}, 0.3);
    m.rotation = Tensor<double>::zeros({1, 1, 8, 8});
    m.distance = Tensor<double>::constant({1, 4, 8, 8}, 2.0);
    DecodeSpec spec;
    spec.score_threshold = 0.8;
    CHECK(decode_detections(m, spec).empty());
}

TEST_CASE("one encoded rectangle decodes back to itself") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const RotatedRect box = place_box(rng, 64, 10, 28);
        const auto maps = maps_from_ground_truth({box}, 64, 1, 0.3);
        DecodeSpec spec;
        const auto dets = decode_detections(maps, spec);
        REQUIRE(dets.size() == 1);
        CHECK(iou(dets[0], box) > 0.999999);
        for (int v = 0; v < 4; ++v) {
            CHECK((dets[0].vertices[v] - box.vertices[v]).norm() < 1e-6);
        }
        CHECK(dets[0].score == doctest::Approx(1.0));
    }
}

TEST_CASE("two well-separated rectangles decode to exactly two boxes") {
    const RotatedRect a = rect_from_center({16, 16}, 12, 9, 0.4);
    const RotatedRect b = rect_from_center({48, 48}, 10, 14, -0.7);
    const auto maps = maps_from_ground_truth({a, b}, 64, 1, 0.3);
    DecodeSpec spec;
    const auto dets = decode_detections(maps, spec);
    REQUIRE(dets.size() == 2);
    const bool first_is_a = iou(dets[0], a) > 0.99;
    const RotatedRect& da = first_is_a ? dets[0] : dets[1];
    const RotatedRect& db = first_is_a ? dets[1] : dets[0];
    CHECK(iou(da, a) > 0.99);
    CHECK(iou(db, b) > 0.99);
}

TEST_CASE("decode respects the candidate cap") {
    const RotatedRect big = rect_from_center({32, 32}, 40, 40, 0.0);
    const auto maps = maps_from_ground_truth({big}, 64, 1, 0.0);
    DecodeSpec spec;
    spec.max_candidates = 5;
    const auto dets = decode_detections(maps, spec);
    CHECK(dets.size() == 1);  // all candidates restore the same box
    CHECK(iou(dets[0], big) > 0.999);
}

TEST_CASE("raising the threshold never adds candidates") {
    Rng rng(7);
    const RotatedRect box = place_box(rng, 64, 16, 30);
    auto gt = encode_ground_truth({box}, 64, 1, 0.0);
    // graded score surface: keep geometry, fade the score with distance
    for (int i = 0; i < 64; ++i) {
        for (int j = 0; j < 64; ++j) {
            if (gt.score[i * 64 + j] == 1.0) {
                const double d = (Vec2(j + 0.5, i + 0.5) - rect_center(box)).norm();
                gt.score[i * 64 + j] = std::max(0.05, 1.0 - d / 20.0);
            }
        }
    }
    DetectionMaps<double> m;
    m.stride = 1;
    m.score = Tensor<double>::from_array({1, 1, 64, 64}, gt.score);
    m.rotation = Tensor<double>::from_array({1, 1, 64, 64}, gt.rotation);
    m.distance = Tensor<double>::from_array({1, 4, 64, 64}, gt.distance);

    std::size_t prev = static_cast<std::size_t>(-1);
    for (double thr : {0.2, 0.4, 0.6, 0.8}) {
        DecodeSpec spec;
        spec.score_threshold = thr;
        spec.nms_iou = 0.99;  // keep everything that survives thresholding
        spec.max_candidates = 100000;
        const auto dets = decode_detections(m, spec);
        CHECK(dets.size() <= prev);
        prev = dets.size();
    }
}

TEST_CASE("batch decode matches sequential application and keeps order") {
    Rng rng(11);
    std::vector<DetectionMaps<double>> batch;
    for (int i = 0; i < 3; ++i) {
        batch.push_back(maps_from_ground_truth({place_box(rng, 64, 10, 24)}, 64, 1, 0.3));
    }
    DecodeSpec spec;
    CHECK(decode_batch(std::vector<DetectionMaps<double>>{}, spec).empty());
    const auto all = decode_batch(batch, spec);
    REQUIRE(all.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto single = decode_detections(batch[i], spec);
        REQUIRE(all[i].size() == single.size());
        for (std::size_t k = 0; k < single.size(); ++k) {
            CHECK((all[i][k].vertices[0] - single[k].vertices[0]).norm() == 0.0);
        }
    }
}

TEST_CASE("decoding is deterministic") {
    Rng rng(13);
    const auto maps = maps_from_ground_truth(
        {place_box(rng, 64, 10, 24), place_box(rng, 64, 10, 24)}, 64, 1, 0.3);
    DecodeSpec spec;
    const auto a = decode_detections(maps, spec);
    const auto b = decode_detections(maps, spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].score == b[i].score);
        CHECK((a[i].vertices[2] - b[i].vertices[2]).norm() == 0.0);
    }
}

TEST_SUITE_END();
