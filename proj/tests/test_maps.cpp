#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rotdet/errors.hpp"
#include "rotdet/maps.hpp"
#include "rotdet/rng.hpp"

using namespace rotdet;

namespace {

RotatedRect random_inner_rect(Rng& rng, double span, double size_min, double size_max) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        const double w = rng.uniform(size_min, size_max);
        const double h = rng.uniform(size_min, size_max);
        const double theta = rng.uniform(-std::numbers::pi / 2 * 0.98, std::numbers::pi / 2 * 0.98);
        const double margin = std::hypot(w, h) / 2 + 1;
        if (2 * margin >= span) continue;
        const double cx = rng.uniform(margin, span - margin);
        const double cy = rng.uniform(margin, span - margin);
        return rect_from_center({cx, cy}, w, h, theta);
    }
    throw std::runtime_error("could not place rect");
}

}  // namespace

TEST_SUITE_BEGIN("maps");

TEST_CASE("encode marks exactly the pixels whose centers fall inside") {
    // 2x2 box centered in a 4x4 image at stride 1
    const RotatedRect box = rect_from_xywh(1, 1, 2, 2);
    const auto gt = encode_ground_truth({box}, 4, 1, 0.0);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            const bool inside = rect_contains(box, {j + 0.5, i + 0.5});
            CHECK(gt.score[i * 4 + j] == doctest::Approx(inside ? 1.0 : 0.0));
        }
    }
    CHECK(gt.score.sum() == doctest::Approx(4.0));
    CHECK((gt.mask <= gt.score).all());
}

TEST_CASE("shrunk positive region is contained in the unshrunk one") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const RotatedRect box = random_inner_rect(rng, 64, 10, 30);
        const auto full = encode_ground_truth({box}, 64, 1, 0.0);
        const auto shrunk = encode_ground_truth({box}, 64, 1, 0.3);
        CHECK((shrunk.score <= full.score).all());
        CHECK(shrunk.score.sum() > 0);
        CHECK(shrunk.score.sum() < full.score.sum());
    }
}

TEST_CASE("encode then restore recovers the annotation at every positive pixel") {
    Rng rng(29);
    int checked = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const int image = 128;
        const RotatedRect box = random_inner_rect(rng, image, 24, 60);
        for (int stride : {1, 4, 8, 16}) {
            for (double shrink : {0.0, 0.3}) {
                const auto gt = encode_ground_truth({box}, image, stride, shrink);
                const long plane = static_cast<long>(gt.height) * gt.width;
                for (long px = 0; px < plane; ++px) {
                    if (gt.mask[px] != 1.0) continue;
                    const int i = static_cast<int>(px / gt.width);
                    const int j = static_cast<int>(px % gt.width);
                    PixelGeometry g;
                    g.point = {(j + 0.5) * stride, (i + 0.5) * stride};
                    g.top = gt.distance[0 * plane + px];
                    g.right = gt.distance[1 * plane + px];
                    g.bottom = gt.distance[2 * plane + px];
                    g.left = gt.distance[3 * plane + px];
                    g.theta = gt.rotation[px];
                    const RotatedRect back = restore_rect(g);
                    for (int v = 0; v < 4; ++v) {
                        REQUIRE((back.vertices[v] - box.vertices[v]).norm() < 1e-6);
                    }
                    ++checked;
                    break;  // one pixel per (stride, shrink) combination
                }
            }
        }
    }
    CHECK(checked > 200);
}

TEST_CASE("overlapping boxes resolve to the smaller area") {
    const RotatedRect big = rect_from_xywh(2, 2, 20, 20);
    const RotatedRect small = rect_from_xywh(8, 8, 6, 6);
    const auto gt = encode_ground_truth({big, small}, 32, 1, 0.0);
    const long plane = 32 * 32;
    // the center of the small box must carry the small box's distances
    const int px = 11 * 32 + 11;  // center (11.5, 11.5)
    CHECK(gt.distance[0 * plane + px] == doctest::Approx(11.5 - 8.0));
    // a pixel only inside the big box keeps the big box
    const int py = 4 * 32 + 4;
    CHECK(gt.distance[0 * plane + py] == doctest::Approx(4.5 - 2.0));
    // order independence
    const auto swapped = encode_ground_truth({small, big}, 32, 1, 0.0);
    CHECK((gt.score == swapped.score).all());
    CHECK((gt.distance == swapped.distance).all());
}

TEST_CASE("per-stride encoding is analytic, not resampled") {
    Rng rng(31);
    const RotatedRect box = random_inner_rect(rng, 128, 30, 60);
    for (int stride : {4, 8, 16}) {
        const auto gt = encode_ground_truth({box}, 128, stride, 0.0);
        for (int i = 0; i < gt.height; ++i) {
            for (int j = 0; j < gt.width; ++j) {
                const Vec2 center((j + 0.5) * stride, (i + 0.5) * stride);
                const bool inside = rect_contains(box, center);
                CHECK(gt.score[i * gt.width + j] == doctest::Approx(inside ? 1.0 : 0.0));
            }
        }
    }
}

TEST_CASE("synthetic scenes are deterministic per seed") {
    SynthSpec spec;
    spec.image_size = 64;
    const Sample a = synth_scene(99, spec);
    const Sample b = synth_scene(99, spec);
    CHECK((a.pixels == b.pixels).all());
    REQUIRE(a.annotations.size() == b.annotations.size());
    for (std::size_t i = 0; i < a.annotations.size(); ++i) {
        for (int v = 0; v < 4; ++v) {
            CHECK(a.annotations[i].vertices[v] == b.annotations[i].vertices[v]);
        }
    }
    const Sample c = synth_scene(100, spec);
    CHECK_FALSE((a.pixels == c.pixels).all());
}

TEST_CASE("empty scenes have no annotations and an all-zero score map") {
    SynthSpec spec;
    spec.boxes_min = 0;
    spec.boxes_max = 0;
    const Sample s = synth_scene(7, spec);
    CHECK(s.annotations.empty());
    const auto gt = encode_ground_truth(s.annotations, spec.image_size, 1, 0.0);
    CHECK(gt.score.sum() == doctest::Approx(0.0));
}

TEST_CASE("rendered foreground agrees with the annotation rasterization") {
    SynthSpec spec;
    spec.image_size = 64;
    spec.boxes_min = 2;
    spec.boxes_max = 3;
    spec.noise = 0.0;  // classification by brightness needs a clean render
    long agree = 0, total = 0;
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        const Sample s = synth_scene(seed, spec);
        for (int y = 0; y < spec.image_size; ++y) {
            for (int x = 0; x < spec.image_size; ++x) {
                bool inside = false;
                for (const RotatedRect& r : s.annotations) {
                    inside = inside || rect_contains(r, {x + 0.5, y + 0.5});
                }
                double level = 0;
                for (int c = 0; c < 3; ++c) level += s.pixels[pixel_index(64, c, y, x)];
                const bool bright = level / 3.0 > 0.45;
                agree += (inside == bright) ? 1 : 0;
                ++total;
            }
        }
    }
    CHECK(static_cast<double>(agree) / static_cast<double>(total) >= 0.99);
}

TEST_CASE("mirror is an involution and negates theta") {
    SynthSpec spec;
    spec.image_size = 64;
    spec.boxes_min = 2;
    spec.boxes_max = 2;
    const Sample s = synth_scene(123, spec);
    const Sample m = mirror_sample(s);
    REQUIRE(m.annotations.size() == s.annotations.size());
    for (std::size_t i = 0; i < s.annotations.size(); ++i) {
        CHECK(m.annotations[i].theta == doctest::Approx(-s.annotations[i].theta));
    }
    const Sample mm = mirror_sample(m);
    CHECK((mm.pixels == s.pixels).all());
    for (std::size_t i = 0; i < s.annotations.size(); ++i) {
        for (int v = 0; v < 4; ++v) {
            CHECK((mm.annotations[i].vertices[v] - s.annotations[i].vertices[v]).norm() < 1e-9);
        }
    }
}

TEST_CASE("integer crops commute with ground-truth encoding") {
    SynthSpec spec;
    spec.image_size = 96;
    spec.boxes_min = 2;
    spec.boxes_max = 3;
    spec.size_min = 8;
    spec.size_max = 18;
    const Sample s = synth_scene(55, spec);
    const int cw = 64, x0 = 17, y0 = 9;
    const Sample c = crop_sample(s, x0, y0, cw, cw);
    CHECK(c.size == cw);
    for (const RotatedRect& r : c.annotations) {
        for (const Vec2& v : r.vertices) {
            CHECK(v.x() >= 0.0);
            CHECK(v.x() <= cw);
            CHECK(v.y() >= 0.0);
            CHECK(v.y() <= cw);
        }
    }
    // pixels copy exactly
    for (int y = 0; y < cw; ++y) {
        for (int x = 0; x < cw; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                CHECK(c.pixels[pixel_index(cw, ch, y, x)] ==
                      s.pixels[pixel_index(96, ch, y0 + y, x0 + x)]);
            }
        }
    }
    // encoding of kept (translated) boxes matches the window of the original
    // encoding wherever the original pixel belonged to a kept box
    const auto gt_c = encode_ground_truth(c.annotations, cw, 1, 0.0);
    const auto gt_s = encode_ground_truth(s.annotations, 96, 1, 0.0);
    if (c.annotations.size() == s.annotations.size()) {
        for (int i = 0; i < cw; ++i) {
            for (int j = 0; j < cw; ++j) {
                CHECK(gt_c.score[i * cw + j] == gt_s.score[(y0 + i) * 96 + (x0 + j)]);
            }
        }
    }
}

TEST_CASE("augment leaves values in range and annotations in bounds") {
    SynthSpec spec;
    spec.image_size = 96;
    spec.boxes_min = 1;
    spec.boxes_max = 3;
    AugmentOpts opts;
    opts.mirror = true;
    opts.crop = true;
    opts.crop_width = opts.crop_height = 64;
    opts.color_jitter = true;
    Rng rng(808);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Sample s = synth_scene(seed, spec);
        const Sample a = augment(s, rng, opts);
        CHECK(a.size == 64);
        CHECK(a.pixels.minCoeff() >= 0.0);
        CHECK(a.pixels.maxCoeff() <= 1.0);
        CHECK(a.annotations.size() <= s.annotations.size());
        for (const RotatedRect& r : a.annotations) {
            for (const Vec2& v : r.vertices) {
                CHECK(v.x() >= -1e-9);
                CHECK(v.x() <= 64 + 1e-9);
                CHECK(v.y() >= -1e-9);
                CHECK(v.y() <= 64 + 1e-9);
            }
        }
    }
}

TEST_CASE("axis-aligned annotation parsing") {
    const auto boxes = parse_axis_aligned_annotations("10 20 30 40\n");
    REQUIRE(boxes.size() == 1);
    CHECK(boxes[0].vertices[0].isApprox(Vec2(10, 20), 1e-12));
    CHECK(boxes[0].vertices[2].isApprox(Vec2(40, 60), 1e-12));
    CHECK(boxes[0].theta == doctest::Approx(0.0));

    CHECK(parse_axis_aligned_annotations("").empty());
    CHECK(parse_axis_aligned_annotations("\n  \n").empty());

    const std::string round = write_axis_aligned_annotations(boxes);
    const auto again = parse_axis_aligned_annotations(round);
    REQUIRE(again.size() == 1);
    CHECK(again[0].vertices[2] == boxes[0].vertices[2]);

    CHECK_THROWS_AS(parse_axis_aligned_annotations("1 2 3\n"), ParseError);
    CHECK_THROWS_AS(parse_axis_aligned_annotations("1 2 3 x\n"), ParseError);
    try {
        parse_axis_aligned_annotations("1 2 3 4\nbroken\n");
        CHECK(false);
    } catch (const ParseError& e) {
        CHECK(e.line_number == 2);
    }
}

TEST_CASE("polygon JSON round trip") {
    Rng rng(61);
    std::vector<RotatedRect> boxes;
    for (int i = 0; i < 3; ++i) boxes.push_back(random_inner_rect(rng, 64, 8, 20));
    const std::string text = write_polygon_annotations_json(boxes);
    const auto back = parse_polygon_annotations_json(text);
    REQUIRE(back.size() == boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        CHECK(back[i].theta == doctest::Approx(boxes[i].theta));
        for (int v = 0; v < 4; ++v) {
            CHECK((back[i].vertices[v] - boxes[i].vertices[v]).norm() < 1e-12);
        }
    }
    CHECK_THROWS_AS(parse_polygon_annotations_json("{"), ParseError);
    CHECK_THROWS_AS(parse_polygon_annotations_json("[{\"vertices\": [[0,0]]}]"), ParseError);
}

TEST_SUITE_END();
