#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rotdet/loss.hpp"
#include "testutil.hpp"

using namespace rotdet;
using test::gradcheck;
using test::random_tensor;

namespace {

Tensor<double> random_binary(Rng& rng, std::vector<int> shape, double p_one) {
    ArrayX<double> data(shape_numel(shape));
    for (long i = 0; i < data.size(); ++i) data[i] = rng.uniform() < p_one ? 1.0 : 0.0;
    return Tensor<double>::from_array(std::move(shape), std::move(data));
}

}  // namespace

TEST_SUITE_BEGIN("loss");

TEST_CASE("dice anchors") {
    Rng rng(3);
    auto gt = random_binary(rng, {1, 1, 4, 4}, 0.4);
    while (gt.value().sum() == 0.0) gt = random_binary(rng, {1, 1, 4, 4}, 0.4);

    SUBCASE("perfect match costs zero") {
        CHECK(dice_score_loss(gt, gt).item() == doctest::Approx(0.0).epsilon(1e-9));
    }

    SUBCASE("disjoint support costs one") {
        ArrayX<double> p(16), g(16);
        for (int i = 0; i < 16; ++i) {
            g[i] = i < 8 ? 1.0 : 0.0;
            p[i] = i < 8 ? 0.0 : 0.7;
        }
        auto loss = dice_score_loss(Tensor<double>::from_array({1, 1, 4, 4}, std::move(p)),
                                    Tensor<double>::from_array({1, 1, 4, 4}, std::move(g)));
        CHECK(std::abs(loss.item() - 1.0) < 1e-6);
    }

    SUBCASE("half-confidence everywhere against all-ones") {
        const int N = 64;
        auto pred = Tensor<double>::constant({1, 1, 8, 8}, 0.5);
        auto ones = Tensor<double>::constant({1, 1, 8, 8}, 1.0);
        // 1 - (2*0.5N)/(0.25N + N) = 0.2
        CHECK(dice_score_loss(pred, ones).item() == doctest::Approx(0.2).epsilon(1e-9));
        (void)N;
    }

    SUBCASE("all-zero prediction and target match exactly") {
        auto z = Tensor<double>::zeros({1, 1, 4, 4});
        CHECK(dice_score_loss(z, z).item() == doctest::Approx(0.0));
    }
}

TEST_CASE("rotation loss anchors") {
    auto mask = Tensor<double>::constant({1, 1, 2, 2}, 1.0);
    auto theta = Tensor<double>::constant({1, 1, 2, 2}, 0.3);
    CHECK(rotation_loss(theta, theta, mask).item() == doctest::Approx(0.0));

    auto shifted = Tensor<double>::constant({1, 1, 2, 2}, 0.3 + std::numbers::pi / 2);
    CHECK(std::abs(rotation_loss(shifted, theta, mask).item() - 1.0) < 1e-9);

    SUBCASE("masked mean equals direct summation") {
        Rng rng(11);
        auto pred = random_tensor(rng, {1, 1, 4, 4}, -1.2, 1.2, false);
        auto gt = random_tensor(rng, {1, 1, 4, 4}, -1.2, 1.2, false);
        auto m = random_binary(rng, {1, 1, 4, 4}, 0.5);
        while (m.value().sum() == 0.0) m = random_binary(rng, {1, 1, 4, 4}, 0.5);
        double expect = 0.0;
        for (long i = 0; i < 16; ++i) {
            expect += m.value()[i] * (1.0 - std::cos(pred.value()[i] - gt.value()[i]));
        }
        expect /= m.value().sum();
        CHECK(rotation_loss(pred, gt, m).item() == doctest::Approx(expect).epsilon(1e-12));
    }

    SUBCASE("empty mask yields zero") {
        auto zero_mask = Tensor<double>::zeros({1, 1, 2, 2});
        CHECK(rotation_loss(theta, shifted, zero_mask).item() == doctest::Approx(0.0));
    }
}

TEST_CASE("distance IoU loss anchors") {
    auto mask = Tensor<double>::constant({1, 1, 1, 1}, 1.0);

    SUBCASE("perfect distances cost (almost) nothing") {
        ArrayX<double> d(4);
        d << 2, 3, 4, 5;
        auto t = Tensor<double>::from_array({1, 4, 1, 1}, d);
        CHECK(std::abs(iou_distance_loss(t, t, mask).item()) < 1e-6);
    }

    SUBCASE("hand-computed min-overlap example equals ln 2") {
        ArrayX<double> p(4), g(4);
        p << 1, 1, 1, 1;   // (top,right,bottom,left)
        g << 1, 1, 3, 1;
        auto loss = iou_distance_loss(Tensor<double>::from_array({1, 4, 1, 1}, std::move(p)),
                                      Tensor<double>::from_array({1, 4, 1, 1}, std::move(g)), mask);
        CHECK(std::abs(loss.item() - std::log(2.0)) < 1e-9);
    }

    SUBCASE("empty mask yields zero") {
        auto t = Tensor<double>::constant({1, 4, 2, 2}, 1.0);
        auto zero_mask = Tensor<double>::zeros({1, 1, 2, 2});
        CHECK(iou_distance_loss(t, t, zero_mask).item() == doctest::Approx(0.0));
    }
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(17);

    SUBCASE("dice") {
        auto pred = random_tensor(rng, {1, 1, 4, 4}, 0.1, 0.9);
        auto gt = random_binary(rng, {1, 1, 4, 4}, 0.4);
        auto check = gradcheck({pred}, [&] { return dice_score_loss(pred, gt); });
        CHECK_MESSAGE(check.ok, check.detail);
    }

    SUBCASE("rotation") {
        auto pred = random_tensor(rng, {1, 1, 4, 4}, -1.0, 1.0);
        auto gt = random_tensor(rng, {1, 1, 4, 4}, -1.0, 1.0, false);
        auto m = random_binary(rng, {1, 1, 4, 4}, 0.6);
        auto check = gradcheck({pred}, [&] { return rotation_loss(pred, gt, m); });
        CHECK_MESSAGE(check.ok, check.detail);
    }

    SUBCASE("distance IoU") {
        auto pred = random_tensor(rng, {1, 4, 3, 3}, 0.5, 2.0);
        auto gt = random_tensor(rng, {1, 4, 3, 3}, 0.5, 2.0, false);
        auto m = random_binary(rng, {1, 1, 3, 3}, 0.7);
        auto check = gradcheck({pred}, [&] { return iou_distance_loss(pred, gt, m); });
        CHECK_MESSAGE(check.ok, check.detail);
    }
}

namespace {

struct ScaleFixture {
    DetectionMaps<double> pred;
    ScaleTargets<double> gt;
};

ScaleFixture make_scale(Rng& rng, int hw, int stride) {
    ScaleFixture f;
    const std::vector<int> one{1, 1, hw, hw};
    f.pred.score = test::random_tensor(rng, one, 0.05, 0.95, false);
    f.pred.rotation = test::random_tensor(rng, one, -1.0, 1.0, false);
    f.pred.distance = test::random_tensor(rng, {1, 4, hw, hw}, 0.5, 3.0, false);
    f.pred.stride = stride;
    f.gt.score = random_binary(rng, one, 0.5);
    f.gt.rotation = test::random_tensor(rng, one, -1.0, 1.0, false);
    f.gt.distance = test::random_tensor(rng, {1, 4, hw, hw}, 0.5, 3.0, false);
    f.gt.mask = f.gt.score;
    f.gt.stride = stride;
    return f;
}

}  // namespace

TEST_CASE("multiscale loss composition") {
    Rng rng(23);

    SUBCASE("single-scale total follows the alpha/beta weighting") {
        auto f = make_scale(rng, 4, 4);
        LossWeights w;
        w.alpha = 0.01;
        w.beta = 20.0;
        w.scales = {4};
        std::map<int, DetectionMaps<double>> preds{{4, f.pred}};
        std::map<int, ScaleTargets<double>> gts{{4, f.gt}};
        auto breakdown = multiscale_loss(preds, gts, w);
        const auto& [sco, rot, dis] = breakdown.per_scale.at(4);
        const double expect = 0.01 * sco + 20.0 * rot + dis;
        CHECK(breakdown.total_value == doctest::Approx(expect).epsilon(1e-15));
    }

    SUBCASE("perfect predictions cost zero") {
        auto f = make_scale(rng, 4, 4);
        DetectionMaps<double> perfect;
        perfect.score = f.gt.score;
        perfect.rotation = f.gt.rotation;
        perfect.distance = f.gt.distance;
        perfect.stride = 4;
        LossWeights w;
        w.scales = {4};
        std::map<int, DetectionMaps<double>> preds{{4, perfect}};
        std::map<int, ScaleTargets<double>> gts{{4, f.gt}};
        CHECK(std::abs(multiscale_loss(preds, gts, w).total_value) < 1e-9);
    }

    SUBCASE("two scales combine with their weights, exactly") {
        auto f2 = make_scale(rng, 8, 8);
        auto f4 = make_scale(rng, 16, 4);
        LossWeights w;
        w.alpha = 0.5;
        w.beta = 2.0;
        w.scales = {2, 4};
        w.scale_weights = {{2, 0.25}, {4, 1.5}};
        std::map<int, DetectionMaps<double>> preds{{2, f2.pred}, {4, f4.pred}};
        std::map<int, ScaleTargets<double>> gts{{2, f2.gt}, {4, f4.gt}};
        auto breakdown = multiscale_loss(preds, gts, w);
        double expect = 0.0;
        for (int s : w.scales) {
            const auto& [sco, rot, dis] = breakdown.per_scale.at(s);
            expect += w.weight_for(s) * (w.alpha * sco + w.beta * rot + dis);
        }
        CHECK(breakdown.total_value == doctest::Approx(expect).epsilon(1e-15));
    }

    SUBCASE("missing scale is a configuration error") {
        auto f = make_scale(rng, 4, 4);
        LossWeights w;
        w.scales = {3, 4};
        std::map<int, DetectionMaps<double>> preds{{4, f.pred}};
        std::map<int, ScaleTargets<double>> gts{{4, f.gt}};
        CHECK_THROWS_AS(multiscale_loss(preds, gts, w), ConfigError);
    }

    SUBCASE("total is linear in alpha, beta and the scale weights") {
        auto f = make_scale(rng, 4, 4);
        std::map<int, DetectionMaps<double>> preds{{4, f.pred}};
        std::map<int, ScaleTargets<double>> gts{{4, f.gt}};
        LossWeights w;
        w.scales = {4};
        w.alpha = 0.3;
        w.beta = 5.0;
        w.scale_weights[4] = 2.0;
        auto base = multiscale_loss(preds, gts, w);
        LossWeights dbl = w;
        dbl.alpha *= 2;
        auto bumped = multiscale_loss(preds, gts, dbl);
        const auto& [sco, rot, dis] = base.per_scale.at(4);
        CHECK(bumped.total_value - base.total_value ==
              doctest::Approx(2.0 * 0.3 * sco).epsilon(1e-12));
        LossWeights half = w;
        half.scale_weights[4] = 1.0;
        auto halved = multiscale_loss(preds, gts, half);
        CHECK(base.total_value == doctest::Approx(2.0 * halved.total_value).epsilon(1e-12));
    }
}

TEST_SUITE_END();
