#pragma once

#include <array>
#include <map>
#include <vector>

#include "rotdet/maps.hpp"
#include "rotdet/net.hpp"
#include "rotdet/ops.hpp"

namespace rotdet {

// Weights of the multi-scale objective: total = sum_s w_s * (alpha * score +
// beta * rotation + distance).
struct LossWeights {
    double alpha = 0.01;
    double beta = 20.0;
    std::map<int, double> scale_weights;  // defaults to 1 per scale
    std::vector<int> scales{1, 2, 3, 4};

    double weight_for(int scale) const {
        auto it = scale_weights.find(scale);
        return it == scale_weights.end() ? 1.0 : it->second;
    }
};

inline void validate(const LossWeights& w) {
    if (w.alpha < 0.0 || w.beta < 0.0) throw ConfigError("loss.alpha and loss.beta must be >= 0");
    if (w.scales.empty()) throw ConfigError("loss.scales must not be empty");
    for (const auto& [s, ws] : w.scale_weights) {
        if (ws < 0.0) throw ConfigError("loss.scale_weights must be >= 0");
    }
}

// Supervision targets for one scale, batched.
template <class S>
struct ScaleTargets {
    Tensor<S> score;     // B x 1 x H x W
    Tensor<S> rotation;  // B x 1 x H x W
    Tensor<S> distance;  // B x 4 x H x W
    Tensor<S> mask;      // B x 1 x H x W
    int stride = 1;
};

// Stacks per-sample ground-truth maps into constant tensors.
template <class S>
ScaleTargets<S> to_targets(const std::vector<GroundTruthMaps>& batch) {
    if (batch.empty()) throw ConfigError("to_targets: empty batch");
    const int B = static_cast<int>(batch.size());
    const int H = batch[0].height, W = batch[0].width;
    const long plane = static_cast<long>(H) * W;
    ArrayX<S> score(B * plane), rotation(B * plane), mask(B * plane), distance(B * 4 * plane);
    for (int n = 0; n < B; ++n) {
        const GroundTruthMaps& g = batch[static_cast<std::size_t>(n)];
        if (g.height != H || g.width != W) throw ConfigError("to_targets: inconsistent map sizes");
        score.segment(n * plane, plane) = g.score.cast<S>();
        rotation.segment(n * plane, plane) = g.rotation.cast<S>();
        mask.segment(n * plane, plane) = g.mask.cast<S>();
        distance.segment(static_cast<long>(n) * 4 * plane, 4 * plane) = g.distance.cast<S>();
    }
    ScaleTargets<S> t;
    t.score = Tensor<S>::from_array({B, 1, H, W}, std::move(score));
    t.rotation = Tensor<S>::from_array({B, 1, H, W}, std::move(rotation));
    t.distance = Tensor<S>::from_array({B, 4, H, W}, std::move(distance));
    t.mask = Tensor<S>::from_array({B, 1, H, W}, std::move(mask));
    t.stride = batch[0].stride;
    return t;
}

// Dice loss over all pixels: 1 - (2*sum(p*g) + eps) / (sum(p^2) + sum(g^2) + eps).
// The epsilon appears in both numerator and denominator so an exact all-zero
// match costs zero.
template <class S>
Tensor<S> dice_score_loss(const Tensor<S>& pred, const Tensor<S>& gt) {
    detail::require_same_shape(pred, gt, "dice_score_loss");
    const S eps = static_cast<S>(1e-8);
    auto num = scalar_affine(reduce_sum(mul(pred, gt)), S(2), eps);
    auto den = scalar_affine(add(reduce_sum(mul(pred, pred)), reduce_sum(mul(gt, gt))), S(1), eps);
    return scalar_affine(div(num, den), S(-1), S(1));
}

// Mean of 1 - cos(pred - gt) over masked pixels; zero when the mask is empty.
template <class S>
Tensor<S> rotation_loss(const Tensor<S>& pred_theta, const Tensor<S>& gt_theta,
                        const Tensor<S>& mask) {
    detail::require_same_shape(pred_theta, gt_theta, "rotation_loss");
    detail::require_same_shape(pred_theta, mask, "rotation_loss mask");
    const S count = mask.value().sum();
    if (!(count > S(0))) return Tensor<S>::scalar(S(0));
    auto term = scalar_affine(cwise_cos(sub(pred_theta, gt_theta)), S(-1), S(1));
    return scalar_affine(reduce_sum(mul(term, mask)), S(1) / count, S(0));
}

// Per-pixel -log((I+eps)/(U+eps)) between the axis-aligned boxes described by
// the four edge distances, averaged over masked pixels.
template <class S>
Tensor<S> iou_distance_loss(const Tensor<S>& pred_dist, const Tensor<S>& gt_dist,
                            const Tensor<S>& mask) {
    detail::require_same_shape(pred_dist, gt_dist, "iou_distance_loss");
    detail::require_rank(pred_dist, 4, "iou_distance_loss");
    detail::require_cfg(pred_dist.dim(1) == 4, "iou_distance_loss: expected 4 distance channels");
    detail::require_cfg(mask.rank() == 4 && mask.dim(1) == 1, "iou_distance_loss: mask must be 1-channel");
    const S count = mask.value().sum();
    if (!(count > S(0))) return Tensor<S>::scalar(S(0));

    auto pt = slice_channels(pred_dist, 0, 1), pr = slice_channels(pred_dist, 1, 1),
         pb = slice_channels(pred_dist, 2, 1), pl = slice_channels(pred_dist, 3, 1);
    auto gt = slice_channels(gt_dist, 0, 1), gr = slice_channels(gt_dist, 1, 1),
         gb = slice_channels(gt_dist, 2, 1), gl = slice_channels(gt_dist, 3, 1);

    auto ih = add(cwise_min(pt, gt), cwise_min(pb, gb));
    auto iw = add(cwise_min(pl, gl), cwise_min(pr, gr));
    auto inter = mul(iw, ih);
    auto area_p = mul(add(pt, pb), add(pl, pr));
    auto area_g = mul(add(gt, gb), add(gl, gr));
    auto uni = sub(add(area_p, area_g), inter);

    // small enough not to perturb box-scale ratios, large enough to keep the
    // log finite for zero-area boxes
    const S eps = static_cast<S>(1e-12);
    auto per_pixel = sub(cwise_log(scalar_affine(uni, S(1), eps)),
                         cwise_log(scalar_affine(inter, S(1), eps)));
    return scalar_affine(reduce_sum(mul(per_pixel, mask)), S(1) / count, S(0));
}

template <class S>
struct LossBreakdown {
    Tensor<S> total;
    double total_value = 0.0;
    std::map<int, std::array<double, 3>> per_scale;  // (score, rotation, distance)
};

// Eq-style multi-scale aggregate over the configured scale set.
template <class S>
LossBreakdown<S> multiscale_loss(const std::map<int, DetectionMaps<S>>& preds,
                                 const std::map<int, ScaleTargets<S>>& gts,
                                 const LossWeights& weights) {
    validate(weights);
    LossBreakdown<S> out;
    Tensor<S> total;
    for (int s : weights.scales) {
        auto pit = preds.find(s);
        auto git = gts.find(s);
        if (pit == preds.end() || git == gts.end()) {
            throw ConfigError("multiscale_loss: scale " + std::to_string(s) +
                              " missing from predictions or targets");
        }
        const DetectionMaps<S>& p = pit->second;
        const ScaleTargets<S>& g = git->second;
        auto sco = dice_score_loss(p.score, g.score);
        auto rot = rotation_loss(p.rotation, g.rotation, g.mask);
        auto dis = iou_distance_loss(p.distance, g.distance, g.mask);
        auto term = add(add(scalar_affine(sco, static_cast<S>(weights.alpha), S(0)),
                            scalar_affine(rot, static_cast<S>(weights.beta), S(0))),
                        dis);
        auto scaled = scalar_affine(term, static_cast<S>(weights.weight_for(s)), S(0));
        total = total.defined() ? add(total, scaled) : scaled;
        out.per_scale[s] = {static_cast<double>(sco.item()), static_cast<double>(rot.item()),
                            static_cast<double>(dis.item())};
    }
    out.total = total;
    out.total_value = static_cast<double>(total.item());
    return out;
}

}  // namespace rotdet
