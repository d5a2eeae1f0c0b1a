#pragma once

#include <algorithm>
#include <vector>

#include "rotdet/geometry.hpp"
#include "rotdet/net.hpp"

namespace rotdet {

struct DecodeSpec {
    double score_threshold = 0.8;
    double nms_iou = 0.2;
    int max_candidates = 2000;
};

inline void validate(const DecodeSpec& spec) {
    if (!(spec.score_threshold > 0.0 && spec.score_threshold < 1.0)) {
        throw ConfigError("decode.score_threshold must be in (0,1)");
    }
    if (!(spec.nms_iou > 0.0 && spec.nms_iou < 1.0)) {
        throw ConfigError("decode.nms_iou must be in (0,1)");
    }
    if (spec.max_candidates < 1) throw ConfigError("decode.max_candidates must be >= 1");
}

// Thresholds the score map, restores one rectangle per qualifying pixel from
// the rotation/distance channels (pixel centers scaled by the map stride) and
// applies greedy NMS. Single-image maps (batch of one).
template <class S>
std::vector<RotatedRect> decode_detections(const DetectionMaps<S>& maps, const DecodeSpec& spec) {
    validate(spec);
    detail::require_cfg(maps.score.dim(0) == 1, "decode_detections expects a single-image batch");
    const int h = maps.score.dim(2), w = maps.score.dim(3);
    const long plane = static_cast<long>(h) * w;
    const auto& score = maps.score.value();
    const auto& rot = maps.rotation.value();
    const auto& dist = maps.distance.value();

    struct Candidate {
        double score;
        long pixel;
    };
    std::vector<Candidate> cands;
    for (long px = 0; px < plane; ++px) {
        const double s = static_cast<double>(score[px]);
        if (s > spec.score_threshold) cands.push_back({s, px});
    }
    if (static_cast<long>(cands.size()) > spec.max_candidates) {
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
        cands.resize(static_cast<std::size_t>(spec.max_candidates));
    }

    std::vector<RotatedRect> boxes;
    boxes.reserve(cands.size());
    for (const Candidate& c : cands) {
        const int i = static_cast<int>(c.pixel / w);
        const int j = static_cast<int>(c.pixel % w);
        PixelGeometry g;
        g.point = {(j + 0.5) * maps.stride, (i + 0.5) * maps.stride};
        g.top = static_cast<double>(dist[0 * plane + c.pixel]);
        g.right = static_cast<double>(dist[1 * plane + c.pixel]);
        g.bottom = static_cast<double>(dist[2 * plane + c.pixel]);
        g.left = static_cast<double>(dist[3 * plane + c.pixel]);
        g.theta = static_cast<double>(rot[c.pixel]);
        if (!(g.top + g.bottom > 0.0) || !(g.left + g.right > 0.0)) continue;
        RotatedRect r = restore_rect(g);
        r.score = c.score;
        boxes.push_back(r);
    }
    return nms(boxes, spec.nms_iou);
}

template <class S>
std::vector<std::vector<RotatedRect>> decode_batch(const std::vector<DetectionMaps<S>>& per_image,
                                                   const DecodeSpec& spec) {
    std::vector<std::vector<RotatedRect>> out;
    out.reserve(per_image.size());
    for (const auto& maps : per_image) out.push_back(decode_detections(maps, spec));
    return out;
}

}  // namespace rotdet
