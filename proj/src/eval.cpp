#include "rotdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "rotdet/errors.hpp"

namespace rotdet {

void validate(const EvalSpec& spec) {
    if (!(spec.iou_threshold > 0.0 && spec.iou_threshold < 1.0)) {
        throw ConfigError("eval.iou_threshold must be in (0,1)");
    }
    if (spec.levels.empty()) throw ConfigError("eval.levels must not be empty");
    for (const auto& level : spec.levels) {
        if (!(level.min_height > 0.0)) throw ConfigError("eval.levels min_height must be positive");
    }
    if (spec.ar_fppi_points < 1) throw ConfigError("eval.ar_fppi_points must be >= 1");
    if (!(spec.fppi_lo > 0.0 && spec.fppi_lo < spec.fppi_hi)) {
        throw ConfigError("eval fppi range must satisfy 0 < lo < hi");
    }
}

MatchResult match_detections(const std::vector<RotatedRect>& dets,
                             const std::vector<RotatedRect>& gts, double iou_threshold) {
    MatchResult result;
    result.det_is_tp.assign(dets.size(), false);
    result.gt_matched.assign(gts.size(), false);

    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&dets](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

    for (std::size_t di : order) {
        double best = -1.0;
        std::size_t best_gt = gts.size();
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            if (result.gt_matched[gi]) continue;
            const double overlap = iou(dets[di], gts[gi]);
            if (overlap >= iou_threshold && overlap > best) {
                best = overlap;
                best_gt = gi;
            }
        }
        if (best_gt < gts.size()) {
            result.gt_matched[best_gt] = true;
            result.det_is_tp[di] = true;
        }
    }
    return result;
}

LevelSplit filter_level(const std::vector<RotatedRect>& gts, double min_height) {
    LevelSplit split;
    for (const RotatedRect& g : gts) {
        (rect_height(g) >= min_height ? split.valid : split.ignored).push_back(g);
    }
    return split;
}

double average_precision(const std::vector<bool>& tp, long n_gt) {
    if (n_gt == 0) return tp.empty() ? 1.0 : 0.0;
    const std::size_t n = tp.size();
    if (n == 0) return 0.0;
    std::vector<double> precision(n), recall(n);
    long cum_tp = 0, cum_fp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        (tp[k] ? cum_tp : cum_fp) += 1;
        precision[k] = static_cast<double>(cum_tp) / static_cast<double>(cum_tp + cum_fp);
        recall[k] = static_cast<double>(cum_tp) / static_cast<double>(n_gt);
    }
    // monotone precision envelope from the right, then the exact area under
    // the stepwise curve over every recall increment
    for (std::size_t k = n - 1; k-- > 0;) {
        precision[k] = std::max(precision[k], precision[k + 1]);
    }
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        ap += (recall[k] - prev_recall) * precision[k];
        prev_recall = recall[k];
    }
    return ap;
}

double average_recall_fppi(const std::vector<std::pair<double, bool>>& scored_flags, long n_images,
                           long n_gt, const EvalSpec& spec) {
    if (n_images < 1) throw ConfigError("average_recall_fppi: n_images must be >= 1");
    if (n_gt == 0) return 1.0;

    std::vector<std::pair<double, bool>> flags = scored_flags;
    std::stable_sort(flags.begin(), flags.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    // recall/fppi at every distinct-score prefix boundary
    std::vector<std::pair<double, double>> curve;  // (fppi, recall)
    long cum_tp = 0, cum_fp = 0;
    for (std::size_t k = 0; k < flags.size(); ++k) {
        (flags[k].second ? cum_tp : cum_fp) += 1;
        const bool boundary = (k + 1 == flags.size()) || (flags[k + 1].first != flags[k].first);
        if (boundary) {
            curve.emplace_back(static_cast<double>(cum_fp) / static_cast<double>(n_images),
                               static_cast<double>(cum_tp) / static_cast<double>(n_gt));
        }
    }

    const double log_lo = std::log10(spec.fppi_lo);
    const double log_hi = std::log10(spec.fppi_hi);
    const int points = spec.ar_fppi_points;
    double sum = 0.0;
    for (int i = 0; i < points; ++i) {
        const double frac = points == 1 ? 1.0 : static_cast<double>(i) / (points - 1);
        const double target = std::pow(10.0, log_lo + frac * (log_hi - log_lo));
        double best = 0.0;
        for (const auto& [fppi, recall] : curve) {
            if (fppi <= target) best = std::max(best, recall);
        }
        sum += best;
    }
    return sum / points;
}

namespace {

struct ScoredFlag {
    double score;
    bool tp;
    // deterministic merge order for equal scores
    std::string image;
    std::size_t index;
};

}  // namespace

EvalReport evaluate_detections(const std::map<std::string, std::vector<RotatedRect>>& dets,
                               const std::map<std::string, std::vector<RotatedRect>>& gts,
                               const EvalSpec& spec) {
    validate(spec);
    std::set<std::string> ids;
    for (const auto& [id, boxes] : dets) ids.insert(id);
    for (const auto& [id, boxes] : gts) ids.insert(id);
    const long n_images = std::max<long>(1, static_cast<long>(ids.size()));

    static const std::vector<RotatedRect> kEmpty;
    auto boxes_of = [](const std::map<std::string, std::vector<RotatedRect>>& m,
                       const std::string& id) -> const std::vector<RotatedRect>& {
        auto it = m.find(id);
        return it == m.end() ? kEmpty : it->second;
    };

    EvalReport report;
    for (const auto& level : spec.levels) {
        LevelReport lr;
        lr.name = level.name;
        lr.n_images = n_images;
        std::vector<ScoredFlag> flags;

        for (const std::string& id : ids) {
            const auto& image_dets = boxes_of(dets, id);
            const auto split = filter_level(boxes_of(gts, id), level.min_height);
            lr.n_gt += static_cast<long>(split.valid.size());

            const MatchResult matched = match_detections(image_dets, split.valid, spec.iou_threshold);
            for (std::size_t di = 0; di < image_dets.size(); ++di) {
                if (matched.det_is_tp[di]) {
                    flags.push_back({image_dets[di].score, true, id, di});
                    continue;
                }
                // unmatched: drop silently when it covers an ignored ground truth
                bool on_ignored = false;
                for (const RotatedRect& ig : split.ignored) {
                    if (iou(image_dets[di], ig) >= spec.iou_threshold) {
                        on_ignored = true;
                        break;
                    }
                }
                if (!on_ignored) flags.push_back({image_dets[di].score, false, id, di});
            }
        }

        std::sort(flags.begin(), flags.end(), [](const ScoredFlag& a, const ScoredFlag& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.image != b.image) return a.image < b.image;
            return a.index < b.index;
        });

        std::vector<bool> tp;
        std::vector<std::pair<double, bool>> scored;
        tp.reserve(flags.size());
        scored.reserve(flags.size());
        for (const ScoredFlag& f : flags) {
            tp.push_back(f.tp);
            scored.emplace_back(f.score, f.tp);
        }
        lr.n_detections = static_cast<long>(flags.size());
        lr.ap = average_precision(tp, lr.n_gt);
        lr.ar = average_recall_fppi(scored, n_images, lr.n_gt, spec);

        long cum_tp = 0, cum_fp = 0;
        for (std::size_t k = 0; k < flags.size(); ++k) {
            (flags[k].tp ? cum_tp : cum_fp) += 1;
            PrPoint p;
            p.threshold = flags[k].score;
            p.precision = static_cast<double>(cum_tp) / static_cast<double>(cum_tp + cum_fp);
            p.recall = lr.n_gt > 0 ? static_cast<double>(cum_tp) / static_cast<double>(lr.n_gt) : 0.0;
            lr.pr.push_back(p);
        }

        const double log_lo = std::log10(spec.fppi_lo);
        const double log_hi = std::log10(spec.fppi_hi);
        for (int i = 0; i < spec.ar_fppi_points; ++i) {
            const double frac =
                spec.ar_fppi_points == 1 ? 1.0 : static_cast<double>(i) / (spec.ar_fppi_points - 1);
            const double target = std::pow(10.0, log_lo + frac * (log_hi - log_lo));
            FppiPoint fp;
            fp.fppi = target;
            long ct = 0, cf = 0;
            double best = 0.0;
            for (std::size_t k = 0; k < flags.size(); ++k) {
                (flags[k].tp ? ct : cf) += 1;
                const bool boundary = (k + 1 == flags.size()) || (flags[k + 1].score != flags[k].score);
                if (boundary && static_cast<double>(cf) / n_images <= target && lr.n_gt > 0) {
                    best = std::max(best, static_cast<double>(ct) / lr.n_gt);
                }
            }
            fp.recall = lr.n_gt > 0 ? best : 1.0;
            lr.fppi.push_back(fp);
        }

        report.levels.push_back(std::move(lr));
    }
    return report;
}

}  // namespace rotdet
