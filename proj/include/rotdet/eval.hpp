#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rotdet/geometry.hpp"

namespace rotdet {

struct EvalLevel {
    std::string name;
    double min_height = 0.0;  // ground-truth boxes below this are ignored
};

struct EvalSpec {
    double iou_threshold = 0.5;
    std::vector<EvalLevel> levels{{"level1", 70.0}, {"level2", 25.0}};
    int ar_fppi_points = 9;
    double fppi_lo = 1e-2;
    double fppi_hi = 1.0;
};

void validate(const EvalSpec& spec);

// Greedy one-to-one matching by descending score; a detection hits when its
// rotated IoU with an unmatched ground truth is >= the threshold (best IoU
// wins, ties to the lower index).
struct MatchResult {
    std::vector<bool> det_is_tp;   // aligned with the input detections
    std::vector<bool> gt_matched;  // aligned with the input ground truths
};
MatchResult match_detections(const std::vector<RotatedRect>& dets,
                             const std::vector<RotatedRect>& gts, double iou_threshold);

// Splits ground truths by the level's minimum height.
struct LevelSplit {
    std::vector<RotatedRect> valid;
    std::vector<RotatedRect> ignored;
};
LevelSplit filter_level(const std::vector<RotatedRect>& gts, double min_height);

// All-points interpolated area under the precision/recall curve; `tp` holds
// per-detection hit flags in descending-score order.
double average_precision(const std::vector<bool>& tp, long n_gt);

// Recall averaged over log-spaced false-positives-per-image operating points.
// `scored_flags` holds (score, is_tp) for every counted detection.
double average_recall_fppi(const std::vector<std::pair<double, bool>>& scored_flags, long n_images,
                           long n_gt, const EvalSpec& spec);

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
    double threshold = 0.0;
};

struct FppiPoint {
    double fppi = 0.0;
    double recall = 0.0;
};

struct LevelReport {
    std::string name;
    double ap = 0.0;
    double ar = 0.0;
    long n_gt = 0;
    long n_images = 0;
    long n_detections = 0;  // after ignore filtering
    std::vector<PrPoint> pr;      // sorted by descending threshold
    std::vector<FppiPoint> fppi;  // one entry per operating point
};

struct EvalReport {
    std::vector<LevelReport> levels;
};

// Full evaluation over per-image detection and annotation sets. Detections
// overlapping only ignored ground truths are dropped from FP counting.
EvalReport evaluate_detections(const std::map<std::string, std::vector<RotatedRect>>& dets,
                               const std::map<std::string, std::vector<RotatedRect>>& gts,
                               const EvalSpec& spec);

}  // namespace rotdet
