#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "rotdet/geometry.hpp"
#include "rotdet/rng.hpp"

namespace rotdet {

// One training/eval image with its box annotations.
struct Sample {
    int size = 0;            // square image, size x size
    Eigen::ArrayXd pixels;   // 3*S*S, layout (channel, y, x), values in [0, 1]
    std::vector<RotatedRect> annotations;
    std::string id;
};

// Per-pixel supervision targets at one stride.
struct GroundTruthMaps {
    int width = 0;
    int height = 0;
    int stride = 1;
    Eigen::ArrayXd score;     // H*W, {0,1}
    Eigen::ArrayXd rotation;  // H*W, radians
    Eigen::ArrayXd distance;  // 4*H*W, (top,right,bottom,left), input-image pixels
    Eigen::ArrayXd mask;      // H*W, {0,1}; where rotation/distance losses apply
};

// Rasterizes box annotations into score/rotation/distance maps at the given
// stride. A map pixel is positive when its center (in input coordinates)
// falls inside the annotation shrunk by `fraction` per side; distances are
// measured against the unshrunk box. Pixels covered by several boxes take
// the smallest-area box.
GroundTruthMaps encode_ground_truth(const std::vector<RotatedRect>& annotations, int image_size,
                                    int stride, double shrink);

struct SynthSpec {
    int image_size = 64;
    int boxes_min = 1;
    int boxes_max = 3;
    double size_min = 10.0;
    double size_max = 28.0;
    double angle_min = -1.0;
    double angle_max = 1.0;
    double noise = 0.02;
    double max_overlap_iou = 0.05;  // placement rejection bound
};

// Renders filled rotated rectangles on a textured background with additive
// noise; annotations exactly match the painted geometry. Deterministic per
// seed.
Sample synth_scene(std::uint64_t seed, const SynthSpec& spec);

struct AugmentOpts {
    bool mirror = false;
    bool crop = false;
    int crop_width = 0;
    int crop_height = 0;
    bool color_jitter = false;
};

// Deterministic transforms used by augment(); exposed for direct testing.
Sample mirror_sample(const Sample& s);
Sample crop_sample(const Sample& s, int x0, int y0, int width, int height);

Sample augment(const Sample& sample, Rng& rng, const AugmentOpts& opts);

// Text annotations, one "x y w h" line per axis-aligned box (theta = 0).
std::vector<RotatedRect> parse_axis_aligned_annotations(const std::string& text);
std::string write_axis_aligned_annotations(const std::vector<RotatedRect>& boxes);

// JSON annotations: a list of {"vertices": [[x,y] x4], "theta": optional}.
std::vector<RotatedRect> parse_polygon_annotations_json(const std::string& text);
std::string write_polygon_annotations_json(const std::vector<RotatedRect>& boxes);

inline long pixel_index(int image_size, int c, int y, int x) {
    return (static_cast<long>(c) * image_size + y) * image_size + x;
}

}  // namespace rotdet
