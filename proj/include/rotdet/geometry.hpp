#pragma once

#include <Eigen/Core>

#include <array>
#include <vector>

namespace rotdet {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

// A rotated rectangle in image coordinates (x right, y down).
// Vertex order: p0 top-left, then clockwise (p1 top-right, p2 bottom-right,
// p3 bottom-left); theta is the box rotation in radians, counter-clockwise
// positive, in (-pi/2, pi/2).
struct RotatedRect {
    std::array<Vec2, 4> vertices;
    double theta = 0.0;
    double score = 0.0;
};

// Per-pixel box geometry: a reference point, its perpendicular distances to
// the four box edges (top, right, bottom, left) and the box rotation.
struct PixelGeometry {
    Vec2 point = Vec2::Zero();
    double top = 0.0;
    double right = 0.0;
    double bottom = 0.0;
    double left = 0.0;
    double theta = 0.0;
};

// [[cos t, -sin t], [sin t, cos t]], counter-clockwise positive.
Mat2 rotation_matrix(double theta);

// Rebuilds the rectangle around a point from its edge distances and rotation.
// Throws NumericError when the distances describe a zero-area box.
RotatedRect restore_rect(const PixelGeometry& g);

RotatedRect rect_from_center(const Vec2& center, double width, double height, double theta,
                             double score = 0.0);

// Axis-aligned box given by its top-left corner and extents; theta = 0.
RotatedRect rect_from_xywh(double x, double y, double w, double h);

Vec2 rect_center(const RotatedRect& r);
double rect_width(const RotatedRect& r);   // |p1 - p0|
double rect_height(const RotatedRect& r);  // length of the near-vertical side
double rect_area(const RotatedRect& r);
double theta_from_vertices(const RotatedRect& r);
bool rect_is_valid(const RotatedRect& r, double tol = 1e-6);

// Signed perpendicular distances from p to the four edge lines, in channel
// order (top, right, bottom, left); all non-negative iff p is inside.
std::array<double, 4> edge_distances(const RotatedRect& r, const Vec2& p);
bool rect_contains(const RotatedRect& r, const Vec2& p);

// Same center and rotation, each side moved inwards by `fraction` of the
// corresponding extent (width shrinks by 2*fraction*width, ditto height).
RotatedRect shrink_rect(const RotatedRect& r, double fraction);

double polygon_area(const std::vector<Vec2>& poly);

// Area of the convex intersection of two rectangles (Sutherland-Hodgman).
double polygon_intersection_area(const RotatedRect& a, const RotatedRect& b);

// Intersection over union in [0, 1]; returns 0 when both areas are zero.
double iou(const RotatedRect& a, const RotatedRect& b);

// Greedy non-maximum suppression: boxes sorted by descending score (stable),
// a box is kept iff its IoU with every already-kept box is <= threshold.
std::vector<RotatedRect> nms(const std::vector<RotatedRect>& boxes, double iou_threshold);

}  // namespace rotdet
