#include "rotdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rotdet/errors.hpp"

namespace rotdet {

Mat2 rotation_matrix(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    Mat2 m;
    m << c, -s, s, c;
    return m;
}

RotatedRect restore_rect(const PixelGeometry& g) {
    const double height = g.top + g.bottom;
    const double width = g.left + g.right;
    if (!(height > 0.0) || !(width > 0.0)) {
        throw NumericError("restore_rect: degenerate zero-area geometry");
    }
    // The auxiliary frame has its origin at p3 and axes parallel to the image
    // axes. Rotating the box to the horizontal around p3 places the corners at
    // (0,-height), (width,-height), (width,0) and the reference point at
    // (left,-bottom); the actual auxiliary coordinates undo that rotation.
    const Mat2 mt = rotation_matrix(g.theta).transpose();
    const Vec2 p_aux = mt * Vec2(g.left, -g.bottom);
    const Vec2 p3 = g.point - p_aux;
    RotatedRect r;
    r.vertices[0] = mt * Vec2(0.0, -height) + p3;
    r.vertices[1] = mt * Vec2(width, -height) + p3;
    r.vertices[2] = mt * Vec2(width, 0.0) + p3;
    r.vertices[3] = p3;
    r.theta = g.theta;
    return r;
}

RotatedRect rect_from_center(const Vec2& center, double width, double height, double theta,
                             double score) {
    PixelGeometry g;
    g.point = center;
    g.top = height / 2.0;
    g.bottom = height / 2.0;
    g.left = width / 2.0;
    g.right = width / 2.0;
    g.theta = theta;
    RotatedRect r = restore_rect(g);
    r.score = score;
    return r;
}

RotatedRect rect_from_xywh(double x, double y, double w, double h) {
    RotatedRect r;
    r.vertices[0] = {x, y};
    r.vertices[1] = {x + w, y};
    r.vertices[2] = {x + w, y + h};
    r.vertices[3] = {x, y + h};
    r.theta = 0.0;
    return r;
}

Vec2 rect_center(const RotatedRect& r) {
    return (r.vertices[0] + r.vertices[1] + r.vertices[2] + r.vertices[3]) / 4.0;
}

double rect_width(const RotatedRect& r) { return (r.vertices[1] - r.vertices[0]).norm(); }

double rect_height(const RotatedRect& r) {
    const Vec2 w_side = r.vertices[1] - r.vertices[0];
    const Vec2 h_side = r.vertices[3] - r.vertices[0];
    const double w_len = w_side.norm(), h_len = h_side.norm();
    if (w_len == 0.0 || h_len == 0.0) return h_len;
    // pick the side whose direction is closer to vertical
    return (std::abs(h_side.y()) / h_len >= std::abs(w_side.y()) / w_len) ? h_len : w_len;
}

double rect_area(const RotatedRect& r) {
    return rect_width(r) * (r.vertices[3] - r.vertices[0]).norm();
}

double theta_from_vertices(const RotatedRect& r) {
    const Vec2 bottom = r.vertices[2] - r.vertices[3];
    return std::atan2(-bottom.y(), bottom.x());
}

bool rect_is_valid(const RotatedRect& r, double tol) {
    const double top = (r.vertices[1] - r.vertices[0]).norm();
    const double bottom = (r.vertices[2] - r.vertices[3]).norm();
    const double left = (r.vertices[3] - r.vertices[0]).norm();
    const double right = (r.vertices[2] - r.vertices[1]).norm();
    if (top <= tol || left <= tol) return false;
    if (std::abs(top - bottom) > tol || std::abs(left - right) > tol) return false;
    const Vec2 u = (r.vertices[1] - r.vertices[0]).normalized();
    const Vec2 v = (r.vertices[3] - r.vertices[0]).normalized();
    if (std::abs(u.dot(v)) > tol) return false;
    double dt = theta_from_vertices(r) - r.theta;
    return std::abs(dt) <= tol;
}

static double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

std::array<double, 4> edge_distances(const RotatedRect& r, const Vec2& p) {
    // Edge order (p0p1, p1p2, p2p3, p3p0) = (top, right, bottom, left); with
    // the canonical winding the interior lies at positive cross products.
    std::array<double, 4> d;
    for (int i = 0; i < 4; ++i) {
        const Vec2& a = r.vertices[static_cast<std::size_t>(i)];
        const Vec2& b = r.vertices[static_cast<std::size_t>((i + 1) % 4)];
        const Vec2 e = b - a;
        d[static_cast<std::size_t>(i)] = cross2(e, p - a) / e.norm();
    }
    return d;
}

bool rect_contains(const RotatedRect& r, const Vec2& p) {
    const auto d = edge_distances(r, p);
    return d[0] >= 0.0 && d[1] >= 0.0 && d[2] >= 0.0 && d[3] >= 0.0;
}

RotatedRect shrink_rect(const RotatedRect& r, double fraction) {
    const double w = rect_width(r);
    const double h = (r.vertices[3] - r.vertices[0]).norm();
    RotatedRect s = rect_from_center(rect_center(r), w * (1.0 - 2.0 * fraction),
                                     h * (1.0 - 2.0 * fraction), r.theta, r.score);
    return s;
}

double polygon_area(const std::vector<Vec2>& poly) {
    if (poly.size() < 3) return 0.0;
    double twice = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % poly.size()];
        twice += cross2(a, b);
    }
    return std::abs(twice) / 2.0;
}

static double signed_area2(const std::vector<Vec2>& poly) {
    double twice = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        twice += cross2(poly[i], poly[(i + 1) % poly.size()]);
    }
    return twice;
}

// Clips `subject` against one directed edge (a -> b); keeps the half-plane on
// the positive-cross side.
static std::vector<Vec2> clip_edge(const std::vector<Vec2>& subject, const Vec2& a, const Vec2& b) {
    std::vector<Vec2> out;
    out.reserve(subject.size() + 1);
    const Vec2 e = b - a;
    for (std::size_t i = 0; i < subject.size(); ++i) {
        const Vec2& cur = subject[i];
        const Vec2& nxt = subject[(i + 1) % subject.size()];
        const double dc = cross2(e, cur - a);
        const double dn = cross2(e, nxt - a);
        if (dc >= 0.0) out.push_back(cur);
        if ((dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0)) {
            const double t = dc / (dc - dn);
            out.push_back(cur + t * (nxt - cur));
        }
    }
    return out;
}

double polygon_intersection_area(const RotatedRect& a, const RotatedRect& b) {
    std::vector<Vec2> subject(a.vertices.begin(), a.vertices.end());
    std::vector<Vec2> clip(b.vertices.begin(), b.vertices.end());
    if (signed_area2(subject) < 0.0) std::reverse(subject.begin(), subject.end());
    if (signed_area2(clip) < 0.0) std::reverse(clip.begin(), clip.end());
    for (std::size_t i = 0; i < clip.size() && !subject.empty(); ++i) {
        subject = clip_edge(subject, clip[i], clip[(i + 1) % clip.size()]);
    }
    return polygon_area(subject);
}

double iou(const RotatedRect& a, const RotatedRect& b) {
    const double area_a = rect_area(a);
    const double area_b = rect_area(b);
    if (area_a <= 0.0 && area_b <= 0.0) return 0.0;
    const double inter = polygon_intersection_area(a, b);
    const double uni = area_a + area_b - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<RotatedRect> nms(const std::vector<RotatedRect>& boxes, double iou_threshold) {
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&boxes](std::size_t i, std::size_t j) { return boxes[i].score > boxes[j].score; });
    std::vector<RotatedRect> kept;
    for (std::size_t idx : order) {
        bool suppressed = false;
        for (const RotatedRect& k : kept) {
            if (iou(boxes[idx], k) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(boxes[idx]);
    }
    return kept;
}

}  // namespace rotdet
