#include "rotdet/maps.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rotdet/errors.hpp"

namespace rotdet {

namespace {

// Axis-aligned pixel-index bounds of a rectangle at the given stride.
struct PixelBounds {
    int x0, x1, y0, y1;  // inclusive map-pixel ranges
};

PixelBounds map_bounds(const RotatedRect& r, int stride, int map_w, int map_h) {
    double min_x = r.vertices[0].x(), max_x = min_x;
    double min_y = r.vertices[0].y(), max_y = min_y;
    for (const Vec2& v : r.vertices) {
        min_x = std::min(min_x, v.x());
        max_x = std::max(max_x, v.x());
        min_y = std::min(min_y, v.y());
        max_y = std::max(max_y, v.y());
    }
    PixelBounds b;
    b.x0 = std::max(0, static_cast<int>(std::floor(min_x / stride - 0.5)));
    b.x1 = std::min(map_w - 1, static_cast<int>(std::ceil(max_x / stride)));
    b.y0 = std::max(0, static_cast<int>(std::floor(min_y / stride - 0.5)));
    b.y1 = std::min(map_h - 1, static_cast<int>(std::ceil(max_y / stride)));
    return b;
}

}  // namespace

GroundTruthMaps encode_ground_truth(const std::vector<RotatedRect>& annotations, int image_size,
                                    int stride, double shrink) {
    if (stride < 1 || image_size % stride != 0) {
        throw ConfigError("encode_ground_truth: image size not divisible by stride");
    }
    if (!(shrink >= 0.0 && shrink < 0.5)) {
        throw ConfigError("encode_ground_truth: shrink must be in [0, 0.5)");
    }
    const int w = image_size / stride;
    const int h = image_size / stride;
    GroundTruthMaps gt;
    gt.width = w;
    gt.height = h;
    gt.stride = stride;
    gt.score = Eigen::ArrayXd::Zero(static_cast<long>(h) * w);
    gt.rotation = Eigen::ArrayXd::Zero(static_cast<long>(h) * w);
    gt.distance = Eigen::ArrayXd::Zero(4L * h * w);
    gt.mask = Eigen::ArrayXd::Zero(static_cast<long>(h) * w);

    Eigen::ArrayXd assigned_area =
        Eigen::ArrayXd::Constant(static_cast<long>(h) * w, std::numeric_limits<double>::infinity());
    const long plane = static_cast<long>(h) * w;

    for (const RotatedRect& box : annotations) {
        const double area = rect_area(box);
        const RotatedRect region = shrink > 0.0 ? shrink_rect(box, shrink) : box;
        const PixelBounds b = map_bounds(region, stride, w, h);
        for (int i = b.y0; i <= b.y1; ++i) {
            for (int j = b.x0; j <= b.x1; ++j) {
                const Vec2 center((j + 0.5) * stride, (i + 0.5) * stride);
                if (!rect_contains(region, center)) continue;
                const long px = static_cast<long>(i) * w + j;
                if (area >= assigned_area[px]) continue;
                assigned_area[px] = area;
                gt.score[px] = 1.0;
                gt.mask[px] = 1.0;
                gt.rotation[px] = box.theta;
                const auto d = edge_distances(box, center);
                gt.distance[0 * plane + px] = d[0];
                gt.distance[1 * plane + px] = d[1];
                gt.distance[2 * plane + px] = d[2];
                gt.distance[3 * plane + px] = d[3];
            }
        }
    }
    return gt;
}

Sample synth_scene(std::uint64_t seed, const SynthSpec& spec) {
    const int S = spec.image_size;
    Rng rng(seed);
    Sample sample;
    sample.size = S;
    sample.pixels = Eigen::ArrayXd::Zero(3L * S * S);
    sample.id = "s" + std::to_string(seed);

    // textured background: per-channel base level plus a low-frequency wave
    double base[3], phase[3];
    for (int c = 0; c < 3; ++c) base[c] = rng.uniform(0.05, 0.32);
    const double fx = rng.uniform(0.3, 1.5);
    const double fy = rng.uniform(0.3, 1.5);
    for (int c = 0; c < 3; ++c) phase[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amp = 0.04;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                const double t = 2.0 * std::numbers::pi * (fx * x + fy * y) / S + phase[c];
                sample.pixels[pixel_index(S, c, y, x)] = base[c] + amp * std::sin(t);
            }
        }
    }

    // box placement with bounded rejection on overlap and image bounds
    const int want = rng.uniform_int(spec.boxes_min, spec.boxes_max);
    for (int n = 0; n < want; ++n) {
        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            const double bw = rng.uniform(spec.size_min, spec.size_max);
            const double bh = rng.uniform(spec.size_min, spec.size_max);
            const double theta = rng.uniform(spec.angle_min, spec.angle_max);
            const double cx = rng.uniform(0.0, S);
            const double cy = rng.uniform(0.0, S);
            RotatedRect box = rect_from_center({cx, cy}, bw, bh, theta);
            bool ok = true;
            for (const Vec2& v : box.vertices) {
                if (v.x() < 1.0 || v.x() > S - 1.0 || v.y() < 1.0 || v.y() > S - 1.0) ok = false;
            }
            for (const RotatedRect& other : sample.annotations) {
                if (!ok) break;
                if (iou(box, other) > spec.max_overlap_iou) ok = false;
            }
            if (!ok) continue;
            sample.annotations.push_back(box);
            placed = true;
        }
    }

    // paint boxes, larger first so overlaps resolve to the smaller box
    std::vector<std::size_t> order(sample.annotations.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return rect_area(sample.annotations[a]) > rect_area(sample.annotations[b]);
    });
    std::vector<std::array<double, 3>> colors(sample.annotations.size());
    for (std::size_t i = 0; i < colors.size(); ++i) {
        for (int c = 0; c < 3; ++c) colors[i][static_cast<std::size_t>(c)] = rng.uniform(0.55, 0.95);
    }
    for (std::size_t oi : order) {
        const RotatedRect& box = sample.annotations[oi];
        const PixelBounds b = map_bounds(box, 1, S, S);
        for (int y = b.y0; y <= b.y1; ++y) {
            for (int x = b.x0; x <= b.x1; ++x) {
                if (!rect_contains(box, {x + 0.5, y + 0.5})) continue;
                for (int c = 0; c < 3; ++c) {
                    sample.pixels[pixel_index(S, c, y, x)] = colors[oi][static_cast<std::size_t>(c)];
                }
            }
        }
    }

    if (spec.noise > 0.0) {
        for (long i = 0; i < sample.pixels.size(); ++i) {
            sample.pixels[i] += rng.uniform(-spec.noise, spec.noise);
        }
    }
    sample.pixels = sample.pixels.cwiseMax(0.0).cwiseMin(1.0);
    return sample;
}

Sample mirror_sample(const Sample& s) {
    Sample out;
    out.size = s.size;
    out.id = s.id;
    out.pixels = Eigen::ArrayXd(s.pixels.size());
    const int S = s.size;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                out.pixels[pixel_index(S, c, y, x)] = s.pixels[pixel_index(S, c, y, S - 1 - x)];
            }
        }
    }
    out.annotations.reserve(s.annotations.size());
    for (const RotatedRect& r : s.annotations) {
        const Vec2 c = rect_center(r);
        const double w = rect_width(r);
        const double h = (r.vertices[3] - r.vertices[0]).norm();
        out.annotations.push_back(
            rect_from_center({S - c.x(), c.y()}, w, h, -r.theta, r.score));
    }
    return out;
}

Sample crop_sample(const Sample& s, int x0, int y0, int width, int height) {
    Sample out;
    out.size = width;
    out.id = s.id;
    if (width != height) throw ConfigError("crop_sample: only square crops are supported");
    out.pixels = Eigen::ArrayXd(3L * width * height);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                out.pixels[pixel_index(width, c, y, x)] =
                    s.pixels[pixel_index(s.size, c, y0 + y, x0 + x)];
            }
        }
    }
    for (const RotatedRect& r : s.annotations) {
        bool inside = true;
        for (const Vec2& v : r.vertices) {
            if (v.x() < x0 || v.x() > x0 + width || v.y() < y0 || v.y() > y0 + height) {
                inside = false;
                break;
            }
        }
        if (!inside) continue;
        RotatedRect moved = r;
        for (Vec2& v : moved.vertices) v -= Vec2(x0, y0);
        out.annotations.push_back(moved);
    }
    return out;
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
    } else if (mx == r) {
        h = std::fmod((g - b) / d, 6.0) / 6.0;
    } else if (mx == g) {
        h = ((b - r) / d + 2.0) / 6.0;
    } else {
        h = ((r - g) / d + 4.0) / 6.0;
    }
    if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double hh = h * 6.0;
    const int i = static_cast<int>(std::floor(hh)) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

}  // namespace

Sample augment(const Sample& sample, Rng& rng, const AugmentOpts& opts) {
    Sample out = sample;
    if (opts.mirror && rng.uniform() < 0.5) {
        out = mirror_sample(out);
    }
    if (opts.crop && opts.crop_width > 0 && opts.crop_height > 0) {
        const int cw = opts.crop_width, ch = opts.crop_height;
        if (cw > out.size || ch > out.size) {
            throw ConfigError("augment: crop window larger than the image");
        }
        const int max_x = out.size - cw, max_y = out.size - ch;
        int x0 = max_x / 2, y0 = max_y / 2;  // fallback: centered window
        for (int attempt = 0; attempt < 10; ++attempt) {
            const int tx = max_x > 0 ? rng.uniform_int(0, max_x) : 0;
            const int ty = max_y > 0 ? rng.uniform_int(0, max_y) : 0;
            Sample trial = crop_sample(out, tx, ty, cw, ch);
            if (!trial.annotations.empty() || out.annotations.empty()) {
                x0 = tx;
                y0 = ty;
                break;
            }
        }
        out = crop_sample(out, x0, y0, cw, ch);
    }
    if (opts.color_jitter) {
        const double dh = rng.uniform(-0.05, 0.05);
        const double sscale = rng.uniform(0.7, 1.3);
        const double vscale = rng.uniform(0.7, 1.3);
        const int S = out.size;
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                double r = out.pixels[pixel_index(S, 0, y, x)];
                double g = out.pixels[pixel_index(S, 1, y, x)];
                double b = out.pixels[pixel_index(S, 2, y, x)];
                double h, s, v;
                rgb_to_hsv(r, g, b, h, s, v);
                h = std::fmod(h + dh + 1.0, 1.0);
                s = std::clamp(s * sscale, 0.0, 1.0);
                v = std::clamp(v * vscale, 0.0, 1.0);
                hsv_to_rgb(h, s, v, r, g, b);
                out.pixels[pixel_index(S, 0, y, x)] = r;
                out.pixels[pixel_index(S, 1, y, x)] = g;
                out.pixels[pixel_index(S, 2, y, x)] = b;
            }
        }
    }
    return out;
}

std::vector<RotatedRect> parse_axis_aligned_annotations(const std::string& text) {
    std::vector<RotatedRect> boxes;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ls(line);
        double x, y, w, h;
        if (!(ls >> x >> y >> w >> h)) {
            throw ParseError("expected four numbers (x y w h)", line_no);
        }
        std::string trailing;
        if (ls >> trailing) {
            throw ParseError("unexpected trailing token '" + trailing + "'", line_no);
        }
        if (!(w > 0.0) || !(h > 0.0)) {
            throw ParseError("box extents must be positive", line_no);
        }
        boxes.push_back(rect_from_xywh(x, y, w, h));
    }
    return boxes;
}

static std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string write_axis_aligned_annotations(const std::vector<RotatedRect>& boxes) {
    std::string out;
    for (const RotatedRect& r : boxes) {
        const double x = r.vertices[0].x();
        const double y = r.vertices[0].y();
        const double w = rect_width(r);
        const double h = (r.vertices[3] - r.vertices[0]).norm();
        out += fmt_double(x) + " " + fmt_double(y) + " " + fmt_double(w) + " " + fmt_double(h) + "\n";
    }
    return out;
}

std::vector<RotatedRect> parse_polygon_annotations_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), 1);
    }
    if (!j.is_array()) throw ParseError("expected a JSON array of boxes", 1);
    std::vector<RotatedRect> boxes;
    for (const auto& item : j) {
        if (!item.contains("vertices") || !item["vertices"].is_array() ||
            item["vertices"].size() != 4) {
            throw ParseError("each box needs a 'vertices' list of four [x,y] pairs", 1);
        }
        RotatedRect r;
        for (int i = 0; i < 4; ++i) {
            const auto& v = item["vertices"][static_cast<std::size_t>(i)];
            if (!v.is_array() || v.size() != 2) {
                throw ParseError("vertex entries must be [x,y] pairs", 1);
            }
            r.vertices[static_cast<std::size_t>(i)] = {v[0].get<double>(), v[1].get<double>()};
        }
        r.theta = item.contains("theta") ? item["theta"].get<double>() : theta_from_vertices(r);
        if (item.contains("score")) r.score = item["score"].get<double>();
        boxes.push_back(r);
    }
    return boxes;
}

std::string write_polygon_annotations_json(const std::vector<RotatedRect>& boxes) {
    nlohmann::json j = nlohmann::json::array();
    for (const RotatedRect& r : boxes) {
        nlohmann::json item;
        item["vertices"] = nlohmann::json::array();
        for (const Vec2& v : r.vertices) {
            item["vertices"].push_back({v.x(), v.y()});
        }
        item["theta"] = r.theta;
        j.push_back(item);
    }
    return j.dump(2) + "\n";
}

}  // namespace rotdet
