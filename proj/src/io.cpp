#include "rotdet/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rotdet/errors.hpp"

namespace rotdet {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write file: " + path);
    out << content;
    if (!out) throw IoError("failed while writing file: " + path);
}

void write_ppm(const std::string& path, const Sample& sample) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image: " + path);
    const int S = sample.size;
    out << "P6\n" << S << " " << S << "\n255\n";
    std::string bytes;
    bytes.reserve(static_cast<std::size_t>(3) * S * S);
    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = sample.pixels[pixel_index(S, c, y, x)];
                const int q = std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255);
                bytes.push_back(static_cast<char>(q));
            }
        }
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed while writing image: " + path);
}

namespace {

int next_ppm_token(std::istream& in) {
    // skips whitespace and '#' comments, returns the next integer
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int value = 0;
    if (!(in >> value)) throw IoError("malformed PPM header");
    return value;
}

}  // namespace

Sample read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P6") throw IoError("unsupported image format (want binary PPM): " + path);
    const int w = next_ppm_token(in);
    const int h = next_ppm_token(in);
    const int maxval = next_ppm_token(in);
    if (w != h) throw IoError("only square images are supported: " + path);
    if (maxval != 255) throw IoError("only 8-bit PPM is supported: " + path);
    in.get();  // single whitespace after maxval
    std::string bytes(static_cast<std::size_t>(3) * w * h, '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw IoError("truncated image data: " + path);

    Sample sample;
    sample.size = w;
    sample.pixels = Eigen::ArrayXd(3L * w * h);
    std::size_t k = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                sample.pixels[pixel_index(w, c, y, x)] =
                    static_cast<unsigned char>(bytes[k++]) / 255.0;
            }
        }
    }
    sample.id = std::filesystem::path(path).stem().string();
    return sample;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string format_detections(const std::map<std::string, std::vector<RotatedRect>>& dets) {
    std::string out;
    for (const auto& [id, boxes] : dets) {
        for (const RotatedRect& r : boxes) {
            out += id + " " + fmt(r.score) + " " + fmt(r.theta);
            for (const Vec2& v : r.vertices) {
                out += " " + fmt(v.x()) + " " + fmt(v.y());
            }
            out += "\n";
        }
    }
    return out;
}

std::map<std::string, std::vector<RotatedRect>> parse_detections(const std::string& text) {
    std::map<std::string, std::vector<RotatedRect>> dets;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ls(line);
        std::string id;
        RotatedRect r;
        double coords[8];
        if (!(ls >> id >> r.score >> r.theta >> coords[0] >> coords[1] >> coords[2] >> coords[3] >>
              coords[4] >> coords[5] >> coords[6] >> coords[7])) {
            throw ParseError("expected 'id score theta x0 y0 x1 y1 x2 y2 x3 y3'", line_no);
        }
        for (int i = 0; i < 4; ++i) {
            r.vertices[static_cast<std::size_t>(i)] = {coords[2 * i], coords[2 * i + 1]};
        }
        dets[id].push_back(r);
    }
    return dets;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["synth"] = {{"image_size", manifest.synth.image_size},
                  {"boxes_min", manifest.synth.boxes_min},
                  {"boxes_max", manifest.synth.boxes_max},
                  {"size_min", manifest.synth.size_min},
                  {"size_max", manifest.synth.size_max},
                  {"angle_min", manifest.synth.angle_min},
                  {"angle_max", manifest.synth.angle_max},
                  {"noise", manifest.synth.noise},
                  {"max_overlap_iou", manifest.synth.max_overlap_iou}};
    j["samples"] = nlohmann::json::array();
    for (const auto& [id, seed] : manifest.samples) {
        j["samples"].push_back({{"id", id}, {"seed", seed}});
    }
    return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("invalid manifest JSON: ") + e.what());
    }
    DatasetManifest m;
    const auto& s = j.at("synth");
    m.synth.image_size = s.at("image_size").get<int>();
    m.synth.boxes_min = s.at("boxes_min").get<int>();
    m.synth.boxes_max = s.at("boxes_max").get<int>();
    m.synth.size_min = s.at("size_min").get<double>();
    m.synth.size_max = s.at("size_max").get<double>();
    m.synth.angle_min = s.at("angle_min").get<double>();
    m.synth.angle_max = s.at("angle_max").get<double>();
    m.synth.noise = s.at("noise").get<double>();
    if (s.contains("max_overlap_iou")) m.synth.max_overlap_iou = s.at("max_overlap_iou").get<double>();
    for (const auto& entry : j.at("samples")) {
        m.samples.emplace_back(entry.at("id").get<std::string>(),
                               entry.at("seed").get<std::uint64_t>());
    }
    return m;
}

std::string render_line_svg(const std::string& title, const std::string& x_label,
                            const std::string& y_label, const std::vector<PlotSeries>& series) {
    const int width = 720, height = 480;
    const int ml = 70, mr = 20, mt = 40, mb = 50;
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
    bool first = true;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            if (first) {
                x_min = x_max = x;
                y_min = y_max = y;
                first = false;
            }
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    }
    if (x_max <= x_min) x_max = x_min + 1;
    if (y_max <= y_min) y_max = y_min + 1;

    auto sx = [&](double x) {
        return ml + (x - x_min) / (x_max - x_min) * (width - ml - mr);
    };
    auto sy = [&](double y) {
        return height - mb - (y - y_min) / (y_max - y_min) * (height - mt - mb);
    };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
        << title << "</text>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr << "\" y2=\""
        << height - mb << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << height - mb
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    svg << "<text x=\"18\" y=\"" << (mt + height - mb) / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 "
        << (mt + height - mb) / 2 << ")\">" << y_label << "</text>\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", x_min);
    svg << "<text x=\"" << ml << "\" y=\"" << height - mb + 16 << "\" font-size=\"11\">" << buf
        << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.4g", x_max);
    svg << "<text x=\"" << width - mr << "\" y=\"" << height - mb + 16
        << "\" text-anchor=\"end\" font-size=\"11\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.4g", y_min);
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << height - mb << "\" text-anchor=\"end\" font-size=\"11\">"
        << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.4g", y_max);
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << mt + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
        << buf << "</text>\n";

    int ci = 0;
    for (const auto& s : series) {
        const char* color = colors[ci % 5];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : s.points) {
            svg << sx(x) << "," << sy(y) << " ";
        }
        svg << "\"/>\n";
        svg << "<text x=\"" << width - mr - 6 << "\" y=\"" << mt + 16 + 16 * ci
            << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color << "\">" << s.label
            << "</text>\n";
        ++ci;
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string report_to_csv(const EvalReport& report) {
    std::string out = "level,ap,ar,n_gt,n_images,n_detections\n";
    for (const auto& level : report.levels) {
        out += level.name + "," + fmt(level.ap) + "," + fmt(level.ar) + "," +
               std::to_string(level.n_gt) + "," + std::to_string(level.n_images) + "," +
               std::to_string(level.n_detections) + "\n";
    }
    return out;
}

std::string pr_to_csv(const LevelReport& level) {
    std::string out = "threshold,recall,precision\n";
    for (const PrPoint& p : level.pr) {
        out += fmt(p.threshold) + "," + fmt(p.recall) + "," + fmt(p.precision) + "\n";
    }
    return out;
}

std::string fppi_to_csv(const LevelReport& level) {
    std::string out = "fppi,recall\n";
    for (const FppiPoint& p : level.fppi) {
        out += fmt(p.fppi) + "," + fmt(p.recall) + "\n";
    }
    return out;
}

void write_report_files(const EvalReport& report, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const auto base = std::filesystem::path(dir);
    write_text_file((base / "report.csv").string(), report_to_csv(report));
    for (const auto& level : report.levels) {
        write_text_file((base / ("pr_" + level.name + ".csv")).string(), pr_to_csv(level));
        write_text_file((base / ("fppi_" + level.name + ".csv")).string(), fppi_to_csv(level));
        PlotSeries series;
        series.label = level.name;
        for (const PrPoint& p : level.pr) series.points.emplace_back(p.recall, p.precision);
        write_text_file((base / ("pr_" + level.name + ".svg")).string(),
                        render_line_svg("precision-recall (" + level.name + ")", "recall",
                                        "precision", {series}));
    }
}

}  // namespace rotdet
