#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rotdet/eval.hpp"
#include "rotdet/maps.hpp"

namespace rotdet {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// 8-bit binary PPM (P6). Reading yields values k/255 and an id equal to the
// file stem; annotations travel in separate files.
void write_ppm(const std::string& path, const Sample& sample);
Sample read_ppm(const std::string& path);

// Detection interchange: one line per box,
//   image_id score theta x0 y0 x1 y1 x2 y2 x3 y3
std::string format_detections(const std::map<std::string, std::vector<RotatedRect>>& dets);
std::map<std::string, std::vector<RotatedRect>> parse_detections(const std::string& text);

// Synthetic dataset manifest: generation spec plus (id, seed) per sample.
struct DatasetManifest {
    SynthSpec synth;
    std::vector<std::pair<std::string, std::uint64_t>> samples;
};
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

// Minimal SVG line plots for metrics and PR curves.
struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};
std::string render_line_svg(const std::string& title, const std::string& x_label,
                            const std::string& y_label, const std::vector<PlotSeries>& series);

std::string report_to_csv(const EvalReport& report);
std::string pr_to_csv(const LevelReport& level);
std::string fppi_to_csv(const LevelReport& level);

// Writes report.csv plus per-level PR/FPPI CSVs and PR SVGs into `dir`.
void write_report_files(const EvalReport& report, const std::string& dir);

}  // namespace rotdet
