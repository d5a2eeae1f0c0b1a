#include "rotdet/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "rotdet/io.hpp"

namespace rotdet {

namespace {

using nlohmann::json;

template <class T>
T get_field(const json& j, const std::string& section, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config field '" + section + "." + key + "' has the wrong type");
    }
}

FusionKind parse_fusion(const std::string& name) {
    if (name == "UF" || name == "unweighted") return FusionKind::unweighted;
    if (name == "CWF" || name == "complementary_weighted") {
        return FusionKind::complementary_weighted;
    }
    throw ConfigError("config field 'network.fusion' must be UF or CWF");
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    ExperimentConfig cfg;
    cfg.schema_version = get_field<int>(j, "", "schema_version", 1);
    if (cfg.schema_version != 1) throw ConfigError("config field 'schema_version' must be 1");
    cfg.output_dir = get_field<std::string>(j, "", "output_dir", cfg.output_dir);
    cfg.precision = get_field<std::string>(j, "", "precision", cfg.precision);

    if (j.contains("network")) {
        const json& n = j.at("network");
        auto channels = get_field<std::vector<int>>(n, "network", "backbone_channels",
                                                    {cfg.network.backbone_channels.begin(),
                                                     cfg.network.backbone_channels.end()});
        if (channels.size() != 4) {
            throw ConfigError("config field 'network.backbone_channels' must list 4 widths");
        }
        std::copy(channels.begin(), channels.end(), cfg.network.backbone_channels.begin());
        cfg.network.fusion =
            parse_fusion(get_field<std::string>(n, "network", "fusion", fusion_name(cfg.network.fusion)));
        cfg.network.head_scales =
            get_field<std::vector<int>>(n, "network", "head_scales", cfg.network.head_scales);
        cfg.network.dmax = get_field<double>(n, "network", "dmax", cfg.network.dmax);
        cfg.network.input_size = get_field<int>(n, "network", "input_size", cfg.network.input_size);
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        cfg.train.lr0 = get_field<double>(t, "train", "lr0", cfg.train.lr0);
        cfg.train.decay_rate = get_field<double>(t, "train", "decay_rate", cfg.train.decay_rate);
        cfg.train.decay_every = get_field<int>(t, "train", "decay_every", cfg.train.decay_every);
        cfg.train.batch_size = get_field<int>(t, "train", "batch_size", cfg.train.batch_size);
        cfg.train.max_iters = get_field<long>(t, "train", "max_iters", cfg.train.max_iters);
        cfg.train.seed = get_field<std::uint64_t>(t, "train", "seed", cfg.train.seed);
        cfg.train.beta1 = get_field<double>(t, "train", "beta1", cfg.train.beta1);
        cfg.train.beta2 = get_field<double>(t, "train", "beta2", cfg.train.beta2);
        cfg.train.eps = get_field<double>(t, "train", "eps", cfg.train.eps);
        cfg.train.checkpoint_every =
            get_field<int>(t, "train", "checkpoint_every", cfg.train.checkpoint_every);
        cfg.train.shrink = get_field<double>(t, "train", "shrink", cfg.train.shrink);
    }
    cfg.train.input_size = cfg.network.input_size;

    if (j.contains("loss")) {
        const json& l = j.at("loss");
        cfg.loss.alpha = get_field<double>(l, "loss", "alpha", cfg.loss.alpha);
        cfg.loss.beta = get_field<double>(l, "loss", "beta", cfg.loss.beta);
        cfg.loss.scales = get_field<std::vector<int>>(l, "loss", "scales", cfg.loss.scales);
        if (l.contains("scale_weights")) {
            if (!l.at("scale_weights").is_object()) {
                throw ConfigError("config field 'loss.scale_weights' must map scale -> weight");
            }
            for (const auto& [key, value] : l.at("scale_weights").items()) {
                try {
                    cfg.loss.scale_weights[std::stoi(key)] = value.get<double>();
                } catch (...) {
                    throw ConfigError("config field 'loss.scale_weights." + key + "' is invalid");
                }
            }
        }
    }

    if (j.contains("decode")) {
        const json& d = j.at("decode");
        cfg.decode.score_threshold =
            get_field<double>(d, "decode", "score_threshold", cfg.decode.score_threshold);
        cfg.decode.nms_iou = get_field<double>(d, "decode", "nms_iou", cfg.decode.nms_iou);
        cfg.decode.max_candidates =
            get_field<int>(d, "decode", "max_candidates", cfg.decode.max_candidates);
    }

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        cfg.eval.iou_threshold = get_field<double>(e, "eval", "iou_threshold", cfg.eval.iou_threshold);
        cfg.eval.ar_fppi_points = get_field<int>(e, "eval", "ar_fppi_points", cfg.eval.ar_fppi_points);
        if (e.contains("levels")) {
            if (!e.at("levels").is_array()) {
                throw ConfigError("config field 'eval.levels' must be a list");
            }
            cfg.eval.levels.clear();
            for (const auto& item : e.at("levels")) {
                EvalLevel level;
                level.name = get_field<std::string>(item, "eval.levels", "name", "");
                level.min_height = get_field<double>(item, "eval.levels", "min_height", 0.0);
                if (level.name.empty()) {
                    throw ConfigError("config field 'eval.levels[].name' must not be empty");
                }
                cfg.eval.levels.push_back(level);
            }
        }
    }

    if (j.contains("data")) {
        const json& d = j.at("data");
        cfg.data.kind = get_field<std::string>(d, "data", "kind", cfg.data.kind);
        cfg.data.synth.image_size = get_field<int>(d, "data", "image_size", cfg.data.synth.image_size);
        auto boxes = get_field<std::vector<int>>(d, "data", "boxes",
                                                 {cfg.data.synth.boxes_min, cfg.data.synth.boxes_max});
        if (boxes.size() != 2) throw ConfigError("config field 'data.boxes' must be [min,max]");
        cfg.data.synth.boxes_min = boxes[0];
        cfg.data.synth.boxes_max = boxes[1];
        auto sizes = get_field<std::vector<double>>(
            d, "data", "box_size", {cfg.data.synth.size_min, cfg.data.synth.size_max});
        if (sizes.size() != 2) throw ConfigError("config field 'data.box_size' must be [min,max]");
        cfg.data.synth.size_min = sizes[0];
        cfg.data.synth.size_max = sizes[1];
        auto angles = get_field<std::vector<double>>(
            d, "data", "angle_range", {cfg.data.synth.angle_min, cfg.data.synth.angle_max});
        if (angles.size() != 2) throw ConfigError("config field 'data.angle_range' must be [min,max]");
        cfg.data.synth.angle_min = angles[0];
        cfg.data.synth.angle_max = angles[1];
        cfg.data.synth.noise = get_field<double>(d, "data", "noise", cfg.data.synth.noise);
        cfg.data.synth.max_overlap_iou =
            get_field<double>(d, "data", "max_overlap_iou", cfg.data.synth.max_overlap_iou);
        cfg.data.count_train = get_field<long>(d, "data", "count_train", cfg.data.count_train);
        cfg.data.count_val = get_field<long>(d, "data", "count_val", cfg.data.count_val);
        cfg.data.seed = get_field<std::uint64_t>(d, "data", "seed", cfg.data.seed);
        cfg.data.dir = get_field<std::string>(d, "data", "dir", cfg.data.dir);
        if (d.contains("augment")) {
            const json& a = d.at("augment");
            cfg.data.augment.mirror = get_field<bool>(a, "data.augment", "mirror", cfg.data.augment.mirror);
            cfg.data.augment.crop = get_field<bool>(a, "data.augment", "crop", cfg.data.augment.crop);
            cfg.data.augment.color_jitter =
                get_field<bool>(a, "data.augment", "color_jitter", cfg.data.augment.color_jitter);
        }
    }
    if (cfg.data.augment.crop) {
        cfg.data.augment.crop_width = cfg.network.input_size;
        cfg.data.augment.crop_height = cfg.network.input_size;
    }

    validate(cfg);
    return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["output_dir"] = cfg.output_dir;
    j["precision"] = cfg.precision;
    j["network"] = {{"backbone_channels", cfg.network.backbone_channels},
                    {"fusion", fusion_name(cfg.network.fusion)},
                    {"head_scales", cfg.network.head_scales},
                    {"dmax", cfg.network.dmax},
                    {"input_size", cfg.network.input_size}};
    j["train"] = {{"lr0", cfg.train.lr0},
                  {"decay_rate", cfg.train.decay_rate},
                  {"decay_every", cfg.train.decay_every},
                  {"batch_size", cfg.train.batch_size},
                  {"max_iters", cfg.train.max_iters},
                  {"seed", cfg.train.seed},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"eps", cfg.train.eps},
                  {"checkpoint_every", cfg.train.checkpoint_every},
                  {"shrink", cfg.train.shrink}};
    json weights = json::object();
    for (const auto& [scale, w] : cfg.loss.scale_weights) {
        weights[std::to_string(scale)] = w;
    }
    j["loss"] = {{"alpha", cfg.loss.alpha},
                 {"beta", cfg.loss.beta},
                 {"scales", cfg.loss.scales},
                 {"scale_weights", weights}};
    j["decode"] = {{"score_threshold", cfg.decode.score_threshold},
                   {"nms_iou", cfg.decode.nms_iou},
                   {"max_candidates", cfg.decode.max_candidates}};
    json levels = json::array();
    for (const auto& level : cfg.eval.levels) {
        levels.push_back({{"name", level.name}, {"min_height", level.min_height}});
    }
    j["eval"] = {{"iou_threshold", cfg.eval.iou_threshold},
                 {"levels", levels},
                 {"ar_fppi_points", cfg.eval.ar_fppi_points}};
    j["data"] = {{"kind", cfg.data.kind},
                 {"image_size", cfg.data.synth.image_size},
                 {"boxes", {cfg.data.synth.boxes_min, cfg.data.synth.boxes_max}},
                 {"box_size", {cfg.data.synth.size_min, cfg.data.synth.size_max}},
                 {"angle_range", {cfg.data.synth.angle_min, cfg.data.synth.angle_max}},
                 {"noise", cfg.data.synth.noise},
                 {"max_overlap_iou", cfg.data.synth.max_overlap_iou},
                 {"count_train", cfg.data.count_train},
                 {"count_val", cfg.data.count_val},
                 {"seed", cfg.data.seed},
                 {"dir", cfg.data.dir},
                 {"augment",
                  {{"mirror", cfg.data.augment.mirror},
                   {"crop", cfg.data.augment.crop},
                   {"color_jitter", cfg.data.augment.color_jitter}}}};
    return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string& path) {
    ExperimentConfig cfg = config_from_json(read_text_file(path));
    const char* root = std::getenv("ROTDET_OUT_ROOT");
    if (root && *root && std::filesystem::path(cfg.output_dir).is_relative()) {
        cfg.output_dir = (std::filesystem::path(root) / cfg.output_dir).string();
    }
    return cfg;
}

void validate(const ExperimentConfig& cfg) {
    if (cfg.precision != "float64" && cfg.precision != "float32") {
        throw ConfigError("config field 'precision' must be float64 or float32");
    }
    validate(cfg.network);
    validate(cfg.train);
    validate(cfg.loss);
    validate(cfg.decode);
    validate(cfg.eval);
    for (int s : cfg.loss.scales) {
        bool found = false;
        for (int hs : cfg.network.head_scales) found = found || hs == s;
        if (!found) {
            throw ConfigError("config field 'loss.scales' includes scale " + std::to_string(s) +
                              " that is missing from network.head_scales");
        }
    }
    if (cfg.data.kind != "synthetic") {
        throw ConfigError("config field 'data.kind' must be 'synthetic'");
    }
    if (cfg.data.synth.image_size < cfg.network.input_size) {
        throw ConfigError("config field 'data.image_size' must be >= network.input_size");
    }
    if (!cfg.data.augment.crop && cfg.data.synth.image_size != cfg.network.input_size) {
        throw ConfigError(
            "config field 'data.image_size' must equal network.input_size unless cropping is on");
    }
    if (cfg.data.synth.boxes_min < 0 || cfg.data.synth.boxes_max < cfg.data.synth.boxes_min) {
        throw ConfigError("config field 'data.boxes' must satisfy 0 <= min <= max");
    }
    if (!(cfg.data.synth.size_min > 0.0) || cfg.data.synth.size_max < cfg.data.synth.size_min) {
        throw ConfigError("config field 'data.box_size' must satisfy 0 < min <= max");
    }
    if (cfg.data.synth.angle_min < -1.5707 || cfg.data.synth.angle_max > 1.5707 ||
        cfg.data.synth.angle_min > cfg.data.synth.angle_max) {
        throw ConfigError("config field 'data.angle_range' must lie inside (-pi/2, pi/2)");
    }
    if (cfg.data.count_train < 1) throw ConfigError("config field 'data.count_train' must be >= 1");
    if (cfg.data.count_val < 0) throw ConfigError("config field 'data.count_val' must be >= 0");
}

std::uint64_t sample_seed(const DataSpec& data, const std::string& split, long index) {
    return derive_seed(data.seed, fnv1a(split), static_cast<std::uint64_t>(index));
}

std::string sample_id(const std::string& split, long index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%05ld", split.c_str(), index);
    return buf;
}

}  // namespace rotdet
