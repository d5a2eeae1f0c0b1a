#pragma once

#include <cstdint>
#include <string>

#include "rotdet/decode.hpp"
#include "rotdet/eval.hpp"
#include "rotdet/loss.hpp"
#include "rotdet/maps.hpp"
#include "rotdet/net.hpp"
#include "rotdet/trainer.hpp"

namespace rotdet {

struct DataSpec {
    std::string kind = "synthetic";
    SynthSpec synth;
    long count_train = 200;
    long count_val = 32;
    std::uint64_t seed = 1;
    std::string dir;  // dataset directory used by gen-data
    AugmentOpts augment{true, false, 0, 0, true};
};

// One experiment = one config file; every command reads the same schema.
struct ExperimentConfig {
    int schema_version = 1;
    std::string output_dir = "runs/exp";
    std::string precision = "float64";  // float64 | float32
    NetworkSpec network;
    TrainSpec train;
    LossWeights loss;
    DecodeSpec decode;
    EvalSpec eval;
    DataSpec data;
};

// Parses and cross-validates; error messages name the offending field.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

// Reads the file and applies the ROTDET_OUT_ROOT environment prefix to a
// relative output_dir.
ExperimentConfig load_config(const std::string& path);

void validate(const ExperimentConfig& cfg);

// Deterministic per-sample seed for a named dataset split.
std::uint64_t sample_seed(const DataSpec& data, const std::string& split, long index);

std::string sample_id(const std::string& split, long index);

}  // namespace rotdet
