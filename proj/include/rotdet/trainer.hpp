#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rotdet/loss.hpp"
#include "rotdet/maps.hpp"
#include "rotdet/net.hpp"
#include "rotdet/rng.hpp"

namespace rotdet {

struct TrainSpec {
    double lr0 = 0.0001;
    double decay_rate = 0.94;
    int decay_every = 10000;
    int batch_size = 12;
    long max_iters = 1000;
    std::uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int input_size = 64;
    int checkpoint_every = 0;  // 0 = final only
    double shrink = 0.3;       // positive-region shrink fraction per side
};

inline void validate(const TrainSpec& spec) {
    if (!(spec.lr0 > 0.0)) throw ConfigError("train.lr0 must be positive");
    if (!(spec.decay_rate > 0.0 && spec.decay_rate <= 1.0)) {
        throw ConfigError("train.decay_rate must be in (0,1]");
    }
    if (spec.decay_every < 1) throw ConfigError("train.decay_every must be >= 1");
    if (spec.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (spec.max_iters < 0) throw ConfigError("train.max_iters must be >= 0");
    if (!(spec.shrink >= 0.0 && spec.shrink < 0.5)) throw ConfigError("train.shrink must be in [0,0.5)");
    if (spec.input_size <= 0 || spec.input_size % 32 != 0) {
        throw ConfigError("train.input_size must be a positive multiple of 32");
    }
}

// Staircase exponential decay: lr0 * rate^(iter / every) with integer division.
inline double lr_schedule(long iter, const TrainSpec& spec) {
    const long k = iter / spec.decay_every;
    return spec.lr0 * std::pow(spec.decay_rate, static_cast<double>(k));
}

template <class S>
struct AdamState {
    long t = 0;
    std::vector<ArrayX<S>> m, v;  // aligned with ParamSet entry order

    static AdamState init(const ParamSet<S>& params) {
        AdamState st;
        st.m.reserve(params.entries().size());
        st.v.reserve(params.entries().size());
        for (const auto& [name, p] : params.entries()) {
            st.m.push_back(ArrayX<S>::Zero(p.size()));
            st.v.push_back(ArrayX<S>::Zero(p.size()));
        }
        return st;
    }
};

// One ADAM update over every parameter, with bias correction. Throws
// NumericError naming the parameter when a gradient is not finite.
template <class S>
void adam_step(ParamSet<S>& params, AdamState<S>& state, double lr, const TrainSpec& spec) {
    state.t += 1;
    const S b1 = static_cast<S>(spec.beta1), b2 = static_cast<S>(spec.beta2);
    const S corr1 = S(1) - static_cast<S>(std::pow(spec.beta1, static_cast<double>(state.t)));
    const S corr2 = S(1) - static_cast<S>(std::pow(spec.beta2, static_cast<double>(state.t)));
    std::size_t i = 0;
    for (const auto& [name, p] : params.entries()) {
        const ArrayX<S>& g = p.grad();
        if (!g.isFinite().all()) {
            throw NumericError("non-finite gradient in parameter '" + name + "' at step " +
                               std::to_string(state.t));
        }
        ArrayX<S>& m = state.m[i];
        ArrayX<S>& v = state.v[i];
        m = b1 * m + (S(1) - b1) * g;
        v = b2 * v + (S(1) - b2) * g.square();
        ArrayX<S> m_hat = m / corr1;
        ArrayX<S> v_hat = v / corr2;
        ArrayX<S> updated =
            p.value() - static_cast<S>(lr) * m_hat / (v_hat.sqrt() + static_cast<S>(spec.eps));
        p.set_values(updated);
        ++i;
    }
}

inline std::string canonical_string(const TrainSpec& s) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "lr0=%.17g;decay=%.17g;every=%d;batch=%d;iters=%ld;seed=%llu;b1=%.17g;b2=%.17g;"
                  "eps=%.17g;input=%d;shrink=%.17g",
                  s.lr0, s.decay_rate, s.decay_every, s.batch_size, s.max_iters,
                  static_cast<unsigned long long>(s.seed), s.beta1, s.beta2, s.eps, s.input_size,
                  s.shrink);
    return buf;
}

inline std::string canonical_string(const NetworkSpec& s) {
    std::string out = "bc=";
    for (int c : s.backbone_channels) out += std::to_string(c) + ",";
    out += ";fusion=";
    out += fusion_name(s.fusion);
    out += ";scales=";
    for (int h : s.head_scales) out += std::to_string(h) + ",";
    char buf[64];
    std::snprintf(buf, sizeof(buf), ";dmax=%.17g;input=%d", s.dmax, s.input_size);
    return out + buf;
}

inline std::string canonical_string(const LossWeights& w) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "alpha=%.17g;beta=%.17g;scales=", w.alpha, w.beta);
    std::string out = buf;
    for (int s : w.scales) {
        std::snprintf(buf, sizeof(buf), "%d:%.17g,", s, w.weight_for(s));
        out += buf;
    }
    return out;
}

template <class S>
struct Checkpoint {
    long iteration = 0;
    ParamSet<S> params;
    AdamState<S> opt;
    std::string rng_state;
    std::uint64_t network_hash = 0;
    std::uint64_t train_hash = 0;
    std::uint64_t loss_hash = 0;
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'R', 'D', 'C', 'K', 'P', 'T', '0', '\n'};

template <class S>
const char* dtype_name() {
    return sizeof(S) == 8 ? "float64" : "float32";
}

}  // namespace detail

// Binary container: magic, u32 version, u64 header length, JSON header, then
// the raw little-endian value blob (per parameter: values, first moment,
// second moment).
template <class S>
void save_checkpoint(const Checkpoint<S>& ckpt, const std::string& path) {
    nlohmann::json header;
    header["dtype"] = detail::dtype_name<S>();
    header["iteration"] = ckpt.iteration;
    header["adam_t"] = ckpt.opt.t;
    header["rng_state"] = ckpt.rng_state;
    header["network_hash"] = ckpt.network_hash;
    header["train_hash"] = ckpt.train_hash;
    header["loss_hash"] = ckpt.loss_hash;
    header["params"] = nlohmann::json::array();
    for (const auto& [name, p] : ckpt.params.entries()) {
        header["params"].push_back({{"name", name}, {"shape", p.shape()}});
    }
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    const std::uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    std::size_t i = 0;
    for (const auto& [name, p] : ckpt.params.entries()) {
        const auto& val = p.value();
        out.write(reinterpret_cast<const char*>(val.data()),
                  static_cast<std::streamsize>(sizeof(S) * val.size()));
        out.write(reinterpret_cast<const char*>(ckpt.opt.m[i].data()),
                  static_cast<std::streamsize>(sizeof(S) * ckpt.opt.m[i].size()));
        out.write(reinterpret_cast<const char*>(ckpt.opt.v[i].data()),
                  static_cast<std::streamsize>(sizeof(S) * ckpt.opt.v[i].size()));
        ++i;
    }
    if (!out) throw IoError("failed while writing checkpoint: " + path);
}

// Reads only the JSON header; used to pick the scalar type before loading.
inline nlohmann::json read_checkpoint_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0) {
        throw IoError("not a checkpoint file: " + path);
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != 1) throw IoError("unsupported checkpoint version in " + path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("truncated checkpoint header: " + path);
    return nlohmann::json::parse(hs);
}

template <class S>
Checkpoint<S> load_checkpoint(const std::string& path) {
    const nlohmann::json header = read_checkpoint_header(path);
    if (header.at("dtype").get<std::string>() != detail::dtype_name<S>()) {
        throw ConfigError("checkpoint dtype is " + header.at("dtype").get<std::string>() +
                          ", expected " + detail::dtype_name<S>());
    }
    std::ifstream in(path, std::ios::binary);
    char magic[8];
    std::uint32_t version;
    std::uint64_t hlen;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    in.seekg(static_cast<std::streamoff>(hlen), std::ios::cur);

    Checkpoint<S> ckpt;
    ckpt.iteration = header.at("iteration").get<long>();
    ckpt.opt.t = header.at("adam_t").get<long>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    ckpt.network_hash = header.at("network_hash").get<std::uint64_t>();
    ckpt.train_hash = header.at("train_hash").get<std::uint64_t>();
    ckpt.loss_hash = header.at("loss_hash").get<std::uint64_t>();
    for (const auto& entry : header.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        const long n = shape_numel(shape);
        ArrayX<S> val(n), m(n), v(n);
        in.read(reinterpret_cast<char*>(val.data()), static_cast<std::streamsize>(sizeof(S) * n));
        in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(S) * n));
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(S) * n));
        if (!in) throw IoError("truncated checkpoint blob: " + path);
        ckpt.params.add(name, Tensor<S>::from_array(shape, std::move(val), true));
        ckpt.opt.m.push_back(std::move(m));
        ckpt.opt.v.push_back(std::move(v));
    }
    return ckpt;
}

// Training data source: `fetch` must be deterministic in its index.
struct TrainData {
    long count = 0;
    std::function<Sample(long)> fetch;
    AugmentOpts augment;
};

template <class S>
struct TrainOptions {
    std::string metrics_path;    // CSV written progressively when non-empty
    std::string checkpoint_dir;  // periodic + final checkpoints when non-empty
    std::function<void(long, const LossBreakdown<S>&, double)> on_iteration;
    std::function<bool(long, const LossBreakdown<S>&)> stop_when;  // early stop
};

template <class S>
struct TrainOutput {
    Checkpoint<S> checkpoint;
    std::string metrics_csv;
    std::vector<double> total_losses;
};

namespace detail {

inline std::string csv_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Deterministic reshuffled-epoch order: sample g of the run maps to
// perm(epoch)[g % count].
struct EpochOrder {
    std::uint64_t seed;
    long count;
    long cached_epoch = -1;
    std::vector<long> perm;

    long index_for(long global) {
        const long epoch = global / count;
        if (epoch != cached_epoch) {
            perm.resize(static_cast<std::size_t>(count));
            for (long i = 0; i < count; ++i) perm[static_cast<std::size_t>(i)] = i;
            Rng rng(derive_seed(seed, 0x0e9c, static_cast<std::uint64_t>(epoch)));
            rng.shuffle(perm);
            cached_epoch = epoch;
        }
        return perm[static_cast<std::size_t>(global % count)];
    }
};

}  // namespace detail

// Optimization loop. Deterministic given the specs and data source: batch
// composition and augmentation randomness derive from (seed, iteration), so
// resuming from a checkpoint reproduces the uninterrupted run bitwise.
template <class S>
TrainOutput<S> train(const NetworkSpec& net_spec, const TrainSpec& tspec, const LossWeights& weights,
                     const TrainData& data, const TrainOptions<S>& opts = {},
                     const Checkpoint<S>* resume = nullptr) {
    validate(net_spec);
    validate(tspec);
    validate(weights);
    for (int s : weights.scales) {
        bool found = false;
        for (int hs : net_spec.head_scales) found = found || hs == s;
        if (!found) {
            throw ConfigError("loss.scales entry " + std::to_string(s) +
                              " has no head (network.head_scales)");
        }
    }
    if (data.count < 1 || !data.fetch) throw ConfigError("train: empty data source");

    const std::uint64_t net_hash = fnv1a(canonical_string(net_spec));
    const std::uint64_t train_hash = fnv1a(canonical_string(tspec));
    const std::uint64_t loss_hash = fnv1a(canonical_string(weights));

    Rng master(derive_seed(tspec.seed, 0x1217, 0));
    ParamSet<S> params;
    AdamState<S> state;
    long start_iter = 0;
    if (resume) {
        if (resume->network_hash != net_hash || resume->loss_hash != loss_hash) {
            throw ConfigError("checkpoint was produced under a different network/loss spec");
        }
        for (const auto& [name, p] : resume->params.entries()) {
            params.add(name, Tensor<S>::from_array(p.shape(), p.value(), true));
        }
        state.t = resume->opt.t;
        state.m = resume->opt.m;
        state.v = resume->opt.v;
        start_iter = resume->iteration;
    } else {
        params = init_params<S>(net_spec, master);
        state = AdamState<S>::init(params);
    }

    std::string csv = "iteration,lr,total";
    for (int s : weights.scales) {
        csv += ",scale" + std::to_string(s) + "_score";
        csv += ",scale" + std::to_string(s) + "_rotation";
        csv += ",scale" + std::to_string(s) + "_distance";
    }
    csv += "\n";
    std::ofstream metrics_file;
    if (!opts.metrics_path.empty()) {
        metrics_file.open(opts.metrics_path, std::ios::trunc);
        if (!metrics_file) throw IoError("cannot write metrics: " + opts.metrics_path);
        metrics_file << csv;
    }

    auto make_checkpoint = [&](long iter) {
        Checkpoint<S> ckpt;
        ckpt.iteration = iter;
        for (const auto& [name, p] : params.entries()) {
            ckpt.params.add(name, Tensor<S>::from_array(p.shape(), p.value(), true));
        }
        ckpt.opt.t = state.t;
        ckpt.opt.m = state.m;
        ckpt.opt.v = state.v;
        ckpt.rng_state = master.state();
        ckpt.network_hash = net_hash;
        ckpt.train_hash = train_hash;
        ckpt.loss_hash = loss_hash;
        return ckpt;
    };

    detail::EpochOrder order{tspec.seed, data.count};
    TrainOutput<S> out;
    const int B = tspec.batch_size;
    const int in_size = tspec.input_size;

    for (long iter = start_iter; iter < tspec.max_iters; ++iter) {
        // assemble the batch
        std::vector<Sample> batch;
        batch.reserve(static_cast<std::size_t>(B));
        for (int j = 0; j < B; ++j) {
            const long global = iter * B + j;
            Sample s = data.fetch(order.index_for(global));
            Rng aug_rng(derive_seed(tspec.seed, 0xa461, static_cast<std::uint64_t>(global)));
            s = augment(s, aug_rng, data.augment);
            if (s.size != in_size) {
                throw ConfigError("train: sample size " + std::to_string(s.size) +
                                  " does not match train.input_size");
            }
            batch.push_back(std::move(s));
        }

        ArrayX<S> image(static_cast<long>(B) * 3 * in_size * in_size);
        for (int j = 0; j < B; ++j) {
            image.segment(static_cast<long>(j) * 3 * in_size * in_size, 3L * in_size * in_size) =
                batch[static_cast<std::size_t>(j)].pixels.cast<S>();
        }
        auto input = Tensor<S>::from_array({B, 3, in_size, in_size}, std::move(image));

        std::map<int, ScaleTargets<S>> targets;
        std::map<int, ScaleTargets<S>> by_stride;
        for (int s : weights.scales) {
            const int stride = supervision_stride(s);
            auto it = by_stride.find(stride);
            if (it == by_stride.end()) {
                std::vector<GroundTruthMaps> gts;
                gts.reserve(batch.size());
                for (const Sample& sample : batch) {
                    gts.push_back(encode_ground_truth(sample.annotations, in_size, stride, tspec.shrink));
                }
                it = by_stride.emplace(stride, to_targets<S>(gts)).first;
            }
            targets[s] = it->second;
        }

        auto result = forward_detector(input, net_spec, params);
        auto breakdown = multiscale_loss(result.supervision, targets, weights);
        backward(breakdown.total);
        const double lr = lr_schedule(iter, tspec);
        adam_step(params, state, lr, tspec);
        params.zero_grads();

        std::string row = std::to_string(iter) + "," + detail::csv_double(lr) + "," +
                          detail::csv_double(breakdown.total_value);
        for (int s : weights.scales) {
            const auto& terms = breakdown.per_scale.at(s);
            row += "," + detail::csv_double(terms[0]);
            row += "," + detail::csv_double(terms[1]);
            row += "," + detail::csv_double(terms[2]);
        }
        row += "\n";
        csv += row;
        if (metrics_file.is_open()) metrics_file << row;
        out.total_losses.push_back(breakdown.total_value);
        if (opts.on_iteration) opts.on_iteration(iter, breakdown, lr);

        const long done = iter + 1;
        if (!opts.checkpoint_dir.empty() && tspec.checkpoint_every > 0 &&
            done % tspec.checkpoint_every == 0 && done < tspec.max_iters) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_%06ld.bin", done);
            save_checkpoint(make_checkpoint(done),
                            (std::filesystem::path(opts.checkpoint_dir) / name).string());
        }
        if (opts.stop_when && opts.stop_when(iter, breakdown)) {
            out.checkpoint = make_checkpoint(done);
            break;
        }
    }

    if (!out.checkpoint.params.entries().size()) {
        out.checkpoint = make_checkpoint(std::max(start_iter, tspec.max_iters));
    }
    if (!opts.checkpoint_dir.empty()) {
        save_checkpoint(out.checkpoint,
                        (std::filesystem::path(opts.checkpoint_dir) / "checkpoint_final.bin").string());
    }
    out.metrics_csv = std::move(csv);
    return out;
}

}  // namespace rotdet
