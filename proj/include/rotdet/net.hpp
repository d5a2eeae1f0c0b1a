#pragma once

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "rotdet/ops.hpp"
#include "rotdet/rng.hpp"
#include "rotdet/tensor.hpp"

namespace rotdet {

enum class FusionKind { unweighted, complementary_weighted };

inline const char* fusion_name(FusionKind k) {
    return k == FusionKind::unweighted ? "UF" : "CWF";
}

// Declarative network configuration. backbone_channels are the widths of the
// feature maps tapped at strides 4, 8, 16 and 32.
struct NetworkSpec {
    std::array<int, 4> backbone_channels{8, 16, 32, 64};
    FusionKind fusion = FusionKind::complementary_weighted;
    std::vector<int> head_scales{1, 2, 3, 4};
    double dmax = 64.0;
    int input_size = 64;
};

inline void validate(const NetworkSpec& spec) {
    if (spec.input_size <= 0 || spec.input_size % 32 != 0) {
        throw ConfigError("network.input_size must be a positive multiple of 32");
    }
    if (!(spec.dmax > 0.0)) throw ConfigError("network.dmax must be positive");
    for (int c : spec.backbone_channels) {
        if (c <= 0) throw ConfigError("network.backbone_channels must be positive");
    }
    if (spec.head_scales.empty()) throw ConfigError("network.head_scales must not be empty");
    bool has_final = false;
    for (int s : spec.head_scales) {
        if (s < 1 || s > 4) throw ConfigError("network.head_scales entries must be in 1..4");
        if (s == 4) has_final = true;
    }
    if (!has_final) throw ConfigError("network.head_scales must contain scale 4");
}

// Stride of the map that supervises each loss scale: heads after fusion
// blocks 1..3 sit at strides 16/8/4, and the final head (scale 4) is trained
// at its native stride 4 before the x4 upsample.
inline int supervision_stride(int scale) {
    switch (scale) {
        case 1: return 16;
        case 2: return 8;
        case 3: return 4;
        case 4: return 4;
        default: throw ConfigError("unknown supervision scale " + std::to_string(scale));
    }
}

// The per-scale prediction triple. Spatial extent is input_size / stride.
template <class S>
struct DetectionMaps {
    Tensor<S> score;     // B x 1 x h x w, in (0,1)
    Tensor<S> rotation;  // B x 1 x h x w, radians in (-pi/2, pi/2)
    Tensor<S> distance;  // B x 4 x h x w, (top,right,bottom,left), input pixels
    int stride = 1;
};

// Named parameter store with deterministic (insertion) iteration order.
template <class S>
class ParamSet {
  public:
    Tensor<S>& add(const std::string& name, Tensor<S> t) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(t));
        return entries_.back().second;
    }

    const Tensor<S>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("missing parameter: " + name);
        return entries_[it->second].second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::pair<std::string, Tensor<S>>>& entries() const { return entries_; }

    long total_size() const {
        long n = 0;
        for (const auto& [name, t] : entries_) n += t.size();
        return n;
    }

    void zero_grads() {
        for (auto& [name, t] : entries_) t.zero_grad();
    }

  private:
    std::vector<std::pair<std::string, Tensor<S>>> entries_;
    std::map<std::string, std::size_t> index_;
};

namespace detail {

// He-style uniform initialization scaled by fan-in; biases start at zero.
template <class S>
void add_conv(ParamSet<S>& params, Rng& rng, const std::string& prefix, int out_ch, int in_ch,
              int k) {
    const long fan_in = static_cast<long>(in_ch) * k * k;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    ArrayX<S> w(static_cast<long>(out_ch) * fan_in);
    for (long i = 0; i < w.size(); ++i) w[i] = static_cast<S>(rng.uniform(-bound, bound));
    params.add(prefix + ".weight", Tensor<S>::from_array({out_ch, in_ch, k, k}, std::move(w), true));
    params.add(prefix + ".bias", Tensor<S>::zeros({out_ch}, true));
}

}  // namespace detail

// Channel widths of the three fusion stages and the head attached at each
// scale. Stage k merges the running features with the lateral tap and takes
// that tap's width.
struct FusionWidths {
    int reduced;               // width of the 1x1-reduced coarsest features
    std::array<int, 3> stage;  // widths after fusion blocks 1..3
};

inline FusionWidths fusion_widths(const NetworkSpec& spec) {
    const auto& bc = spec.backbone_channels;
    return FusionWidths{bc[2], {bc[2], bc[1], bc[0]}};
}

template <class S>
ParamSet<S> init_params(const NetworkSpec& spec, Rng& rng) {
    validate(spec);
    ParamSet<S> params;
    const auto& bc = spec.backbone_channels;
    const std::array<int, 5> stage_w{bc[0], bc[0], bc[1], bc[2], bc[3]};
    int in_ch = 3;
    for (int i = 0; i < 5; ++i) {
        const std::string prefix = "backbone.stage" + std::to_string(i);
        detail::add_conv(params, rng, prefix + ".conv1", stage_w[static_cast<std::size_t>(i)], in_ch, 3);
        detail::add_conv(params, rng, prefix + ".conv2", stage_w[static_cast<std::size_t>(i)],
                         stage_w[static_cast<std::size_t>(i)], 3);
        in_ch = stage_w[static_cast<std::size_t>(i)];
    }

    const FusionWidths fw = fusion_widths(spec);
    detail::add_conv(params, rng, "fuse.reduce", fw.reduced, bc[3], 1);
    const std::array<int, 3> lateral{bc[2], bc[1], bc[0]};
    int u_ch = fw.reduced;
    for (int k = 0; k < 3; ++k) {
        const std::string prefix = "fuse.block" + std::to_string(k + 1);
        const int f_ch = lateral[static_cast<std::size_t>(k)];
        const int out_ch = fw.stage[static_cast<std::size_t>(k)];
        if (spec.fusion == FusionKind::complementary_weighted) {
            detail::add_conv(params, rng, prefix + ".cweight", f_ch, u_ch, 1);
        }
        detail::add_conv(params, rng, prefix + ".reduce", out_ch, u_ch + f_ch, 1);
        detail::add_conv(params, rng, prefix + ".merge", out_ch, out_ch, 3);
        u_ch = out_ch;
    }
    detail::add_conv(params, rng, "fuse.final", fw.stage[2], fw.stage[2], 3);

    const std::array<int, 4> head_w{fw.stage[0], fw.stage[1], fw.stage[2], fw.stage[2]};
    for (int s = 1; s <= 4; ++s) {
        bool wanted = false;
        for (int hs : spec.head_scales) wanted = wanted || (hs == s);
        if (!wanted) continue;
        const std::string prefix = "head.scale" + std::to_string(s);
        const int w = head_w[static_cast<std::size_t>(s - 1)];
        detail::add_conv(params, rng, prefix + ".score", 1, w, 1);
        detail::add_conv(params, rng, prefix + ".rotation", 1, w, 1);
        detail::add_conv(params, rng, prefix + ".distance", 4, w, 1);
    }
    return params;
}

// Four feature taps at strides 4, 8, 16, 32. Every stage is two 3x3
// convolutions with relu followed by 2x2 max pooling; the first (stem) stage
// has no tap.
template <class S>
std::array<Tensor<S>, 4> backbone_forward(const Tensor<S>& image, const NetworkSpec& spec,
                                          const ParamSet<S>& params) {
    detail::require_rank(image, 4, "backbone_forward");
    detail::require_cfg(image.dim(1) == 3, "backbone_forward: expected a 3-channel image");
    detail::require_cfg(image.dim(2) % 32 == 0 && image.dim(3) % 32 == 0,
                        "backbone_forward: spatial extent must be divisible by 32");
    std::array<Tensor<S>, 4> taps;
    Tensor<S> x = image;
    for (int i = 0; i < 5; ++i) {
        const std::string prefix = "backbone.stage" + std::to_string(i);
        x = relu(conv2d_same(x, params.at(prefix + ".conv1.weight"), params.at(prefix + ".conv1.bias")));
        x = relu(conv2d_same(x, params.at(prefix + ".conv2.weight"), params.at(prefix + ".conv2.bias")));
        x = maxpool2(x);
        if (i >= 1) taps[static_cast<std::size_t>(i - 1)] = x;
    }
    return taps;
}

template <class S>
struct FusionBlockParams {
    Tensor<S> reduce_w, reduce_b;    // 1x1 channel reduction after concat
    Tensor<S> merge_w, merge_b;      // 3x3 combine
    Tensor<S> cweight_w, cweight_b;  // 1x1 complementary weighting (CWF only)
};

// Plain fusion: upsample the coarser features, concatenate the lateral ones,
// then 1x1 + 3x3 convolutions (both with relu).
template <class S>
Tensor<S> uf_block(const Tensor<S>& u_prev, const Tensor<S>& f_cur, const FusionBlockParams<S>& p) {
    detail::require_cfg(f_cur.dim(2) == 2 * u_prev.dim(2) && f_cur.dim(3) == 2 * u_prev.dim(3),
                        "fusion block: lateral extent must be twice the merged extent");
    auto u = unpool2(u_prev);
    auto cat = concat_channels(u, f_cur);
    auto y = relu(conv2d_same(cat, p.reduce_w, p.reduce_b));
    return relu(conv2d_same(y, p.merge_w, p.merge_b));
}

// Complementary weighting: the lateral features are scaled elementwise by
// 1 - Conv1x1(upsampled coarse features) before concatenation, so the fine
// scale contributes what the coarse scale lacks. With a zeroed weighting
// conv this reduces exactly to uf_block.
template <class S>
Tensor<S> cwf_block(const Tensor<S>& u_prev, const Tensor<S>& f_cur, const FusionBlockParams<S>& p) {
    detail::require_cfg(f_cur.dim(2) == 2 * u_prev.dim(2) && f_cur.dim(3) == 2 * u_prev.dim(3),
                        "fusion block: lateral extent must be twice the merged extent");
    auto u = unpool2(u_prev);
    auto complement = scalar_affine(conv2d_same(u, p.cweight_w, p.cweight_b), S(-1), S(1));
    auto weighted = mul(f_cur, complement);
    auto cat = concat_channels(u, weighted);
    auto y = relu(conv2d_same(cat, p.reduce_w, p.reduce_b));
    return relu(conv2d_same(y, p.merge_w, p.merge_b));
}

template <class S>
struct HeadParams {
    Tensor<S> score_w, score_b;
    Tensor<S> rotation_w, rotation_b;
    Tensor<S> distance_w, distance_b;
};

// 1x1 convolutions into 1+1+4 channels: sigmoid score, tanh*(pi/2) rotation,
// sigmoid*dmax distances.
template <class S>
DetectionMaps<S> output_head(const Tensor<S>& features, double dmax, const HeadParams<S>& p,
                             int stride) {
    DetectionMaps<S> m;
    m.score = sigmoid(conv2d_same(features, p.score_w, p.score_b));
    m.rotation = scalar_affine(tanh(conv2d_same(features, p.rotation_w, p.rotation_b)),
                               static_cast<S>(std::numbers::pi / 2.0), S(0));
    m.distance = scalar_affine(sigmoid(conv2d_same(features, p.distance_w, p.distance_b)),
                               static_cast<S>(dmax), S(0));
    m.stride = stride;
    return m;
}

template <class S>
struct ForwardResult {
    // Per requested scale; the scale-4 entry is the final output upsampled to
    // stride 1 (input resolution).
    std::map<int, DetectionMaps<S>> maps;
    // Same heads at their native strides (scale 4 at stride 4); this is what
    // training losses consume.
    std::map<int, DetectionMaps<S>> supervision;
};

namespace detail {

template <class S>
FusionBlockParams<S> block_params(const ParamSet<S>& params, const NetworkSpec& spec, int k) {
    const std::string prefix = "fuse.block" + std::to_string(k);
    FusionBlockParams<S> p;
    p.reduce_w = params.at(prefix + ".reduce.weight");
    p.reduce_b = params.at(prefix + ".reduce.bias");
    p.merge_w = params.at(prefix + ".merge.weight");
    p.merge_b = params.at(prefix + ".merge.bias");
    if (spec.fusion == FusionKind::complementary_weighted) {
        p.cweight_w = params.at(prefix + ".cweight.weight");
        p.cweight_b = params.at(prefix + ".cweight.bias");
    }
    return p;
}

template <class S>
HeadParams<S> head_params(const ParamSet<S>& params, int scale) {
    const std::string prefix = "head.scale" + std::to_string(scale);
    HeadParams<S> p;
    p.score_w = params.at(prefix + ".score.weight");
    p.score_b = params.at(prefix + ".score.bias");
    p.rotation_w = params.at(prefix + ".rotation.weight");
    p.rotation_b = params.at(prefix + ".rotation.bias");
    p.distance_w = params.at(prefix + ".distance.weight");
    p.distance_b = params.at(prefix + ".distance.bias");
    return p;
}

}  // namespace detail

// Full forward pass: backbone taps, iterative coarse-to-fine fusion (three
// blocks), a 3x3 conv before the final head, and a x4 nearest upsample of the
// final maps to input resolution. Intermediate heads sit after each fusion
// block at strides 16, 8 and 4 for scales 1, 2 and 3.
template <class S>
ForwardResult<S> forward_detector(const Tensor<S>& image, const NetworkSpec& spec,
                                  const ParamSet<S>& params) {
    validate(spec);
    const auto taps = backbone_forward(image, spec, params);

    auto wants = [&spec](int s) {
        for (int hs : spec.head_scales)
            if (hs == s) return true;
        return false;
    };

    ForwardResult<S> result;
    Tensor<S> h = relu(conv2d_same(taps[3], params.at("fuse.reduce.weight"),
                                   params.at("fuse.reduce.bias")));
    const std::array<int, 3> block_strides{16, 8, 4};
    for (int k = 1; k <= 3; ++k) {
        const Tensor<S>& lateral = taps[static_cast<std::size_t>(3 - k)];
        const auto bp = detail::block_params(params, spec, k);
        h = spec.fusion == FusionKind::complementary_weighted ? cwf_block(h, lateral, bp)
                                                              : uf_block(h, lateral, bp);
        const int scale = k;  // heads after blocks 1..3 supervise scales 1..3
        if (wants(scale)) {
            const int stride = block_strides[static_cast<std::size_t>(k - 1)];
            auto m = output_head(h, spec.dmax, detail::head_params(params, scale), stride);
            result.supervision[scale] = m;
            result.maps[scale] = m;
        }
    }

    auto fin = relu(conv2d_same(h, params.at("fuse.final.weight"), params.at("fuse.final.bias")));
    auto final_native = output_head(fin, spec.dmax, detail::head_params(params, 4), 4);
    result.supervision[4] = final_native;
    DetectionMaps<S> full;
    full.score = unpool2(unpool2(final_native.score));
    full.rotation = unpool2(unpool2(final_native.rotation));
    full.distance = unpool2(unpool2(final_native.distance));
    full.stride = 1;
    result.maps[4] = full;
    return result;
}

}  // namespace rotdet
