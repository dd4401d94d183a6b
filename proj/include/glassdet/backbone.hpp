#pragma once

#include "glassdet/nn.hpp"

#include <array>
#include <vector>

namespace glassdet {

struct BackboneConfig {
    std::array<int, 4> rgb_channels{16, 32, 64, 128};
    std::array<int, 5> depth_channels{8, 16, 32, 64, 128};
    int input_size = 384;
};

/// Four feature maps at strides 4, 8, 16, 32 relative to the input.
struct FeaturePyramid {
    std::array<Tensor, 4> stages;
};

inline void check_backbone_input(const Tensor& x, int channels, const char* who) {
    if (x.rank() != 4 || x.dim(1) != channels)
        throw ShapeError(std::string(who) + ": expected [B," + std::to_string(channels) +
                         ",H,W], got " + shape_str(x.shape()));
    if (x.dim(2) != x.dim(3))
        throw ConfigError(std::string(who) + ": input must be square, got " + shape_str(x.shape()));
    if (x.dim(2) % 32 != 0)
        throw ConfigError(std::string(who) + ": input size " + std::to_string(x.dim(2)) +
                          " not divisible by 32");
}

/// RGB feature extractor. Each stage halves the resolution with a stride-2
/// conv_br followed by a stride-1 conv_br; stage 1 additionally max-pools to
/// reach stride 4.
struct RgbBackbone {
    std::array<ConvBR, 4> down;    // stride-2 entry conv per stage
    std::array<ConvBR, 4> refine;  // stride-1 conv per stage

    RgbBackbone() = default;
    RgbBackbone(const BackboneConfig& cfg, std::mt19937_64& rng) {
        int in_ch = 3;
        for (int s = 0; s < 4; ++s) {
            const int out_ch = cfg.rgb_channels[static_cast<size_t>(s)];
            down[static_cast<size_t>(s)] = ConvBR(in_ch, out_ch, 3, rng, 2, 1);
            refine[static_cast<size_t>(s)] = ConvBR(out_ch, out_ch, 3, rng, 1, 1);
            in_ch = out_ch;
        }
    }

    FeaturePyramid operator()(const Tensor& x, Mode mode) {
        check_backbone_input(x, 3, "rgb_backbone");
        FeaturePyramid pyr;
        Tensor h = x;
        for (int s = 0; s < 4; ++s) {
            h = refine[static_cast<size_t>(s)](down[static_cast<size_t>(s)](h, mode), mode);
            if (s == 0) h = max_pool_2x2(h);
            pyr.stages[static_cast<size_t>(s)] = h;
        }
        return pyr;
    }

    void collect(StateDict& sd) const {
        for (int s = 0; s < 4; ++s) {
            const std::string p = "rgb_backbone.stage" + std::to_string(s + 1);
            down[static_cast<size_t>(s)].collect(p + ".down", sd);
            refine[static_cast<size_t>(s)].collect(p + ".refine", sd);
        }
    }

    int64_t param_count() const {
        int64_t n = 0;
        StateDict sd;
        collect(const_cast<StateDict&>(sd));
        for (const auto& [name, t] : sd.params) n += t.numel();
        return n;
    }
};

/// Depth feature extractor: five stages, each one 3x3 conv-BR (stride 1,
/// pad 1) followed by a 2x2 max pool. Channels 8/16/32/64/128 in the
/// paper-faithful profile.
struct DepthBackbone {
    std::array<ConvBR, 5> blocks;

    DepthBackbone() = default;
    DepthBackbone(const BackboneConfig& cfg, std::mt19937_64& rng) {
        int in_ch = 1;
        for (int s = 0; s < 5; ++s) {
            blocks[static_cast<size_t>(s)] =
                ConvBR(in_ch, cfg.depth_channels[static_cast<size_t>(s)], 3, rng, 1, 1);
            in_ch = cfg.depth_channels[static_cast<size_t>(s)];
        }
    }

    /// All five stage outputs (after each stage's pooling).
    std::vector<Tensor> stage_outputs(const Tensor& d, Mode mode) {
        check_backbone_input(d, 1, "depth_backbone");
        std::vector<Tensor> outs;
        outs.reserve(5);
        Tensor h = d;
        for (int s = 0; s < 5; ++s) {
            h = max_pool_2x2(blocks[static_cast<size_t>(s)](h, mode));
            outs.push_back(h);
        }
        return outs;
    }

    /// The last four stage outputs, spatially aligned with the RGB pyramid.
    FeaturePyramid operator()(const Tensor& d, Mode mode) {
        const std::vector<Tensor> outs = stage_outputs(d, mode);
        FeaturePyramid pyr;
        for (int s = 0; s < 4; ++s) pyr.stages[static_cast<size_t>(s)] = outs[static_cast<size_t>(s) + 1];
        return pyr;
    }

    void collect(StateDict& sd) const {
        for (int s = 0; s < 5; ++s)
            blocks[static_cast<size_t>(s)].collect("depth_backbone.stage" + std::to_string(s + 1),
                                                   sd);
    }

    int64_t param_count() const {
        int64_t n = 0;
        StateDict sd;
        collect(const_cast<StateDict&>(sd));
        for (const auto& [name, t] : sd.params) n += t.numel();
        return n;
    }
};

}  // namespace glassdet
