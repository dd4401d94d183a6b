#pragma once

#include "glassdet/backbone.hpp"
#include "glassdet/ccm.hpp"
#include "glassdet/daa.hpp"

#include <json.hpp>

#include <array>
#include <optional>
#include <vector>

namespace glassdet {

struct NetworkConfig {
    BackboneConfig backbone;
    std::array<int, 4> c_ctx{16, 32, 64, 128};  // per stage, defaults to the rgb widths
    std::vector<int> daa_stages{4, 3};
    std::array<double, 4> loss_weights{1.0, 1.0, 1.0, 1.0};  // indexed by stage-1
    int attention_cap = kDefaultAttentionCap;
    bool rgb_only = false;  // ablation variant: depth branch and DAA disabled

    bool has_daa(int stage) const {
        if (rgb_only) return false;
        for (int s : daa_stages)
            if (s == stage) return true;
        return false;
    }

    void validate() const {
        for (int s : daa_stages)
            if (s < 1 || s > 4) throw ConfigError("daa_stages must lie in 1..4");
        for (int c : c_ctx)
            if (c < 1) throw ConfigError("c_ctx entries must be positive");
    }

    /// Paper-recipe profile: Table-3 depth backbone, 384 input.
    static NetworkConfig paper() { return NetworkConfig{}; }

    /// Small profile every acceptance test trains at desk scale.
    static NetworkConfig toy() {
        NetworkConfig cfg;
        cfg.backbone.rgb_channels = {8, 16, 24, 32};
        cfg.backbone.depth_channels = {4, 8, 12, 16, 24};
        cfg.backbone.input_size = 96;
        cfg.c_ctx = {8, 16, 24, 32};
        return cfg;
    }
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
    j = nlohmann::json{{"rgb_channels", c.backbone.rgb_channels},
                       {"depth_channels", c.backbone.depth_channels},
                       {"input_size", c.backbone.input_size},
                       {"c_ctx", c.c_ctx},
                       {"daa_stages", c.daa_stages},
                       {"loss_weights", c.loss_weights},
                       {"attention_cap", c.attention_cap},
                       {"rgb_only", c.rgb_only}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
    j.at("rgb_channels").get_to(c.backbone.rgb_channels);
    j.at("depth_channels").get_to(c.backbone.depth_channels);
    j.at("input_size").get_to(c.backbone.input_size);
    j.at("c_ctx").get_to(c.c_ctx);
    j.at("daa_stages").get_to(c.daa_stages);
    j.at("loss_weights").get_to(c.loss_weights);
    j.at("attention_cap").get_to(c.attention_cap);
    j.at("rgb_only").get_to(c.rgb_only);
}

/// Per-stage output: full-resolution raw logits plus the enhanced features
/// handed to the next (earlier) stage.
struct StagePrediction {
    int stage = 0;
    Tensor logits_full;   // [B,1,H_in,W_in], pre-sigmoid
    Tensor features_out;  // [B,C_ctx,H_s,W_s]
};

struct Decoder {
    ConvBR conv;  // 3x3
    Conv2d head;  // 1x1 -> 1 logit channel

    Decoder() = default;
    Decoder(int channels, std::mt19937_64& rng)
        : conv(channels, channels, 3, rng, 1, 1), head(channels, 1, 1, rng) {}

    Tensor operator()(const Tensor& x, Mode mode) { return head(conv(x, mode)); }

    void collect(const std::string& prefix, StateDict& sd) const {
        conv.collect(prefix + ".conv", sd);
        head.collect(prefix + ".head", sd);
    }
};

/// Four-stage top-down refinement network: CCM at every stage, DAA at the
/// configured (late) stages, one decoder per stage.
class GlassNet {
  public:
    NetworkConfig cfg;
    RgbBackbone rgb_backbone;
    DepthBackbone depth_backbone;
    std::array<CcmModule, 4> ccm;            // [s-1]
    std::array<std::optional<DaaModule>, 4> daa;  // engaged per cfg.daa_stages
    std::array<Decoder, 4> decoders;         // [s-1]
    std::array<ConvBR, 3> cross_proj;        // into stage s, [s-1] for s in 1..3

    GlassNet() = default;

    GlassNet(NetworkConfig config, std::mt19937_64& rng) : cfg(std::move(config)) {
        cfg.validate();
        rgb_backbone = RgbBackbone(cfg.backbone, rng);
        if (!cfg.rgb_only) depth_backbone = DepthBackbone(cfg.backbone, rng);
        for (int s = 1; s <= 4; ++s) {
            const int c = cfg.c_ctx[static_cast<size_t>(s - 1)];
            const int rgb_ch = cfg.backbone.rgb_channels[static_cast<size_t>(s - 1)];
            if (cfg.rgb_only) {
                ccm[static_cast<size_t>(s - 1)] = CcmModule::make_rgb_only(rgb_ch, c, rng);
            } else {
                const int depth_ch = cfg.backbone.depth_channels[static_cast<size_t>(s)];
                ccm[static_cast<size_t>(s - 1)] = CcmModule(rgb_ch, depth_ch, c, rng);
            }
            decoders[static_cast<size_t>(s - 1)] = Decoder(c, rng);
            if (cfg.has_daa(s))
                daa[static_cast<size_t>(s - 1)] = DaaModule(c, rng, cfg.attention_cap);
        }
        for (int s = 1; s <= 3; ++s) {
            const int from_c = cfg.c_ctx[static_cast<size_t>(s)];      // stage s+1 features
            const int to_c = cfg.backbone.rgb_channels[static_cast<size_t>(s - 1)];
            cross_proj[static_cast<size_t>(s - 1)] = ConvBR(from_c, to_c, 1, rng);
        }
    }

    /// Returns the four stage predictions in refinement order, stage4 first.
    std::vector<StagePrediction> forward(const Tensor& rgb, const Tensor& depth, const Tensor& dm,
                                         Mode mode) {
        if (!cfg.rgb_only) check_depth_missing_map(dm);
        const int h_in = rgb.dim(2), w_in = rgb.dim(3);
        FeaturePyramid rgb_pyr = rgb_backbone(rgb, mode);
        FeaturePyramid depth_pyr;
        if (!cfg.rgb_only) depth_pyr = depth_backbone(depth, mode);

        std::vector<StagePrediction> preds;
        preds.reserve(4);
        Tensor carried;
        for (int s = 4; s >= 1; --s) {
            Tensor x_rgb = rgb_pyr.stages[static_cast<size_t>(s - 1)];
            if (s < 4) {
                Tensor proj = cross_proj[static_cast<size_t>(s - 1)](carried, mode);
                proj = resize_bilinear(proj, x_rgb.dim(2), x_rgb.dim(3));
                x_rgb = x_rgb + proj;
            }
            CcmOutput co =
                ccm[static_cast<size_t>(s - 1)](x_rgb, depth_pyr.stages[static_cast<size_t>(s - 1)], mode);
            Tensor enhanced = co.crc;
            if (cfg.has_daa(s)) {
                const Tensor dm_s = resize_nearest(dm, co.crc.dim(2), co.crc.dim(3));
                enhanced = (*daa[static_cast<size_t>(s - 1)])(co.crc, co.y_rgb, co.y_depth, dm_s, mode);
            }
            Tensor logits = decoders[static_cast<size_t>(s - 1)](enhanced, mode);
            StagePrediction p;
            p.stage = s;
            p.logits_full = resize_bilinear(logits, h_in, w_in);
            p.features_out = enhanced;
            preds.push_back(std::move(p));
            carried = enhanced;
        }
        return preds;
    }

    /// Stage-1 probability map, eval mode, no graph.
    Tensor predict(const Tensor& rgb, const Tensor& depth, const Tensor& dm) {
        NoGradGuard ng;
        auto preds = forward(rgb, depth, dm, Mode::eval);
        return sigmoid(preds.back().logits_full);
    }

    StateDict state_dict() const {
        StateDict sd;
        rgb_backbone.collect(sd);
        if (!cfg.rgb_only) depth_backbone.collect(sd);
        for (int s = 1; s <= 4; ++s) {
            ccm[static_cast<size_t>(s - 1)].collect("ccm.stage" + std::to_string(s), sd);
            if (daa[static_cast<size_t>(s - 1)])
                daa[static_cast<size_t>(s - 1)]->collect("daa.stage" + std::to_string(s), sd);
            decoders[static_cast<size_t>(s - 1)].collect("decoder.stage" + std::to_string(s), sd);
        }
        for (int s = 1; s <= 3; ++s)
            cross_proj[static_cast<size_t>(s - 1)].collect(
                "cross.stage" + std::to_string(s + 1) + "to" + std::to_string(s), sd);
        return sd;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> ps;
        for (const auto& [name, t] : state_dict().params) ps.push_back(t);
        return ps;
    }

    void freeze_daa_gamma() {
        for (auto& d : daa)
            if (d) d->freeze_gamma();
    }
};

/// Soft IoU loss 1 - (sum(p*g)+1)/(sum(p)+sum(g)-sum(p*g)+1) on probabilities.
inline Tensor soft_iou_loss(const Tensor& logits, const Tensor& gt) {
    const Tensor p = sigmoid(logits);
    const Tensor inter = sum_all(p * gt);
    const Tensor uni = sum_all(p) + sum_all(gt) - inter;
    return 1.0 - (inter + 1.0) / (uni + 1.0);
}

/// Sum over stages of BCE + soft IoU, weighted per stage.
inline Tensor hybrid_loss(const std::vector<StagePrediction>& preds, const Tensor& gt,
                          const std::array<double, 4>& stage_weights = {1.0, 1.0, 1.0, 1.0}) {
    for (double g : gt.data())
        if (g != 0.0 && g != 1.0) throw ValueError("hybrid_loss: ground truth must be binary");
    Tensor total = Tensor::scalar(0.0);
    for (const StagePrediction& p : preds) {
        if (p.logits_full.shape() != gt.shape())
            throw ShapeError("hybrid_loss: prediction/gt shape mismatch at stage " +
                             std::to_string(p.stage));
        const double w = stage_weights[static_cast<size_t>(p.stage - 1)];
        if (w == 0.0) continue;
        total = total + w * (bce_with_logits_mean(p.logits_full, gt) +
                             soft_iou_loss(p.logits_full, gt));
    }
    return total;
}

}  // namespace glassdet
