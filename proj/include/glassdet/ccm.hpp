#pragma once

#include "glassdet/nn.hpp"

#include <array>
#include <utility>

namespace glassdet {

inline constexpr std::array<int, 4> kContextRates{1, 2, 4, 8};
inline constexpr std::array<std::pair<int, int>, 6> kContextPairs{
    {{1, 2}, {1, 4}, {1, 8}, {2, 4}, {2, 8}, {4, 8}}};

/// Multi-scale context features, one per dilation rate.
struct ContextSet {
    std::array<Tensor, 4> features;  // rates 1, 2, 4, 8
};

/// The six pairwise fusions C_ri + C_rj in the fixed (1,2),(1,4),(1,8),
/// (2,4),(2,8),(4,8) order.
struct RichContextPairs {
    std::array<Tensor, 6> pairs;
};

inline RichContextPairs rich_pairs(const ContextSet& cs) {
    RichContextPairs rc;
    for (size_t p = 0; p < kContextPairs.size(); ++p) {
        int ii = 0, ij = 0;
        for (int r = 0; r < 4; ++r) {
            if (kContextRates[static_cast<size_t>(r)] == kContextPairs[p].first) ii = r;
            if (kContextRates[static_cast<size_t>(r)] == kContextPairs[p].second) ij = r;
        }
        rc.pairs[p] = cs.features[static_cast<size_t>(ii)] + cs.features[static_cast<size_t>(ij)];
    }
    return rc;
}

/// 1x1 projection to the context width followed by four parallel atrous
/// conv_br branches (pad = rate, shape preserved).
struct ContextPyramid {
    ConvBR project;
    std::array<ConvBR, 4> atrous;

    ContextPyramid() = default;
    ContextPyramid(int in_ch, int c_ctx, std::mt19937_64& rng) : project(in_ch, c_ctx, 1, rng) {
        for (size_t r = 0; r < 4; ++r) {
            const int rate = kContextRates[r];
            atrous[r] = ConvBR(c_ctx, c_ctx, 3, rng, 1, rate, rate);
        }
    }

    ContextSet operator()(const Tensor& x, Mode mode) {
        const Tensor p = project(x, mode);
        ContextSet cs;
        for (size_t r = 0; r < 4; ++r) cs.features[r] = atrous[r](p, mode);
        return cs;
    }

    void collect(const std::string& prefix, StateDict& sd) const {
        project.collect(prefix + ".project", sd);
        for (size_t r = 0; r < 4; ++r)
            atrous[r].collect(prefix + ".atrous" + std::to_string(kContextRates[r]), sd);
    }
};

/// CNA + CXA applied to the 6C aggregated rich context, then a 1x1 conv_br
/// reduction back to the context width.
struct MiningHead {
    AttentionHead cna;
    AttentionHead cxa;
    ConvBR reduce;

    MiningHead() = default;
    MiningHead(int c_ctx, std::mt19937_64& rng)
        : cna(6 * c_ctx, 6 * c_ctx, rng), cxa(6 * c_ctx, 6, rng), reduce(6 * c_ctx, c_ctx, 1, rng) {}

    Tensor operator()(const Tensor& arc, Mode mode) {
        const Tensor squeezed = global_avg_pool(arc);
        const Tensor w_cna = cna.weights(squeezed);
        const Tensor w_cxa = cxa.weights(squeezed);
        const int group = arc.dim(1) / 6;
        return reduce(arc * w_cna * repeat_channels(w_cxa, group), mode);
    }

    void collect(const std::string& prefix, StateDict& sd) const {
        cna.collect(prefix + ".cna", sd);
        cxa.collect(prefix + ".cxa", sd);
        reduce.collect(prefix + ".reduce", sd);
    }
};

/// Context mining for one modality. Weights are never shared across
/// modalities.
struct SingleModalMining {
    ContextPyramid pyramid;
    MiningHead head;

    SingleModalMining() = default;
    SingleModalMining(int in_ch, int c_ctx, std::mt19937_64& rng)
        : pyramid(in_ch, c_ctx, rng), head(c_ctx, rng) {}

    struct Result {
        Tensor y;
        RichContextPairs pairs;
    };

    Result operator()(const Tensor& x, Mode mode) {
        const ContextSet cs = pyramid(x, mode);
        RichContextPairs rc = rich_pairs(cs);
        const Tensor arc = concat_channels({rc.pairs[0], rc.pairs[1], rc.pairs[2], rc.pairs[3],
                                            rc.pairs[4], rc.pairs[5]});
        return {head(arc, mode), std::move(rc)};
    }

    void collect(const std::string& prefix, StateDict& sd) const {
        pyramid.collect(prefix + ".pyramid", sd);
        head.collect(prefix + ".head", sd);
    }
};

/// Explicit multi-modal mining over the two modalities' rich-context pairs:
/// each pair sum goes through a 3x3 conv_br dilated by the pair's larger rate.
struct ExplicitMining {
    std::array<ConvBR, 6> pair_convs;
    MiningHead head;

    ExplicitMining() = default;
    ExplicitMining(int c_ctx, std::mt19937_64& rng) : head(c_ctx, rng) {
        for (size_t p = 0; p < 6; ++p) {
            const int rj = kContextPairs[p].second;
            pair_convs[p] = ConvBR(c_ctx, c_ctx, 3, rng, 1, rj, rj);
        }
    }

    Tensor operator()(const RichContextPairs& rgb, const RichContextPairs& depth, Mode mode) {
        std::vector<Tensor> fused;
        fused.reserve(6);
        for (size_t p = 0; p < 6; ++p) fused.push_back(pair_convs[p](rgb.pairs[p] + depth.pairs[p], mode));
        return head(concat_channels(fused), mode);
    }

    void collect(const std::string& prefix, StateDict& sd) const {
        for (size_t p = 0; p < 6; ++p)
            pair_convs[p].collect(prefix + ".pair" + std::to_string(kContextPairs[p].first) +
                                      std::to_string(kContextPairs[p].second),
                                  sd);
        head.collect(prefix + ".head", sd);
    }
};

struct CcmOutput {
    Tensor crc;
    Tensor y_rgb, y_depth, y_imp, y_exp;
    RichContextPairs pairs_rgb, pairs_depth;
};

/// Cross-modal context mining: four mining submodules plus adaptive selection
/// over their concatenated outputs. In the rgb-only ablation variant only the
/// RGB context mining submodule exists and its output stands in for the CRC.
struct CcmModule {
    ConvBR depth_proj;  // depth backbone width -> c_ctx
    SingleModalMining rgb_mining;
    SingleModalMining depth_mining;
    ConvBR implicit_fuse;  // concat(rgb, projected depth) -> c_ctx
    SingleModalMining implicit_mining;
    ExplicitMining explicit_mining;
    Conv2d select_reduce;  // plain 1x1, 4*c_ctx -> c_ctx
    AttentionHead select_cna;
    int c_ctx = 0;
    bool rgb_only = false;

    CcmModule() = default;
    CcmModule(int rgb_ch, int depth_ch, int c_ctx_, std::mt19937_64& rng)
        : depth_proj(depth_ch, c_ctx_, 1, rng),
          rgb_mining(rgb_ch, c_ctx_, rng),
          depth_mining(c_ctx_, c_ctx_, rng),
          implicit_fuse(rgb_ch + c_ctx_, c_ctx_, 1, rng),
          implicit_mining(c_ctx_, c_ctx_, rng),
          explicit_mining(c_ctx_, rng),
          select_reduce(4 * c_ctx_, c_ctx_, 1, rng),
          select_cna(c_ctx_, c_ctx_, rng),
          c_ctx(c_ctx_) {}

    static CcmModule make_rgb_only(int rgb_ch, int c_ctx_, std::mt19937_64& rng) {
        CcmModule m;
        m.rgb_mining = SingleModalMining(rgb_ch, c_ctx_, rng);
        m.c_ctx = c_ctx_;
        m.rgb_only = true;
        return m;
    }

    int selection_in_channels() const { return rgb_only ? 0 : select_reduce.in_channels(); }

    CcmOutput operator()(const Tensor& x_rgb, const Tensor& x_depth, Mode mode) {
        if (rgb_only) {
            auto r = rgb_mining(x_rgb, mode);
            CcmOutput out;
            out.crc = r.y;
            out.y_rgb = r.y;
            out.y_depth = r.y;
            out.y_imp = r.y;
            out.y_exp = r.y;
            out.pairs_rgb = r.pairs;
            out.pairs_depth = std::move(r.pairs);
            return out;
        }
        if (x_rgb.dim(0) != x_depth.dim(0) || x_rgb.dim(2) != x_depth.dim(2) ||
            x_rgb.dim(3) != x_depth.dim(3))
            throw ShapeError("ccm: rgb/depth features misaligned, " + shape_str(x_rgb.shape()) +
                             " vs " + shape_str(x_depth.shape()));
        const Tensor d = depth_proj(x_depth, mode);

        CcmOutput out;
        auto rgb_res = rgb_mining(x_rgb, mode);
        out.y_rgb = rgb_res.y;
        out.pairs_rgb = std::move(rgb_res.pairs);

        auto depth_res = depth_mining(d, mode);
        out.y_depth = depth_res.y;
        out.pairs_depth = std::move(depth_res.pairs);

        const Tensor x_mul = implicit_fuse(concat_channels({x_rgb, d}), mode);
        out.y_imp = implicit_mining(x_mul, mode).y;

        out.y_exp = explicit_mining(out.pairs_rgb, out.pairs_depth, mode);

        const Tensor selection = concat_channels({out.y_rgb, out.y_depth, out.y_imp, out.y_exp});
        const Tensor reduced = select_reduce(selection);
        out.crc = channel_attention(reduced, select_cna);
        return out;
    }

    void collect(const std::string& prefix, StateDict& sd) const {
        rgb_mining.collect(prefix + ".rgb", sd);
        if (rgb_only) return;
        depth_proj.collect(prefix + ".depth_proj", sd);
        depth_mining.collect(prefix + ".depth", sd);
        implicit_fuse.collect(prefix + ".imp.fuse", sd);
        implicit_mining.collect(prefix + ".imp", sd);
        explicit_mining.collect(prefix + ".exp", sd);
        select_reduce.collect(prefix + ".select.reduce", sd);
        select_cna.collect(prefix + ".select.cna", sd);
    }
};

}  // namespace glassdet
