#pragma once

#include "glassdet/nn.hpp"

#include <string>

namespace glassdet {

inline constexpr int kDefaultAttentionCap = 24 * 24;

inline void check_depth_missing_map(const Tensor& dm) {
    if (dm.rank() != 4 || dm.dim(1) != 1)
        throw ShapeError("depth-missing map must be [B,1,H,W], got " + shape_str(dm.shape()));
    for (double v : dm.data())
        if (v != 0.0 && v != 1.0) throw ValueError("depth-missing map must be strictly binary");
}

/// Query/key/value projections and the learnable gate for one modality.
struct DaaHead {
    Conv2d phi_q, phi_k, phi_v;
    Tensor gamma;  // scalar, initialized to 0

    DaaHead() = default;
    DaaHead(int channels, std::mt19937_64& rng)
        : phi_q(channels, std::max(1, channels / 8), 1, rng),
          phi_k(channels, std::max(1, channels / 8), 1, rng),
          phi_v(channels, channels, 1, rng),
          gamma(Tensor::zeros({1}, true)) {}

    void collect(const std::string& prefix, StateDict& sd) const {
        phi_q.collect(prefix + ".phi_q", sd);
        phi_k.collect(prefix + ".phi_k", sd);
        phi_v.collect(prefix + ".phi_v", sd);
        sd.add_param(prefix + ".gamma", gamma);
    }
};

/// Spatial self-attention whose value path is biased by the depth-missing
/// map: f_out = gamma * softmax(q k^T) (v + Dm) + x. The map enters the value
/// path only, so the attention matrix never depends on it.
struct DaaModule {
    DaaHead cm, rgb, depth;
    ConvBR fuse;  // 3C -> C
    int attention_cap = kDefaultAttentionCap;

    DaaModule() = default;
    DaaModule(int channels, std::mt19937_64& rng, int cap = kDefaultAttentionCap)
        : cm(channels, rng), rgb(channels, rng), depth(channels, rng),
          fuse(3 * channels, channels, 1, rng), attention_cap(cap) {}

    /// Row-stochastic attention matrix [B,L,L]; a function of x alone.
    Tensor attention_matrix(const Tensor& x, const DaaHead& head) const {
        const Tensor q = spatial_to_seq(head.phi_q(x));
        const Tensor k = spatial_to_seq(head.phi_k(x));
        return softmax_last_axis(bmm_nt(q, k));
    }

    Tensor attend(const Tensor& x, const Tensor& dm, const DaaHead& head) const {
        if (x.rank() != 4) throw ShapeError("daa_attend: features must be rank-4");
        const int H = x.dim(2), W = x.dim(3);
        const int64_t L = static_cast<int64_t>(H) * W;
        if (L > attention_cap)
            throw ConfigError("daa_attend: attention length " + std::to_string(L) +
                              " exceeds cap " + std::to_string(attention_cap));
        if (dm.dim(2) != H || dm.dim(3) != W)
            throw ShapeError("daa_attend: depth-missing map not resized to feature resolution");
        const Tensor a = attention_matrix(x, head);
        const Tensor v = spatial_to_seq(head.phi_v(x) + dm);
        const Tensor mixed = seq_to_spatial(bmm(a, v), H, W);
        return head.gamma * mixed + x;
    }

    /// Applies per-modality attention and fuses the three streams.
    Tensor operator()(const Tensor& crc, const Tensor& y_rgb, const Tensor& y_depth,
                      const Tensor& dm, Mode mode) {
        if (crc.shape() != y_rgb.shape() || crc.shape() != y_depth.shape())
            throw ShapeError("daa: modality features misaligned");
        check_depth_missing_map(dm);
        const Tensor f_cm = attend(crc, dm, cm);
        const Tensor f_rgb = attend(y_rgb, dm, rgb);
        const Tensor f_depth = attend(y_depth, dm, depth);
        return fuse(concat_channels({f_cm, f_rgb, f_depth}), mode);
    }

    void freeze_gamma() {
        for (DaaHead* h : {&cm, &rgb, &depth}) {
            std::fill(h->gamma.data().begin(), h->gamma.data().end(), 0.0);
            h->gamma.set_requires_grad(false);
        }
    }

    void collect(const std::string& prefix, StateDict& sd) const {
        cm.collect(prefix + ".cm", sd);
        rgb.collect(prefix + ".rgb", sd);
        depth.collect(prefix + ".depth", sd);
        fuse.collect(prefix + ".fuse", sd);
    }
};

}  // namespace glassdet
