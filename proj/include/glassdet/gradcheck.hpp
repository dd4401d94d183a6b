#pragma once

#include "glassdet/dataio.hpp"
#include "glassdet/network.hpp"

#include <functional>
#include <string>
#include <vector>

namespace glassdet {

// Central-finite-difference verification of the reverse-mode gradients. The
// numeric side uses forward evaluation only.

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

namespace gradcheck_detail {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Max relative error between reverse-mode and central differences w.r.t.
// every entry of `target`.
inline double check_target(Tensor& target, const std::function<Tensor()>& forward, double h) {
    Tensor loss = forward();
    target.zero_grad();
    loss.backward();
    const std::vector<double> analytic = target.grad();
    double worst = 0.0;
    NoGradGuard ng;
    for (size_t i = 0; i < target.data().size(); ++i) {
        const double orig = target.data()[i];
        target.data()[i] = orig + h;
        const double fp = forward().value();
        target.data()[i] = orig - h;
        const double fm = forward().value();
        target.data()[i] = orig;
        worst = std::max(worst, rel_err(analytic[i], (fp - fm) / (2.0 * h)));
    }
    return worst;
}

inline Tensor rand_t(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::rand_uniform(std::move(s), lo, hi, rng, true);
}

inline void keep_off_kinks(Tensor& t, double margin = 0.08) {
    for (double& v : t.data())
        if (std::abs(v) < margin) v += (v >= 0.0 ? margin : -margin);
}

}  // namespace gradcheck_detail

/// Runs the full finite-difference suite: every differentiable operator at
/// 1e-4, each composite block at 1e-4, and the end-to-end toy network at
/// 1e-3 (BN in eval mode throughout).
inline std::vector<GradCheckResult> run_gradcheck_suite() {
    using namespace gradcheck_detail;
    std::vector<GradCheckResult> results;
    constexpr double kOpTol = 1e-4;
    constexpr double kNetTol = 1e-3;

    auto record = [&](const std::string& name, double err, double tol) {
        results.push_back({name, err, tol, err <= tol});
    };
    std::mt19937_64 rng(2024);

    {  // conv2d, plain / strided / dilated
        Tensor x = rand_t({2, 3, 6, 6}, rng);
        Tensor w = rand_t({4, 3, 3, 3}, rng);
        Tensor b = rand_t({4}, rng);
        auto f = [&] { return sum_all(sigmoid(conv2d(x, w, b, 1, 1, 1))); };
        record("conv2d/input", check_target(x, f, 1e-3), kOpTol);
        record("conv2d/weight", check_target(w, f, 1e-3), kOpTol);
        record("conv2d/bias", check_target(b, f, 1e-3), kOpTol);
        auto fsd = [&] { return sum_all(sigmoid(conv2d(x, w, b, 2, 2, 2))); };
        record("conv2d/strided_dilated", check_target(w, fsd, 1e-3), kOpTol);
    }
    {  // pooling
        Tensor x = rand_t({2, 2, 4, 4}, rng);
        keep_off_kinks(x);
        for (size_t i = 0; i < x.data().size(); ++i) x.data()[i] += 0.011 * static_cast<double>(i % 5);
        auto fmax = [&] { return sum_all(sigmoid(max_pool_2x2(x))); };
        record("max_pool_2x2", check_target(x, fmax, 1e-3), kOpTol);
        auto favg = [&] { return sum_all(sigmoid(global_avg_pool(x))); };
        record("global_avg_pool", check_target(x, favg, 1e-3), kOpTol);
    }
    {  // activations
        Tensor x = rand_t({2, 4, 5, 5}, rng);
        keep_off_kinks(x);
        auto frelu = [&] { return sum_all(relu(x)); };
        record("relu", check_target(x, frelu, 1e-3), kOpTol);
        auto fsig = [&] { return sum_all(sigmoid(x)); };
        record("sigmoid", check_target(x, fsig, 1e-3), kOpTol);
        Tensor s = rand_t({3, 4, 6}, rng);
        Tensor mix = rand_t({3, 4, 6}, rng, 0.1, 1.0);
        auto fsoft = [&] { return sum_all(softmax_last_axis(s) * mix); };
        record("softmax_last_axis", check_target(s, fsoft, 1e-3), kOpTol);
    }
    {  // resize
        Tensor x = rand_t({1, 2, 4, 5}, rng);
        auto f = [&] { return sum_all(sigmoid(resize_bilinear(x, 7, 9))); };
        record("resize_bilinear", check_target(x, f, 1e-3), kOpTol);
        auto fn = [&] { return sum_all(sigmoid(resize_nearest(x, 6, 7))); };
        record("resize_nearest", check_target(x, fn, 1e-3), kOpTol);
    }
    {  // arithmetic with broadcast, matmuls, movement, reductions, bce
        Tensor x = rand_t({2, 3, 4, 4}, rng);
        Tensor w = rand_t({2, 3, 1, 1}, rng, 0.4, 1.6);
        auto fmul = [&] { return sum_all(sigmoid(x * w)); };
        record("broadcast_mul", check_target(w, fmul, 1e-3), kOpTol);
        auto fdiv = [&] { return sum_all(sigmoid(x / w)); };
        record("broadcast_div", check_target(w, fdiv, 1e-3), kOpTol);
        Tensor a = rand_t({2, 3, 4}, rng);
        Tensor bb = rand_t({2, 4, 5}, rng);
        auto fbmm = [&] { return sum_all(sigmoid(bmm(a, bb))); };
        record("bmm", check_target(a, fbmm, 1e-3), kOpTol);
        Tensor c = rand_t({2, 5, 4}, rng);
        auto fnt = [&] { return sum_all(sigmoid(bmm_nt(a, c))); };
        record("bmm_nt", check_target(c, fnt, 1e-3), kOpTol);
        auto fmove = [&] { return sum_all(sigmoid(seq_to_spatial(spatial_to_seq(x), 4, 4))); };
        record("spatial_seq_roundtrip", check_target(x, fmove, 1e-3), kOpTol);
        auto fcat = [&] { return sum_all(sigmoid(concat_channels({x, x}))); };
        record("concat_channels", check_target(x, fcat, 1e-3), kOpTol);
        Tensor g4 = rand_t({2, 3, 1, 1}, rng);
        auto frep = [&] { return sum_all(sigmoid(repeat_channels(g4, 3))); };
        record("repeat_channels", check_target(g4, frep, 1e-3), kOpTol);
        auto fbcm = [&] { return sum_all(sigmoid(batch_channel_mean(x))); };
        record("batch_channel_mean", check_target(x, fbcm, 1e-3), kOpTol);
        Tensor gt = Tensor::zeros({2, 3, 4, 4});
        for (size_t i = 0; i < gt.data().size(); i += 2) gt.data()[i] = 1.0;
        auto fbce = [&] { return bce_with_logits_mean(x, gt); };
        record("bce_with_logits_mean", check_target(x, fbce, 1e-3), kOpTol);
        Tensor sq = rand_t({3, 3}, rng, 0.4, 2.0);
        auto fsqrt = [&] { return sum_all(sqrt(sq)); };
        record("sqrt", check_target(sq, fsqrt, 1e-3), kOpTol);
    }
    {  // conv_br block, eval mode with non-trivial running stats
        ConvBR block(2, 3, 3, rng, 1, 1);
        for (double& v : block.bn.running_mean.data()) v = 0.15;
        for (double& v : block.bn.running_var.data()) v = 1.4;
        Tensor x = rand_t({1, 2, 5, 5}, rng, 0.3, 1.4);
        auto f = [&] { return sum_all(sigmoid(block(x, Mode::eval))); };
        record("block/conv_br", check_target(x, f, 1e-4), kOpTol);
        record("block/conv_br_gamma", check_target(block.bn.gamma, f, 1e-4), kOpTol);
    }
    {  // CNA / CXA blocks
        const int C = 12;
        AttentionHead cna(C, C, rng), cxa(C, 6, rng);
        Tensor x = rand_t({1, C, 3, 3}, rng);
        auto fcna = [&] { return sum_all(sigmoid(channel_attention(x, cna))); };
        record("block/cna", check_target(x, fcna, 1e-4), kOpTol);
        auto fcxa = [&] { return sum_all(sigmoid(context_attention(x, cxa, 6))); };
        record("block/cxa", check_target(x, fcxa, 1e-4), kOpTol);
    }
    {  // CCM block
        CcmModule ccm(3, 2, 3, rng);
        Tensor xr = rand_t({1, 3, 6, 6}, rng);
        Tensor xd = rand_t({1, 2, 6, 6}, rng);
        auto f = [&] { return sum_all(sigmoid(ccm(xr, xd, Mode::eval).crc)); };
        record("block/ccm_rgb_input", check_target(xr, f, 1e-5), kOpTol);
        record("block/ccm_depth_input", check_target(xd, f, 1e-5), kOpTol);
    }
    {  // DAA block
        DaaModule daa(4, rng);
        daa.cm.gamma.data() = {0.3};
        Tensor x = rand_t({1, 4, 3, 3}, rng);
        Tensor dm = Tensor::zeros({1, 1, 3, 3});
        dm.data()[2] = 1.0;
        dm.data()[5] = 1.0;
        auto f = [&] { return sum_all(sigmoid(daa.attend(x, dm, daa.cm))); };
        record("block/daa_input", check_target(x, f, 1e-3), kOpTol);
        record("block/daa_gamma", check_target(daa.cm.gamma, f, 1e-3), kOpTol);
        record("block/daa_phi_v", check_target(daa.cm.phi_v.weight, f, 1e-3), kOpTol);
    }
    {  // decoder block
        Decoder dec(4, rng);
        Tensor x = rand_t({1, 4, 5, 5}, rng);
        auto f = [&] { return sum_all(sigmoid(dec(x, Mode::eval))); };
        record("block/decoder", check_target(x, f, 1e-5), kOpTol);
    }
    {  // hybrid loss block
        Tensor logits = rand_t({1, 1, 6, 6}, rng, -2.0, 2.0);
        Tensor gt = Tensor::zeros({1, 1, 6, 6});
        for (size_t i = 0; i < gt.data().size(); i += 3) gt.data()[i] = 1.0;
        auto f = [&] {
            StagePrediction p;
            p.stage = 1;
            p.logits_full = logits;
            return hybrid_loss({p}, gt);
        };
        record("block/hybrid_loss", check_target(logits, f, 1e-3), kOpTol);
    }
    {  // end-to-end toy network, 20 sampled parameters
        NetworkConfig cfg;
        cfg.backbone.rgb_channels = {4, 8, 16, 32};
        cfg.backbone.depth_channels = {2, 4, 8, 16, 32};
        cfg.backbone.input_size = 96;
        cfg.c_ctx = {8, 8, 8, 8};
        GlassNet net(cfg, rng);
        // Zero-valued depth holes meet zero-initialized biases exactly at the
        // relu kink, where central differences are ill-defined. Jiggle the
        // parameters to a generic point first.
        {
            StateDict sd0 = net.state_dict();
            std::uniform_real_distribution<double> jiggle(-0.02, 0.02);
            for (auto& [name, t] : sd0.params)
                for (double& v : t.data()) v += jiggle(rng);
        }
        SynthConfig sc;
        sc.size = 96;
        sc.seed = 41;
        const Sample sample = synth_scene(sc, 0);
        const NetPlanes np = prepare_eval(sample, 96);
        Tensor rgb = Tensor::from_data({1, 3, 96, 96}, np.rgb);
        Tensor depth = Tensor::from_data({1, 1, 96, 96}, np.depth);
        Tensor dm = Tensor::from_data({1, 1, 96, 96}, np.dm);
        Tensor mask = Tensor::from_data({1, 1, 96, 96}, np.mask);
        auto fwd = [&] {
            auto preds = net.forward(rgb, depth, dm, Mode::eval);
            return hybrid_loss(preds, mask);
        };
        StateDict sd = net.state_dict();
        Tensor loss = fwd();
        for (auto& [name, t] : sd.params) t.zero_grad();
        loss.backward();
        std::mt19937_64 pick(7);
        double worst = 0.0;
        for (int checked = 0; checked < 20;) {
            auto& [name, t] = sd.params[pick() % sd.params.size()];
            if (!t.has_grad()) continue;
            const size_t j = pick() % t.data().size();
            const double analytic = t.grad()[j];
            const double orig = t.data()[j];
            const double h = 1e-6;
            double fp, fm;
            {
                NoGradGuard ng;
                t.data()[j] = orig + h;
                fp = fwd().value();
                t.data()[j] = orig - h;
                fm = fwd().value();
                t.data()[j] = orig;
            }
            worst = std::max(worst, rel_err(analytic, (fp - fm) / (2 * h)));
            ++checked;
        }
        record("network/end_to_end_toy", worst, kNetTol);
    }
    return results;
}

}  // namespace glassdet
