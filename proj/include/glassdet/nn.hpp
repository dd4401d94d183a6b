#pragma once

#include "glassdet/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace glassdet {

enum class Mode { train, eval };

/// Named parameter/buffer registry. Trainable entries receive gradients and
/// optimizer state; buffers (BN running statistics) are checkpointed only.
struct StateDict {
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> buffers;

    void add_param(const std::string& name, const Tensor& t) { params.emplace_back(name, t); }
    void add_buffer(const std::string& name, const Tensor& t) { buffers.emplace_back(name, t); }
};

inline Tensor he_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return Tensor::rand_uniform(std::move(shape), -bound, bound, rng, true);
}

/// Plain convolution layer (weights + bias + geometry).
struct Conv2d {
    Tensor weight;  // [Cout, Cin, k, k]
    Tensor bias;    // [Cout]
    int stride = 1;
    int padding = 0;
    int dilation = 1;

    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int k, std::mt19937_64& rng, int stride_ = 1, int padding_ = 0,
           int dilation_ = 1)
        : weight(he_uniform({out_ch, in_ch, k, k}, in_ch * k * k, rng)),
          bias(Tensor::zeros({out_ch}, true)),
          stride(stride_),
          padding(padding_),
          dilation(dilation_) {}

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding, dilation); }

    int out_channels() const { return weight.dim(0); }
    int in_channels() const { return weight.dim(1); }

    void collect(const std::string& prefix, StateDict& sd) const {
        sd.add_param(prefix + ".weight", weight);
        sd.add_param(prefix + ".bias", bias);
    }
};

struct BatchNorm2d {
    Tensor gamma;         // [C]
    Tensor beta;          // [C]
    Tensor running_mean;  // [C], buffer
    Tensor running_var;   // [C], buffer
    double eps = 1e-5;
    double momentum = 0.1;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels)
        : gamma(Tensor::ones({channels}, true)),
          beta(Tensor::zeros({channels}, true)),
          running_mean(Tensor::zeros({channels})),
          running_var(Tensor::ones({channels})) {}

    Tensor operator()(const Tensor& x, Mode mode) {
        const int C = x.dim(1);
        if (C != gamma.dim(0))
            throw ShapeError("batchnorm: channel mismatch, input " + shape_str(x.shape()));
        const Tensor g4 = reshape(gamma, {1, C, 1, 1});
        const Tensor b4 = reshape(beta, {1, C, 1, 1});
        if (mode == Mode::train) {
            const Tensor mean = batch_channel_mean(x);
            const Tensor centered = x - mean;
            const Tensor var = batch_channel_mean(centered * centered);
            const Tensor xhat = centered / sqrt(var + eps);
            for (int c = 0; c < C; ++c) {
                running_mean.data()[c] =
                    (1.0 - momentum) * running_mean.data()[c] + momentum * mean.data()[c];
                running_var.data()[c] =
                    (1.0 - momentum) * running_var.data()[c] + momentum * var.data()[c];
            }
            return xhat * g4 + b4;
        }
        const Tensor mean = reshape(running_mean, {1, C, 1, 1});
        const Tensor var = reshape(running_var, {1, C, 1, 1});
        return (x - mean) / sqrt(var + eps) * g4 + b4;
    }

    void collect(const std::string& prefix, StateDict& sd) const {
        sd.add_param(prefix + ".gamma", gamma);
        sd.add_param(prefix + ".beta", beta);
        sd.add_buffer(prefix + ".running_mean", running_mean);
        sd.add_buffer(prefix + ".running_var", running_var);
    }
};

/// Convolution + BatchNorm + ReLU.
struct ConvBR {
    Conv2d conv;
    BatchNorm2d bn;

    ConvBR() = default;
    ConvBR(int in_ch, int out_ch, int k, std::mt19937_64& rng, int stride = 1, int padding = 0,
           int dilation = 1)
        : conv(in_ch, out_ch, k, rng, stride, padding, dilation), bn(out_ch) {}

    Tensor operator()(const Tensor& x, Mode mode) { return relu(bn(conv(x), mode)); }

    void collect(const std::string& prefix, StateDict& sd) const {
        conv.collect(prefix + ".conv", sd);
        bn.collect(prefix + ".bn", sd);
    }
};

/// Two 1x1 convolutions around a ReLU, producing per-channel or per-context
/// attention logits from a squeezed [B,C,1,1] descriptor.
struct AttentionHead {
    Conv2d fc1;  // C_in -> hidden
    Conv2d fc2;  // hidden -> n_out
    static constexpr int kReduction = 4;

    AttentionHead() = default;
    AttentionHead(int in_ch, int n_out, std::mt19937_64& rng)
        : fc1(in_ch, std::max(1, in_ch / kReduction), 1, rng),
          fc2(std::max(1, in_ch / kReduction), n_out, 1, rng) {}

    Tensor weights(const Tensor& squeezed) const { return sigmoid(fc2(relu(fc1(squeezed)))); }

    void collect(const std::string& prefix, StateDict& sd) const {
        fc1.collect(prefix + ".fc1", sd);
        fc2.collect(prefix + ".fc2", sd);
    }
};

/// CNA: x scaled by per-channel weights derived from global average pooling.
inline Tensor channel_attention(const Tensor& x, const AttentionHead& head) {
    if (head.fc2.out_channels() != x.dim(1))
        throw ShapeError("channel_attention: head outputs " +
                         std::to_string(head.fc2.out_channels()) + " weights for " +
                         std::to_string(x.dim(1)) + " channels");
    return x * head.weights(global_avg_pool(x));
}

/// CXA: one weight per context group, broadcast across the group's channels.
inline Tensor context_attention(const Tensor& x, const AttentionHead& head, int n_contexts) {
    const int C = x.dim(1);
    if (n_contexts < 1 || C % n_contexts != 0)
        throw ConfigError("context_attention: " + std::to_string(C) +
                          " channels not divisible into " + std::to_string(n_contexts) +
                          " contexts");
    if (head.fc2.out_channels() != n_contexts)
        throw ShapeError("context_attention: head must output one weight per context");
    const Tensor w = head.weights(global_avg_pool(x));
    return x * repeat_channels(w, C / n_contexts);
}

}  // namespace glassdet
