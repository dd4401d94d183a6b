#include <catch2/catch_amalgamated.hpp>

#include "glassdet/nn.hpp"
#include "oracles.hpp"

#include <random>

using namespace glassdet;

namespace {

void zero_params(Conv2d& c) {
    std::fill(c.weight.data().begin(), c.weight.data().end(), 0.0);
    std::fill(c.bias.data().begin(), c.bias.data().end(), 0.0);
}

double fd_check(Tensor& input, const std::function<Tensor()>& forward, double h = 1e-3) {
    Tensor loss = forward();
    input.zero_grad();
    loss.backward();
    const std::vector<double> analytic = input.grad();
    const auto numeric = oracles::fd_gradient([&] { NoGradGuard ng; return forward().value(); },
                                              input.data(), h);
    return oracles::max_rel_err(analytic, numeric);
}

}  // namespace

TEST_CASE("conv_br on constant input") {
    std::mt19937_64 rng(1);
    // pad 0 so the convolution of a constant stays constant (zero variance)
    ConvBR block(2, 3, 3, rng, 1, 0);

    SECTION("train mode normalizes a constant batch to zero") {
        Tensor x = Tensor(Shape{2, 2, 4, 4}, 3.7);
        Tensor y = block(x, Mode::train);
        for (double v : y.data()) REQUIRE(v == 0.0);
    }
    SECTION("beta = 5 shifts the normalized constant to 5") {
        for (double& b : block.bn.beta.data()) b = 5.0;
        Tensor x = Tensor(Shape{1, 2, 4, 4}, -2.0);
        Tensor y = block(x, Mode::train);
        for (double v : y.data()) REQUIRE(v == Catch::Approx(5.0));
    }
}

TEST_CASE("conv_br 3x3 pad 1 stride 1 preserves spatial extent") {
    std::mt19937_64 rng(2);
    ConvBR block(3, 8, 3, rng, 1, 1);
    Tensor x = Tensor::rand_uniform({1, 3, 24, 24}, -1, 1, rng);
    REQUIRE(block(x, Mode::train).shape() == Shape{1, 8, 24, 24});
}

TEST_CASE("conv_br eval mode is a pure deterministic function") {
    std::mt19937_64 rng(3);
    ConvBR block(2, 4, 3, rng, 1, 1);
    Tensor x = Tensor::rand_uniform({2, 2, 6, 6}, -1, 1, rng);
    // eval before any train step uses the initialized running stats
    const auto rm = block.bn.running_mean.data();
    const auto rv = block.bn.running_var.data();
    REQUIRE(rm == std::vector<double>(4, 0.0));
    REQUIRE(rv == std::vector<double>(4, 1.0));
    Tensor y1 = block(x, Mode::eval);
    Tensor y2 = block(x, Mode::eval);
    REQUIRE(y1.data() == y2.data());
    REQUIRE(block.bn.running_mean.data() == rm);  // untouched by eval

    block(x, Mode::train);
    REQUIRE(block.bn.running_mean.data() != rm);  // train updates
}

TEST_CASE("channel attention") {
    std::mt19937_64 rng(4);
    const int C = 6;
    AttentionHead head(C, C, rng);
    Tensor x = Tensor::rand_uniform({2, C, 5, 5}, -2, 2, rng);

    SECTION("zeroed second layer gives exactly 0.5 * x") {
        zero_params(head.fc2);
        Tensor y = channel_attention(x, head);
        for (size_t i = 0; i < x.data().size(); ++i)
            REQUIRE(y.data()[i] == Catch::Approx(0.5 * x.data()[i]));
    }
    SECTION("output shape equals input shape") {
        REQUIRE(channel_attention(x, head).shape() == x.shape());
    }
    SECTION("weights lie strictly inside (0,1)") {
        Tensor w = head.weights(global_avg_pool(x));
        for (double v : w.data()) {
            REQUIRE(v > 0.0);
            REQUIRE(v < 1.0);
        }
    }
    SECTION("weights are spatially constant per channel") {
        Tensor y = channel_attention(x, head);
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < C; ++c) {
                const double r0 = y.at({b, c, 0, 0}) / x.at({b, c, 0, 0});
                for (int i = 0; i < 5; ++i)
                    for (int j = 0; j < 5; ++j)
                        REQUIRE(y.at({b, c, i, j}) / x.at({b, c, i, j}) ==
                                Catch::Approx(r0).epsilon(1e-12));
            }
    }
    SECTION("channel mismatch raises") {
        AttentionHead bad(C, C + 1, rng);
        REQUIRE_THROWS_AS(channel_attention(x, bad), ShapeError);
    }
}

TEST_CASE("context attention") {
    std::mt19937_64 rng(5);
    const int n_ctx = 6, c_per = 3, C = n_ctx * c_per;
    AttentionHead head(C, n_ctx, rng);
    Tensor x = Tensor::rand_uniform({1, C, 4, 4}, 0.5, 2.0, rng);

    SECTION("within one context group all channels share one factor") {
        Tensor y = context_attention(x, head, n_ctx);
        REQUIRE(y.shape() == x.shape());
        for (int g = 0; g < n_ctx; ++g) {
            const double r0 = y.at({0, g * c_per, 0, 0}) / x.at({0, g * c_per, 0, 0});
            for (int c = g * c_per; c < (g + 1) * c_per; ++c)
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 4; ++j)
                        REQUIRE(y.at({0, c, i, j}) / x.at({0, c, i, j}) ==
                                Catch::Approx(r0).epsilon(1e-12));
        }
    }
    SECTION("zeroed second layer gives 0.5 * x") {
        zero_params(head.fc2);
        Tensor y = context_attention(x, head, n_ctx);
        for (size_t i = 0; i < x.data().size(); ++i)
            REQUIRE(y.data()[i] == Catch::Approx(0.5 * x.data()[i]));
    }
    SECTION("indivisible channel count raises") {
        REQUIRE_THROWS_AS(context_attention(x, head, 5), ConfigError);
    }
}

TEST_CASE("block gradients match finite differences") {
    std::mt19937_64 rng(6);
    SECTION("conv_br in eval mode") {
        ConvBR block(2, 3, 3, rng, 1, 1);
        // non-trivial running stats
        for (double& v : block.bn.running_mean.data()) v = 0.2;
        for (double& v : block.bn.running_var.data()) v = 1.7;
        Tensor x = Tensor::rand_uniform({1, 2, 5, 5}, 0.3, 1.5, rng, true);
        auto fwd = [&] { return sum_all(sigmoid(block(x, Mode::eval))); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
        REQUIRE(fd_check(block.conv.weight, fwd) < 1e-4);
        REQUIRE(fd_check(block.bn.gamma, fwd) < 1e-4);
        REQUIRE(fd_check(block.bn.beta, fwd) < 1e-4);
    }
    SECTION("conv_br in train mode differentiates through batch statistics") {
        ConvBR block(2, 3, 3, rng, 1, 1);
        Tensor x = Tensor::rand_uniform({2, 2, 4, 4}, 0.3, 1.5, rng, true);
        // keep running-stat updates out of the FD loop by restoring them
        auto fwd = [&] {
            auto rm = block.bn.running_mean.data();
            auto rv = block.bn.running_var.data();
            Tensor y = sum_all(sigmoid(block(x, Mode::train)));
            block.bn.running_mean.data() = rm;
            block.bn.running_var.data() = rv;
            return y;
        };
        REQUIRE(fd_check(x, fwd) < 1e-4);
        REQUIRE(fd_check(block.conv.weight, fwd) < 1e-4);
    }
    SECTION("channel and context attention") {
        const int C = 12;
        AttentionHead cna(C, C, rng);
        AttentionHead cxa(C, 6, rng);
        Tensor x = Tensor::rand_uniform({1, C, 3, 3}, -1, 1, rng, true);
        auto fcna = [&] { return sum_all(sigmoid(channel_attention(x, cna))); };
        REQUIRE(fd_check(x, fcna) < 1e-4);
        REQUIRE(fd_check(cna.fc1.weight, fcna) < 1e-4);
        REQUIRE(fd_check(cna.fc2.weight, fcna) < 1e-4);
        auto fcxa = [&] { return sum_all(sigmoid(context_attention(x, cxa, 6))); };
        REQUIRE(fd_check(x, fcxa) < 1e-4);
        REQUIRE(fd_check(cxa.fc2.weight, fcxa) < 1e-4);
    }
}

TEST_CASE("state dict naming") {
    std::mt19937_64 rng(7);
    ConvBR block(2, 3, 3, rng);
    StateDict sd;
    block.collect("stage1.block0", sd);
    REQUIRE(sd.params.size() == 4);
    REQUIRE(sd.buffers.size() == 2);
    REQUIRE(sd.params[0].first == "stage1.block0.conv.weight");
    REQUIRE(sd.buffers[1].first == "stage1.block0.bn.running_var");
}
