#include <catch2/catch_amalgamated.hpp>

#include "glassdet/tensor.hpp"
#include "oracles.hpp"

#include <random>

using namespace glassdet;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = true) {
    return Tensor::rand_uniform(std::move(shape), lo, hi, rng, requires_grad);
}

// Keeps relu/maxpool inputs away from kinks so finite differences stay valid.
void nudge_from_zero(Tensor& t, double margin = 0.05) {
    for (double& v : t.data())
        if (std::abs(v) < margin) v += (v >= 0.0 ? margin : -margin);
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

TEST_CASE("conv2d identity-style 1x1 kernel") {
    Tensor x = Tensor::ones({1, 1, 3, 3});
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {2.0});
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    for (double v : y.data()) REQUIRE(v == 2.0);
}

TEST_CASE("conv2d 1x1 identity kernel is exact") {
    std::mt19937_64 rng(7);
    Tensor x = random_tensor({2, 3, 5, 4}, rng, -2.0, 2.0, false);
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w.at({c, c, 0, 0}) = 1.0;
    Tensor b = Tensor::zeros({3});
    Tensor y = conv2d(x, w, b);
    REQUIRE(y.data() == x.data());
}

TEST_CASE("conv2d keeps 384 spatial extent with k=3 pad=1") {
    Tensor x = Tensor::zeros({1, 1, 384, 384});
    std::mt19937_64 rng(1);
    Tensor w = random_tensor({2, 1, 3, 3}, rng, -0.5, 0.5, false);
    Tensor b = Tensor::zeros({2});
    Tensor y = conv2d(x, w, b, 1, 1, 1);
    REQUIRE(y.shape() == Shape{1, 2, 384, 384});
}

TEST_CASE("conv2d dilation taps the right inputs") {
    // The kernels here only support square extents, so the 1-D row [1,2,3,4,5]
    // is embedded as row 2 of a 5x5 grid and convolved with a 3x3 kernel whose
    // middle row carries the 1-D taps. Dilation 2 reads columns 0, 2, 4.
    Tensor g = Tensor::zeros({1, 1, 5, 5});
    const double row[5] = {1, 2, 3, 4, 5};
    for (int j = 0; j < 5; ++j) g.at({0, 0, 2, j}) = row[j];
    Tensor b = Tensor::zeros({1});

    std::vector<double> w_sum(9, 0.0);
    w_sum[3] = w_sum[4] = w_sum[5] = 1.0;  // middle row [1,1,1]
    Tensor y_sum = conv2d(g, Tensor::from_data({1, 1, 3, 3}, w_sum), b, 1, 0, 2);
    REQUIRE(y_sum.shape() == Shape{1, 1, 1, 1});
    REQUIRE(y_sum.data()[0] == Catch::Approx(1.0 + 3.0 + 5.0));  // = 9

    std::vector<double> w_ends(9, 0.0);
    w_ends[3] = w_ends[5] = 1.0;  // middle row [1,0,1]
    Tensor y_ends = conv2d(g, Tensor::from_data({1, 1, 3, 3}, w_ends), b, 1, 0, 2);
    REQUIRE(y_ends.data()[0] == Catch::Approx(1.0 + 5.0));  // = 6
}

TEST_CASE("conv2d matches the direct-loop oracle") {
    std::mt19937_64 rng(42);
    for (int dilation : {1, 2}) {
        for (int stride : {1, 2}) {
            const int B = 2, C = 3, H = 8, W = 7, Cout = 4, k = 3, pad = 2;
            Tensor x = random_tensor({B, C, H, W}, rng, -1, 1, false);
            Tensor w = random_tensor({Cout, C, k, k}, rng, -1, 1, false);
            Tensor b = random_tensor({Cout}, rng, -1, 1, false);
            Tensor y = conv2d(x, w, b, stride, pad, dilation);
            int Ho, Wo;
            const auto ref = oracles::conv2d_direct(x.data(), B, C, H, W, w.data(), b.data(), Cout,
                                                    k, stride, pad, dilation, Ho, Wo);
            REQUIRE(y.shape() == Shape{B, Cout, Ho, Wo});
            for (size_t i = 0; i < ref.size(); ++i)
                REQUIRE(y.data()[i] == Catch::Approx(ref[i]).margin(1e-12));
        }
    }
}

TEST_CASE("conv2d error paths") {
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    Tensor w = Tensor::zeros({1, 3, 3, 3});
    Tensor b = Tensor::zeros({1});
    REQUIRE_THROWS_AS(conv2d(x, w, b), ShapeError);
    Tensor w2 = Tensor::zeros({1, 2, 3, 3});
    REQUIRE_THROWS_AS(conv2d(x, w2, b, 1, 0, 4), ConfigError);  // output extent <= 0
}

TEST_CASE("max pool and global average pool") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    REQUIRE(max_pool_2x2(x).data()[0] == 4.0);
    REQUIRE(global_avg_pool(x).data()[0] == Catch::Approx(2.5));
    REQUIRE(global_avg_pool(x).shape() == Shape{1, 1, 1, 1});

    Tensor big = Tensor::zeros({1, 3, 24, 24});
    REQUIRE(max_pool_2x2(big).shape() == Shape{1, 3, 12, 12});

    Tensor odd = Tensor::zeros({1, 1, 3, 4});
    REQUIRE_THROWS_AS(max_pool_2x2(odd), ShapeError);
}

TEST_CASE("max pool gradient ties break to first row-major index") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {5, 5, 5, 5});
    x.set_requires_grad(true);
    Tensor y = sum_all(max_pool_2x2(x));
    y.backward();
    REQUIRE(x.grad() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("activations") {
    Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});
    Tensor r = relu(x);
    REQUIRE(r.data() == std::vector<double>{0.0, 0.0, 2.0});
    REQUIRE(sigmoid(Tensor::scalar(0.0)).data()[0] == Catch::Approx(0.5));
    Tensor s = softmax_last_axis(Tensor::from_data({1, 2}, {0.0, 0.0}));
    REQUIRE(s.data()[0] == Catch::Approx(0.5));
    REQUIRE(s.data()[1] == Catch::Approx(0.5));
}

TEST_CASE("softmax rows sum to one and stay in (0,1)") {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor({4, 6, 9}, rng, -30.0, 30.0, false);
    Tensor y = softmax_last_axis(x);
    for (int r = 0; r < 24; ++r) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) {
            const double v = y.data()[static_cast<size_t>(r) * 9 + j];
            REQUIRE(v > 0.0);
            REQUIRE(v < 1.0);
            s += v;
        }
        REQUIRE(s == Catch::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("resize_bilinear") {
    SECTION("same size is bit-identical") {
        std::mt19937_64 rng(5);
        Tensor x = random_tensor({2, 3, 4, 5}, rng, -1, 1, false);
        Tensor y = resize_bilinear(x, 4, 5);
        REQUIRE(y.data() == x.data());
    }
    SECTION("1x2 row to width 3 interpolates linearly") {
        Tensor x = Tensor::from_data({1, 1, 1, 2}, {0.0, 2.0});
        Tensor y = resize_bilinear(x, 1, 3);
        REQUIRE(y.data()[0] == Catch::Approx(0.0));
        REQUIRE(y.data()[1] == Catch::Approx(1.0));
        REQUIRE(y.data()[2] == Catch::Approx(2.0));
    }
    SECTION("constant stays constant") {
        Tensor x = Tensor(Shape{1, 2, 3, 3}, 7.5);
        Tensor y = resize_bilinear(x, 8, 5);
        for (double v : y.data()) REQUIRE(v == Catch::Approx(7.5));
    }
}

TEST_CASE("resize_nearest preserves binary values") {
    std::mt19937_64 rng(11);
    Tensor x = Tensor::zeros({1, 1, 10, 10});
    std::bernoulli_distribution coin(0.4);
    for (double& v : x.data()) v = coin(rng) ? 1.0 : 0.0;
    Tensor y = resize_nearest(x, 7, 13);
    for (double v : y.data()) REQUIRE((v == 0.0 || v == 1.0));
    Tensor z = resize_nearest(x, 10, 10);
    REQUIRE(z.data() == x.data());
}

TEST_CASE("backward basics") {
    SECTION("x^2 at 3 gives gradient 6") {
        Tensor x = Tensor::from_data({1}, {3.0}, true);
        Tensor y = x * x;
        y.backward();
        REQUIRE(x.grad()[0] == Catch::Approx(6.0));
    }
    SECTION("non-scalar loss is a usage error") {
        Tensor x = Tensor::ones({2, 2}, true);
        REQUIRE_THROWS_AS((x * x).backward(), ValueError);
    }
    SECTION("repeated backward accumulates") {
        Tensor x = Tensor::from_data({1}, {3.0}, true);
        Tensor y = x * x;
        y.backward();
        y.backward();
        REQUIRE(x.grad()[0] == Catch::Approx(12.0));
    }
    SECTION("sigmoid of sum matches analytic gradient") {
        std::mt19937_64 rng(17);
        Tensor x = random_tensor({2, 3}, rng);
        Tensor s = sum_all(x);
        Tensor y = sigmoid(s);
        y.backward();
        const double sv = 1.0 / (1.0 + std::exp(-s.value()));
        for (double g : x.grad()) REQUIRE(g == Catch::Approx(sv * (1.0 - sv)).epsilon(1e-10));
    }
}

TEST_CASE("finite-difference gradient checks per operator") {
    std::mt19937_64 rng(123);
    SECTION("conv2d w.r.t. input, weight, bias") {
        Tensor x = random_tensor({2, 3, 6, 6}, rng);
        Tensor w = random_tensor({4, 3, 3, 3}, rng);
        Tensor b = random_tensor({4}, rng);
        auto fwd = [&] { return sum_all(sigmoid(conv2d(x, w, b, 1, 1, 1))); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
        REQUIRE(fd_check(w, fwd) < 1e-4);
        REQUIRE(fd_check(b, fwd) < 1e-4);
    }
    SECTION("dilated strided conv2d") {
        Tensor x = random_tensor({1, 2, 6, 6}, rng);
        Tensor w = random_tensor({2, 2, 3, 3}, rng);
        Tensor b = random_tensor({2}, rng);
        auto fwd = [&] { return sum_all(sigmoid(conv2d(x, w, b, 2, 2, 2))); };
        REQUIRE(fd_check(w, fwd) < 1e-4);
        REQUIRE(fd_check(x, fwd) < 1e-4);
    }
    SECTION("max pool") {
        Tensor x = random_tensor({2, 2, 4, 4}, rng);
        nudge_from_zero(x);
        // Spread values so the argmax cannot flip under the FD step.
        for (size_t i = 0; i < x.data().size(); ++i) x.data()[i] += 0.01 * static_cast<double>(i % 7);
        auto fwd = [&] { return sum_all(sigmoid(max_pool_2x2(x))); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
    }
    SECTION("global average pool") {
        Tensor x = random_tensor({2, 3, 4, 4}, rng);
        auto fwd = [&] { return sum_all(sigmoid(global_avg_pool(x))); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
    }
    SECTION("relu away from the kink") {
        Tensor x = random_tensor({2, 4, 6, 6}, rng);
        nudge_from_zero(x);
        auto fwd = [&] { return sum_all(relu(x)); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
    }
    SECTION("sigmoid") {
        Tensor x = random_tensor({2, 4, 6, 6}, rng);
        auto fwd = [&] { return sum_all(sigmoid(x)); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
    }
    SECTION("softmax") {
        Tensor x = random_tensor({2, 5, 7}, rng);
        Tensor m = random_tensor({2, 5, 7}, rng, 0.1, 1.0, false);
        auto fwd = [&] { return sum_all(softmax_last_axis(x) * m); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
    }
    SECTION("resize_bilinear") {
        Tensor x = random_tensor({1, 2, 4, 5}, rng);
        auto fwd = [&] { return sum_all(sigmoid(resize_bilinear(x, 7, 8))); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
    }
    SECTION("broadcast multiply and divide") {
        Tensor x = random_tensor({2, 3, 4, 4}, rng);
        Tensor w = random_tensor({2, 3, 1, 1}, rng, 0.5, 1.5);
        auto fwd = [&] { return sum_all(sigmoid(x * w)); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
        REQUIRE(fd_check(w, fwd) < 1e-4);
        auto fdiv = [&] { return sum_all(sigmoid(x / w)); };
        REQUIRE(fd_check(x, fdiv) < 1e-4);
        REQUIRE(fd_check(w, fdiv) < 1e-4);
    }
    SECTION("bmm and bmm_nt") {
        Tensor a = random_tensor({2, 3, 4}, rng);
        Tensor b = random_tensor({2, 4, 5}, rng);
        auto fwd = [&] { return sum_all(sigmoid(bmm(a, b))); };
        REQUIRE(fd_check(a, fwd) < 1e-4);
        REQUIRE(fd_check(b, fwd) < 1e-4);
        Tensor c = random_tensor({2, 5, 4}, rng);
        auto fnt = [&] { return sum_all(sigmoid(bmm_nt(a, c))); };
        REQUIRE(fd_check(a, fnt) < 1e-4);
        REQUIRE(fd_check(c, fnt) < 1e-4);
    }
    SECTION("movement ops") {
        Tensor x = random_tensor({2, 3, 4, 5}, rng);
        auto fwd = [&] { return sum_all(sigmoid(seq_to_spatial(spatial_to_seq(x), 4, 5))); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
        auto fcat = [&] { return sum_all(sigmoid(concat_channels({x, x}))); };
        REQUIRE(fd_check(x, fcat) < 1e-4);
    }
    SECTION("repeat_channels") {
        Tensor w = random_tensor({2, 3, 1, 1}, rng);
        auto fwd = [&] { return sum_all(sigmoid(repeat_channels(w, 4))); };
        REQUIRE(fd_check(w, fwd) < 1e-4);
    }
    SECTION("reductions and bce") {
        Tensor x = random_tensor({2, 3, 4, 4}, rng);
        auto fmean = [&] { return sigmoid(mean_all(x)); };
        REQUIRE(fd_check(x, fmean) < 1e-4);
        auto fbcm = [&] { return sum_all(sigmoid(batch_channel_mean(x))); };
        REQUIRE(fd_check(x, fbcm) < 1e-4);
        Tensor gt = Tensor::zeros({2, 3, 4, 4});
        for (size_t i = 0; i < gt.data().size(); i += 3) gt.data()[i] = 1.0;
        auto fbce = [&] { return bce_with_logits_mean(x, gt); };
        REQUIRE(fd_check(x, fbce) < 1e-4);
    }
    SECTION("sqrt") {
        Tensor x = random_tensor({3, 3}, rng, 0.5, 2.0);
        auto fwd = [&] { return sum_all(sqrt(x)); };
        REQUIRE(fd_check(x, fwd) < 1e-4);
    }
}

TEST_CASE("conv2d weight gradient matches finite differences") {
    std::mt19937_64 rng(99);
    Tensor x = random_tensor({1, 2, 5, 5}, rng, -1, 1, false);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = Tensor::zeros({3});
    auto fwd = [&] { return sum_all(sigmoid(conv2d(x, w, b, 1, 1, 1))); };
    REQUIRE(fd_check(w, fwd) < 1e-4);
}

TEST_CASE("operators are deterministic") {
    std::mt19937_64 rng(31);
    Tensor x = random_tensor({2, 3, 8, 8}, rng, -1, 1, false);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, -1, 1, false);
    Tensor b = random_tensor({4}, rng, -1, 1, false);
    Tensor y1 = conv2d(x, w, b, 1, 1, 1);
    Tensor y2 = conv2d(x, w, b, 1, 1, 1);
    REQUIRE(y1.data() == y2.data());
    REQUIRE(softmax_last_axis(x).data() == softmax_last_axis(x).data());
    REQUIRE(resize_bilinear(x, 5, 9).data() == resize_bilinear(x, 5, 9).data());
}

TEST_CASE("tensor invariants") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    REQUIRE(t.numel() == 6);
    REQUIRE_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
    REQUIRE(all_finite(t));
    t.data()[2] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_FALSE(all_finite(t));
}

TEST_CASE("no-grad guard suppresses graph recording") {
    Tensor x = Tensor::from_data({1}, {2.0}, true);
    Tensor y;
    {
        NoGradGuard ng;
        y = x * x;
    }
    REQUIRE(y.node()->parents.empty());
}
