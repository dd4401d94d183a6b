#include <catch2/catch_amalgamated.hpp>

#include "glassdet/backbone.hpp"

#include <random>

using namespace glassdet;

TEST_CASE("rgb backbone produces the stride 4/8/16/32 pyramid") {
    std::mt19937_64 rng(1);
    BackboneConfig cfg;
    RgbBackbone bb(cfg, rng);
    Tensor x = Tensor::rand_uniform({1, 3, 384, 384}, 0, 1, rng);
    NoGradGuard ng;
    FeaturePyramid pyr = bb(x, Mode::eval);
    const int sizes[4] = {96, 48, 24, 12};
    for (int s = 0; s < 4; ++s) {
        REQUIRE(pyr.stages[s].dim(1) == cfg.rgb_channels[s]);
        REQUIRE(pyr.stages[s].dim(2) == sizes[s]);
        REQUIRE(pyr.stages[s].dim(3) == sizes[s]);
    }
}

TEST_CASE("rgb backbone default channel profile") {
    BackboneConfig cfg;
    REQUIRE(cfg.rgb_channels == std::array<int, 4>{16, 32, 64, 128});
    REQUIRE(cfg.depth_channels == std::array<int, 5>{8, 16, 32, 64, 128});
    REQUIRE(cfg.input_size == 384);
}

TEST_CASE("rgb backbone eval forward is deterministic") {
    std::mt19937_64 rng(2);
    BackboneConfig cfg;
    cfg.rgb_channels = {4, 8, 16, 32};
    RgbBackbone bb(cfg, rng);
    Tensor x = Tensor::rand_uniform({1, 3, 96, 96}, 0, 1, rng);
    NoGradGuard ng;
    FeaturePyramid a = bb(x, Mode::eval);
    FeaturePyramid b = bb(x, Mode::eval);
    for (int s = 0; s < 4; ++s) REQUIRE(a.stages[s].data() == b.stages[s].data());
}

TEST_CASE("depth backbone reproduces the five-stage layout") {
    std::mt19937_64 rng(3);
    BackboneConfig cfg;
    DepthBackbone bb(cfg, rng);
    Tensor d = Tensor::rand_uniform({1, 1, 384, 384}, 0, 1, rng);
    NoGradGuard ng;
    const auto outs = bb.stage_outputs(d, Mode::eval);
    REQUIRE(outs.size() == 5);
    const int sizes[5] = {192, 96, 48, 24, 12};
    const int channels[5] = {8, 16, 32, 64, 128};
    for (int s = 0; s < 5; ++s) {
        REQUIRE(outs[s].dim(1) == channels[s]);
        REQUIRE(outs[s].dim(2) == sizes[s]);
        REQUIRE(outs[s].dim(3) == sizes[s]);
    }

    FeaturePyramid pyr = bb(d, Mode::eval);
    const int pyr_sizes[4] = {96, 48, 24, 12};
    for (int s = 0; s < 4; ++s) {
        REQUIRE(pyr.stages[s].dim(2) == pyr_sizes[s]);
        REQUIRE(pyr.stages[s].data() == outs[s + 1].data());
    }
}

TEST_CASE("rgb and depth pyramids align spatially at several input sizes") {
    std::mt19937_64 rng(4);
    BackboneConfig cfg;
    cfg.rgb_channels = {4, 8, 16, 32};
    cfg.depth_channels = {2, 4, 8, 16, 32};
    RgbBackbone rgb(cfg, rng);
    DepthBackbone dep(cfg, rng);
    NoGradGuard ng;
    for (int size : {96, 192, 384}) {
        Tensor x = Tensor::rand_uniform({1, 3, size, size}, 0, 1, rng);
        Tensor d = Tensor::rand_uniform({1, 1, size, size}, 0, 1, rng);
        FeaturePyramid pr = rgb(x, Mode::eval);
        FeaturePyramid pd = dep(d, Mode::eval);
        for (int s = 0; s < 4; ++s) {
            REQUIRE(pr.stages[s].dim(2) == pd.stages[s].dim(2));
            REQUIRE(pr.stages[s].dim(3) == pd.stages[s].dim(3));
        }
    }
}

TEST_CASE("depth backbone is several times lighter than the rgb backbone") {
    std::mt19937_64 rng(5);
    BackboneConfig cfg;
    RgbBackbone rgb(cfg, rng);
    DepthBackbone dep(cfg, rng);
    REQUIRE(dep.param_count() * 2 < rgb.param_count());
}

TEST_CASE("backbone input validation") {
    std::mt19937_64 rng(6);
    BackboneConfig cfg;
    cfg.rgb_channels = {4, 8, 16, 32};
    RgbBackbone rgb(cfg, rng);
    DepthBackbone dep(cfg, rng);
    REQUIRE_THROWS_AS(rgb(Tensor::zeros({1, 3, 100, 100}), Mode::eval), ConfigError);
    REQUIRE_THROWS_AS(rgb(Tensor::zeros({1, 3, 96, 64}), Mode::eval), ConfigError);
    REQUIRE_THROWS_AS(rgb(Tensor::zeros({1, 1, 96, 96}), Mode::eval), ShapeError);
    REQUIRE_THROWS_AS(dep(Tensor::zeros({1, 3, 96, 96}), Mode::eval), ShapeError);
}
