#include <catch2/catch_amalgamated.hpp>

#include "glassdet/dataio.hpp"

#include <filesystem>
#include <random>

using namespace glassdet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("glassdet_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("normalize_depth") {
    SECTION("two valid readings map to the range endpoints") {
        std::vector<double> raw{10.0, 20.0};
        std::vector<uint8_t> valid{1, 1};
        const ImageU16 d = normalize_depth(raw, valid, 1, 2);
        REQUIRE(d.pixels[0] == 1);
        REQUIRE(d.pixels[1] == 65535);
    }
    SECTION("all invalid maps to all zeros") {
        std::vector<double> raw{5.0, 6.0, 7.0};
        std::vector<uint8_t> valid{0, 0, 0};
        const ImageU16 d = normalize_depth(raw, valid, 1, 3);
        for (uint16_t v : d.pixels) REQUIRE(v == 0);
    }
    SECTION("constant valid depth maps to all ones") {
        std::vector<double> raw{4.2, 4.2, 4.2, 4.2};
        std::vector<uint8_t> valid{1, 1, 0, 1};
        const ImageU16 d = normalize_depth(raw, valid, 2, 2);
        REQUIRE(d.pixels[0] == 1);
        REQUIRE(d.pixels[1] == 1);
        REQUIRE(d.pixels[2] == 0);
        REQUIRE(d.pixels[3] == 1);
    }
    SECTION("valid pixels never map to the 0 sentinel") {
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> u(-100.0, 100.0);
        std::vector<double> raw(64);
        std::vector<uint8_t> valid(64);
        for (size_t i = 0; i < raw.size(); ++i) {
            raw[i] = u(rng);
            valid[i] = i % 3 != 0;
        }
        const ImageU16 d = normalize_depth(raw, valid, 8, 8);
        for (size_t i = 0; i < raw.size(); ++i) {
            if (valid[i]) REQUIRE(d.pixels[i] >= 1);
            else REQUIRE(d.pixels[i] == 0);
        }
    }
}

TEST_CASE("missing_map") {
    SECTION("indicator of zeros") {
        ImageU16 d{2, 2, {0, 5, 65535, 0}};
        const ImageU8 m = missing_map(d);
        REQUIRE(m.pixels == std::vector<uint8_t>{1, 0, 0, 1});
    }
    SECTION("all valid gives all zeros") {
        ImageU16 d{1, 3, {1, 2, 3}};
        for (uint8_t v : missing_map(d).pixels) REQUIRE(v == 0);
    }
    SECTION("round-trip with normalize_depth: missing == NOT valid") {
        std::mt19937_64 rng(2);
        std::uniform_real_distribution<double> u(0.0, 50.0);
        std::vector<double> raw(100);
        std::vector<uint8_t> valid(100);
        for (size_t i = 0; i < raw.size(); ++i) {
            raw[i] = u(rng);
            valid[i] = std::bernoulli_distribution(0.7)(rng) ? 1 : 0;
        }
        const ImageU8 m = missing_map(normalize_depth(raw, valid, 10, 10));
        for (size_t i = 0; i < raw.size(); ++i) REQUIRE(m.pixels[i] == (valid[i] ? 0 : 1));
    }
}

TEST_CASE("png round-trips are byte-exact") {
    const auto dir = temp_dir("png");
    std::mt19937_64 rng(3);

    ImageU8 rgb{13, 17, 3, {}};
    rgb.pixels.resize(13 * 17 * 3);
    for (auto& v : rgb.pixels) v = static_cast<uint8_t>(rng() & 0xff);
    write_png_rgb8(dir / "x.png", rgb);
    REQUIRE(read_png_rgb8(dir / "x.png").pixels == rgb.pixels);

    ImageU16 depth{13, 17, {}};
    depth.pixels.resize(13 * 17);
    for (auto& v : depth.pixels) v = static_cast<uint16_t>(rng() & 0xffff);
    write_png_gray16(dir / "d.png", depth);
    REQUIRE(read_png_gray16(dir / "d.png").pixels == depth.pixels);

    fs::remove_all(dir);
}

TEST_CASE("sample save/load round-trip and manifest validation") {
    const auto dir = temp_dir("ds");
    SynthConfig cfg;
    cfg.size = 48;
    cfg.seed = 11;
    const Sample s = synth_scene(cfg, 0);
    save_sample(dir, s);
    const Sample r = load_sample(dir, s.id);
    REQUIRE(r.rgb.pixels == s.rgb.pixels);
    REQUIRE(r.depth.pixels == s.depth.pixels);
    REQUIRE(r.mask.pixels == s.mask.pixels);
    REQUIRE(r.missing.pixels == s.missing.pixels);

    {
        std::ofstream train(dir / "train.txt");
        train << s.id << "\n" << "nonexistent_sample\n";
    }
    const DatasetManifest m = load_manifest(dir, "train");
    REQUIRE(m.ids.size() == 2);
    const auto problems = validate_manifest(m);
    REQUIRE(problems.size() == 1);
    REQUIRE(problems[0].find("nonexistent_sample") != std::string::npos);
    REQUIRE_FALSE(matches_paper_split_sizes(m));
    fs::remove_all(dir);
}

TEST_CASE("augmentation") {
    SynthConfig cfg;
    cfg.size = 64;
    cfg.seed = 4;
    const Sample s = synth_scene(cfg, 1);

    SECTION("train crop stays within the 16-pixel margin and planes agree") {
        std::mt19937_64 rng(5);
        const NetPlanes np = augment_train(s, 48, rng);
        REQUIRE(np.size == 48);
        REQUIRE(np.rgb.size() == 3u * 48 * 48);
        for (double v : np.dm) REQUIRE((v == 0.0 || v == 1.0));
        for (double v : np.mask) REQUIRE((v == 0.0 || v == 1.0));
        for (double v : np.rgb) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
    SECTION("flip is applied to the mask iff it is applied to the rgb") {
        // Marker sample: left half bright red and mask 1, right half dark and
        // mask 0. If the planes flipped independently, the interiors of the
        // two halves would contradict each other after augmentation.
        Sample marked = s;
        const int W = marked.rgb.width, H = marked.rgb.height;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const bool left = j < W / 2;
                const size_t p = static_cast<size_t>(i) * W + j;
                marked.mask.pixels[p] = left ? 1 : 0;
                marked.rgb.pixels[p * 3] = left ? 255 : 0;
                marked.rgb.pixels[p * 3 + 1] = 0;
                marked.rgb.pixels[p * 3 + 2] = 0;
            }
        marked.validate();
        const int T = 48;
        for (uint64_t seed = 0; seed < 16; ++seed) {
            std::mt19937_64 r3(seed);
            const NetPlanes np = augment_train(marked, T, r3);
            for (int i = 0; i < T; ++i)
                for (int j = 2; j < T - 2; ++j) {
                    // only judge pixels whose 5-wide neighborhood is uniform,
                    // away from resize-convention edge effects
                    bool all1 = true, all0 = true;
                    for (int d = -2; d <= 2; ++d) {
                        const double m = np.mask[static_cast<size_t>(i) * T + (j + d)];
                        all1 = all1 && m == 1.0;
                        all0 = all0 && m == 0.0;
                    }
                    const double red = np.rgb[static_cast<size_t>(i) * T + j];
                    if (all1) REQUIRE(red > 0.5);
                    if (all0) REQUIRE(red < 0.5);
                }
        }
    }
    SECTION("eval path is deterministic and without crop") {
        const NetPlanes a = prepare_eval(s, 48);
        const NetPlanes b = prepare_eval(s, 48);
        REQUIRE(a.rgb == b.rgb);
        REQUIRE(a.depth == b.depth);
        REQUIRE(a.dm == b.dm);
        REQUIRE(a.mask == b.mask);
    }
}

TEST_CASE("dataset statistics") {
    SECTION("one all-glass mask gives an all-ones heatmap") {
        ImageU8 m{8, 8, 1, std::vector<uint8_t>(64, 1)};
        const auto heat = location_distribution({m});
        for (double v : heat) REQUIRE(v == 1.0);
    }
    SECTION("two complementary half masks average to 0.5") {
        ImageU8 top{8, 8, 1, std::vector<uint8_t>(64, 0)};
        ImageU8 bottom{8, 8, 1, std::vector<uint8_t>(64, 0)};
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 8; ++j) {
                top.pixels[static_cast<size_t>(i) * 8 + j] = 1;
                bottom.pixels[static_cast<size_t>(i + 4) * 8 + j] = 1;
            }
        const auto heat = location_distribution({top, bottom});
        for (double v : heat) REQUIRE(v == 0.5);
    }
    SECTION("heatmap mean equals mean area ratio of the resized masks") {
        std::mt19937_64 rng(7);
        std::vector<ImageU8> masks;
        double want = 0.0;
        for (int t = 0; t < 3; ++t) {
            ImageU8 m{kStatsGrid, kStatsGrid, 1, std::vector<uint8_t>(kStatsGrid * kStatsGrid)};
            for (auto& v : m.pixels) v = std::bernoulli_distribution(0.3)(rng) ? 1 : 0;
            want += area_ratio(m);
            masks.push_back(std::move(m));
        }
        want /= 3.0;
        const auto heat = location_distribution(masks);
        double got = 0.0;
        for (double v : heat) got += v;
        got /= static_cast<double>(heat.size());
        REQUIRE(got == Catch::Approx(want).margin(1e-9));
    }
}

TEST_CASE("color contrast chi2") {
    SECTION("identical color distribution in both regions gives zero") {
        ImageU8 rgb{4, 4, 3, std::vector<uint8_t>(48, 128)};
        ImageU8 mask{4, 4, 1, std::vector<uint8_t>(16, 0)};
        for (int i = 0; i < 8; ++i) mask.pixels[static_cast<size_t>(i)] = 1;
        REQUIRE(color_contrast_chi2(rgb, mask) == Catch::Approx(0.0).margin(1e-9));
    }
    SECTION("disjoint-support histograms give one") {
        ImageU8 rgb{2, 2, 3, {}};
        rgb.pixels = {0, 0, 0, 0, 0, 0, 255, 255, 255, 255, 255, 255};
        ImageU8 mask{2, 2, 1, {1, 1, 0, 0}};
        REQUIRE(color_contrast_chi2(rgb, mask) == Catch::Approx(1.0).margin(1e-9));
    }
    SECTION("random images land in [0,1]") {
        std::mt19937_64 rng(8);
        for (int t = 0; t < 10; ++t) {
            ImageU8 rgb{16, 16, 3, {}};
            rgb.pixels.resize(16 * 16 * 3);
            for (auto& v : rgb.pixels) v = static_cast<uint8_t>(rng() & 0xff);
            ImageU8 mask{16, 16, 1, std::vector<uint8_t>(256, 0)};
            for (int i = 0; i < 80; ++i) mask.pixels[static_cast<size_t>(i)] = 1;
            const double c = color_contrast_chi2(rgb, mask);
            REQUIRE(c >= 0.0);
            REQUIRE(c <= 1.0);
        }
    }
    SECTION("empty region raises") {
        ImageU8 rgb{2, 2, 3, std::vector<uint8_t>(12, 0)};
        ImageU8 empty{2, 2, 1, {0, 0, 0, 0}};
        REQUIRE_THROWS_AS(color_contrast_chi2(rgb, empty), ValueError);
    }
}

TEST_CASE("area ratio") {
    ImageU8 half{2, 2, 1, {1, 1, 0, 0}};
    REQUIRE(area_ratio(half) == 0.5);
    ImageU8 empty{2, 2, 1, {0, 0, 0, 0}};
    REQUIRE(area_ratio(empty) == 0.0);
}

TEST_CASE("synthetic scenes") {
    SECTION("same seed and index give a bit-identical sample") {
        SynthConfig cfg;
        cfg.size = 40;
        cfg.seed = 9;
        const Sample a = synth_scene(cfg, 3);
        const Sample b = synth_scene(cfg, 3);
        REQUIRE(a.rgb.pixels == b.rgb.pixels);
        REQUIRE(a.depth.pixels == b.depth.pixels);
        REQUIRE(a.mask.pixels == b.mask.pixels);
    }
    SECTION("with p_missing_outside = 0 every hole is inside the mask") {
        SynthConfig cfg;
        cfg.size = 40;
        cfg.seed = 10;
        cfg.p_missing_outside = 0.0;
        cfg.p_missing_in_glass = 0.5;
        for (int64_t i = 0; i < 4; ++i) {
            const Sample s = synth_scene(cfg, i);
            for (size_t p = 0; p < s.missing.pixels.size(); ++p)
                if (s.missing.pixels[p]) REQUIRE(s.mask.pixels[p] == 1);
        }
    }
    SECTION("empirical in-glass missing rate tracks the configured probability") {
        SynthConfig cfg;
        cfg.size = 48;
        cfg.seed = 12;
        cfg.p_missing_in_glass = 0.4;
        int64_t holes = 0, glass = 0;
        for (int64_t i = 0; i < 64; ++i) {
            const Sample s = synth_scene(cfg, i);
            for (size_t p = 0; p < s.mask.pixels.size(); ++p) {
                if (!s.mask.pixels[p]) continue;
                ++glass;
                holes += s.missing.pixels[p];
            }
        }
        const double rate = static_cast<double>(holes) / static_cast<double>(glass);
        REQUIRE(rate == Catch::Approx(0.4).margin(0.05));
    }
    SECTION("invalid config raises") {
        SynthConfig cfg;
        cfg.p_missing_outside = 0.5;
        cfg.p_missing_in_glass = 0.4;
        REQUIRE_THROWS_AS(synth_scene(cfg, 0), ConfigError);
    }
    SECTION("zero visibility copies the background into the glass region") {
        SynthConfig cfg;
        cfg.size = 40;
        cfg.seed = 13;
        cfg.glass_visibility = 0.0;
        SynthConfig vis = cfg;
        vis.glass_visibility = 1.0;
        const Sample a = synth_scene(cfg, 0);
        const Sample b = synth_scene(vis, 0);
        REQUIRE(a.mask.pixels == b.mask.pixels);
        REQUIRE(a.rgb.pixels != b.rgb.pixels);  // visible glass alters pixels
    }
}
