#pragma once

#include "glassdet/tensor.hpp"

#include <png.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace glassdet {

struct ImageU8 {
    int height = 0, width = 0, channels = 1;
    std::vector<uint8_t> pixels;  // HWC interleaved

    int64_t plane_size() const { return static_cast<int64_t>(height) * width; }
};

struct ImageU16 {
    int height = 0, width = 0;
    std::vector<uint16_t> pixels;

    int64_t plane_size() const { return static_cast<int64_t>(height) * width; }
};

// --------------------------------------------------------------------- png ---

namespace detail {

struct PngCloser {
    std::FILE* f = nullptr;
    ~PngCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const uint8_t* data, int h, int w,
                      int channels, int bit_depth) {
    detail::PngCloser fc{std::fopen(path.string().c_str(), "wb")};
    if (!fc.f) throw IoError("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write error: " + path.string());
    }
    png_init_io(png, fc.f);
    const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);  // buffers are little-endian
    const size_t row_bytes = static_cast<size_t>(w) * channels * (bit_depth / 8);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int i = 0; i < h; ++i)
        rows[static_cast<size_t>(i)] = const_cast<png_bytep>(data + static_cast<size_t>(i) * row_bytes);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline void write_png_rgb8(const std::filesystem::path& path, const ImageU8& img) {
    if (img.channels != 3) throw IoError("write_png_rgb8: image must have 3 channels");
    write_png(path, img.pixels.data(), img.height, img.width, 3, 8);
}

inline void write_png_gray8(const std::filesystem::path& path, const ImageU8& img) {
    if (img.channels != 1) throw IoError("write_png_gray8: image must have 1 channel");
    write_png(path, img.pixels.data(), img.height, img.width, 1, 8);
}

inline void write_png_gray16(const std::filesystem::path& path, const ImageU16& img) {
    write_png(path, reinterpret_cast<const uint8_t*>(img.pixels.data()), img.height, img.width, 1,
              16);
}

namespace detail {

inline void read_png(const std::filesystem::path& path, std::vector<uint8_t>& out, int& h, int& w,
                     int& channels, int& bit_depth) {
    PngCloser fc{std::fopen(path.string().c_str(), "rb")};
    if (!fc.f) throw IoError("cannot open for reading: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng read error: " + path.string());
    }
    png_init_io(png, fc.f);
    png_read_info(png, info);
    h = static_cast<int>(png_get_image_height(png, info));
    w = static_cast<int>(png_get_image_width(png, info));
    bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    channels = static_cast<int>(png_get_channels(png, info));
    bit_depth = png_get_bit_depth(png, info);
    const size_t row_bytes = png_get_rowbytes(png, info);
    out.resize(row_bytes * static_cast<size_t>(h));
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int i = 0; i < h; ++i) rows[static_cast<size_t>(i)] = out.data() + static_cast<size_t>(i) * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace detail

inline ImageU8 read_png_rgb8(const std::filesystem::path& path) {
    std::vector<uint8_t> raw;
    int h, w, c, depth;
    detail::read_png(path, raw, h, w, c, depth);
    if (depth != 8 || c != 3)
        throw IoError("expected 8-bit RGB png at " + path.string() + ", got " +
                      std::to_string(depth) + "-bit " + std::to_string(c) + "-channel");
    return ImageU8{h, w, 3, std::move(raw)};
}

inline ImageU8 read_png_gray8(const std::filesystem::path& path) {
    std::vector<uint8_t> raw;
    int h, w, c, depth;
    detail::read_png(path, raw, h, w, c, depth);
    if (depth != 8 || c != 1)
        throw IoError("expected 8-bit grayscale png at " + path.string());
    return ImageU8{h, w, 1, std::move(raw)};
}

inline ImageU16 read_png_gray16(const std::filesystem::path& path) {
    std::vector<uint8_t> raw;
    int h, w, c, depth;
    detail::read_png(path, raw, h, w, c, depth);
    if (depth != 16 || c != 1)
        throw IoError("expected 16-bit grayscale png at " + path.string());
    ImageU16 img{h, w, {}};
    img.pixels.resize(static_cast<size_t>(h) * w);
    std::memcpy(img.pixels.data(), raw.data(), raw.size());
    return img;
}

// ---------------------------------------------------------- depth convention ---

/// Min-max normalization of valid depth readings into [1, 65535]; invalid
/// pixels become the 0 sentinel. Valid pixels never map to 0, so the sentinel
/// stays unambiguous (a constant valid plane maps to all 1s).
inline ImageU16 normalize_depth(const std::vector<double>& raw, const std::vector<uint8_t>& valid,
                                int h, int w) {
    if (raw.size() != static_cast<size_t>(h) * w || valid.size() != raw.size())
        throw ShapeError("normalize_depth: plane size mismatch");
    ImageU16 out{h, w, std::vector<uint16_t>(raw.size(), 0)};
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (size_t i = 0; i < raw.size(); ++i) {
        if (!valid[i]) continue;
        if (!any || raw[i] < lo) lo = any ? std::min(lo, raw[i]) : raw[i];
        if (!any || raw[i] > hi) hi = any ? std::max(hi, raw[i]) : raw[i];
        any = true;
    }
    if (!any) return out;  // all invalid -> all zeros
    const double range = hi - lo;
    for (size_t i = 0; i < raw.size(); ++i) {
        if (!valid[i]) continue;
        if (range == 0.0) {
            out.pixels[i] = 1;
        } else {
            const double t = (raw[i] - lo) / range;
            out.pixels[i] = static_cast<uint16_t>(1 + std::llround(t * 65534.0));
        }
    }
    return out;
}

/// Indicator of invalid depth: 1 where the 0 sentinel sits, 0 elsewhere.
inline ImageU8 missing_map(const ImageU16& depth) {
    ImageU8 out{depth.height, depth.width, 1, std::vector<uint8_t>(depth.pixels.size())};
    for (size_t i = 0; i < depth.pixels.size(); ++i) out.pixels[i] = depth.pixels[i] == 0 ? 1 : 0;
    return out;
}

// ------------------------------------------------------------------ samples ---

/// One RGB-D item. The in-memory mask and missing planes are strictly 0/1;
/// the on-disk mask encodes 1 as 255.
struct Sample {
    std::string id;
    ImageU8 rgb;       // 3-channel
    ImageU16 depth;    // 16-bit, 0 = invalid
    ImageU8 missing;   // 1 where depth is missing
    ImageU8 mask;      // ground truth glass mask

    void validate() const {
        const int h = rgb.height, w = rgb.width;
        if (rgb.channels != 3) throw ValueError("sample " + id + ": rgb must have 3 channels");
        if (depth.height != h || depth.width != w || missing.height != h || missing.width != w ||
            mask.height != h || mask.width != w)
            throw ShapeError("sample " + id + ": planes disagree on size");
        for (size_t i = 0; i < depth.pixels.size(); ++i) {
            const bool miss = missing.pixels[i] != 0;
            if (miss != (depth.pixels[i] == 0))
                throw ValueError("sample " + id + ": missing plane inconsistent with depth zeros");
        }
        for (uint8_t v : mask.pixels)
            if (v > 1) throw ValueError("sample " + id + ": mask must be binary");
    }
};

inline std::filesystem::path sample_rgb_path(const std::filesystem::path& root,
                                             const std::string& id) {
    return root / "images" / (id + ".png");
}
inline std::filesystem::path sample_depth_path(const std::filesystem::path& root,
                                               const std::string& id) {
    return root / "depths" / (id + ".png");
}
inline std::filesystem::path sample_mask_path(const std::filesystem::path& root,
                                              const std::string& id) {
    return root / "masks" / (id + ".png");
}

inline void save_sample(const std::filesystem::path& root, const Sample& s) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "images");
    fs::create_directories(root / "depths");
    fs::create_directories(root / "masks");
    write_png_rgb8(sample_rgb_path(root, s.id), s.rgb);
    write_png_gray16(sample_depth_path(root, s.id), s.depth);
    ImageU8 disk_mask = s.mask;
    for (uint8_t& v : disk_mask.pixels) v = v ? 255 : 0;
    write_png_gray8(sample_mask_path(root, s.id), disk_mask);
}

inline Sample load_sample(const std::filesystem::path& root, const std::string& id) {
    Sample s;
    s.id = id;
    s.rgb = read_png_rgb8(sample_rgb_path(root, id));
    s.depth = read_png_gray16(sample_depth_path(root, id));
    s.mask = read_png_gray8(sample_mask_path(root, id));
    for (uint8_t& v : s.mask.pixels) v = v > 127 ? 1 : 0;
    s.missing = missing_map(s.depth);
    s.validate();
    return s;
}

// ----------------------------------------------------------------- manifest ---

struct DatasetManifest {
    std::filesystem::path root;
    std::string split;  // "train" or "test"
    std::vector<std::string> ids;
};

inline constexpr int kPaperTrainCount = 2400;
inline constexpr int kPaperTestCount = 609;

inline DatasetManifest load_manifest(const std::filesystem::path& root, const std::string& split) {
    if (split != "train" && split != "test")
        throw ConfigError("manifest split must be 'train' or 'test', got '" + split + "'");
    const auto file = root / (split + ".txt");
    std::ifstream in(file);
    if (!in) throw IoError("cannot read manifest " + file.string());
    DatasetManifest m{root, split, {}};
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) m.ids.push_back(line);
    }
    return m;
}

/// One diagnostic string per id with a missing mandatory file; empty when the
/// manifest is fully resolvable.
inline std::vector<std::string> validate_manifest(const DatasetManifest& m) {
    namespace fs = std::filesystem;
    std::vector<std::string> problems;
    for (const std::string& id : m.ids) {
        std::string missing;
        if (!fs::exists(sample_rgb_path(m.root, id))) missing += " images/" + id + ".png";
        if (!fs::exists(sample_depth_path(m.root, id))) missing += " depths/" + id + ".png";
        if (!fs::exists(sample_mask_path(m.root, id))) missing += " masks/" + id + ".png";
        if (!missing.empty()) problems.push_back(id + ": missing" + missing);
    }
    return problems;
}

inline bool matches_paper_split_sizes(const DatasetManifest& m) {
    const int expect = m.split == "train" ? kPaperTrainCount : kPaperTestCount;
    return static_cast<int>(m.ids.size()) == expect;
}

// -------------------------------------------------------------- plane resize ---

namespace detail {

// Corner-aligned bilinear, same convention as the tensor op.
inline std::vector<double> resize_plane_bilinear(const std::vector<double>& src, int h, int w,
                                                 int h2, int w2) {
    if (h == h2 && w == w2) return src;
    std::vector<double> dst(static_cast<size_t>(h2) * w2);
    const double sy = h2 > 1 ? static_cast<double>(h - 1) / (h2 - 1) : 0.0;
    const double sx = w2 > 1 ? static_cast<double>(w - 1) / (w2 - 1) : 0.0;
    for (int i = 0; i < h2; ++i) {
        const double fy = i * sy;
        const int y0 = std::min(static_cast<int>(fy), h - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double ty = fy - y0;
        for (int j = 0; j < w2; ++j) {
            const double fx = j * sx;
            const int x0 = std::min(static_cast<int>(fx), w - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const double tx = fx - x0;
            dst[static_cast<size_t>(i) * w2 + j] =
                (1 - ty) * ((1 - tx) * src[static_cast<size_t>(y0) * w + x0] +
                            tx * src[static_cast<size_t>(y0) * w + x1]) +
                ty * ((1 - tx) * src[static_cast<size_t>(y1) * w + x0] +
                      tx * src[static_cast<size_t>(y1) * w + x1]);
        }
    }
    return dst;
}

inline std::vector<uint8_t> resize_plane_nearest(const std::vector<uint8_t>& src, int h, int w,
                                                 int h2, int w2) {
    if (h == h2 && w == w2) return src;
    std::vector<uint8_t> dst(static_cast<size_t>(h2) * w2);
    for (int i = 0; i < h2; ++i) {
        const int y = std::min(h - 1, static_cast<int>((i + 0.5) * h / h2));
        for (int j = 0; j < w2; ++j) {
            const int x = std::min(w - 1, static_cast<int>((j + 0.5) * w / w2));
            dst[static_cast<size_t>(i) * w2 + j] = src[static_cast<size_t>(y) * w + x];
        }
    }
    return dst;
}

}  // namespace detail

// ------------------------------------------------------------- augmentation ---

/// Network-ready planes, all `size` x `size`: rgb is CHW in [0,1], depth in
/// [0,1], dm and mask binary.
struct NetPlanes {
    int size = 0;
    std::vector<double> rgb;    // 3 * size * size
    std::vector<double> depth;  // size * size
    std::vector<double> dm;     // size * size
    std::vector<double> mask;   // size * size
};

inline constexpr int kCropMargin = 16;  // 400 -> 384 at the paper scale

namespace detail {

struct SamplePlanes {
    std::vector<double> rgb[3];
    std::vector<double> depth;
    std::vector<uint8_t> missing, mask;
    int h = 0, w = 0;
};

inline SamplePlanes split_planes(const Sample& s) {
    SamplePlanes p;
    p.h = s.rgb.height;
    p.w = s.rgb.width;
    const int64_t n = s.rgb.plane_size();
    for (int c = 0; c < 3; ++c) p.rgb[c].resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            p.rgb[c][static_cast<size_t>(i)] = s.rgb.pixels[static_cast<size_t>(i) * 3 + c] / 255.0;
    p.depth.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        p.depth[static_cast<size_t>(i)] = s.depth.pixels[static_cast<size_t>(i)] / 65535.0;
    p.missing = s.missing.pixels;
    p.mask = s.mask.pixels;
    return p;
}

}  // namespace detail

/// Training path: resize to size+16 (bilinear for rgb/depth, nearest for
/// missing/mask), one shared random crop to `size`, one shared coin flip for
/// horizontal mirroring.
inline NetPlanes augment_train(const Sample& s, int size, std::mt19937_64& rng,
                               bool hflip_enabled = true) {
    auto p = detail::split_planes(s);
    const int big = size + kCropMargin;
    std::vector<double> rgb_r[3];
    for (int c = 0; c < 3; ++c)
        rgb_r[c] = detail::resize_plane_bilinear(p.rgb[c], p.h, p.w, big, big);
    auto depth_r = detail::resize_plane_bilinear(p.depth, p.h, p.w, big, big);
    auto miss_r = detail::resize_plane_nearest(p.missing, p.h, p.w, big, big);
    auto mask_r = detail::resize_plane_nearest(p.mask, p.h, p.w, big, big);

    std::uniform_int_distribution<int> off(0, kCropMargin);
    const int oy = off(rng), ox = off(rng);
    const bool flip = hflip_enabled && std::bernoulli_distribution(0.5)(rng);

    NetPlanes out;
    out.size = size;
    out.rgb.resize(static_cast<size_t>(3) * size * size);
    out.depth.resize(static_cast<size_t>(size) * size);
    out.dm.resize(static_cast<size_t>(size) * size);
    out.mask.resize(static_cast<size_t>(size) * size);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const int sj = flip ? size - 1 - j : j;
            const size_t src = static_cast<size_t>(i + oy) * big + (sj + ox);
            const size_t dst = static_cast<size_t>(i) * size + j;
            for (int c = 0; c < 3; ++c)
                out.rgb[static_cast<size_t>(c) * size * size + dst] = rgb_r[c][src];
            out.depth[dst] = depth_r[src];
            out.dm[dst] = miss_r[src];
            out.mask[dst] = mask_r[src];
        }
    return out;
}

/// Evaluation path: deterministic resize straight to `size`, no crop or flip.
inline NetPlanes prepare_eval(const Sample& s, int size) {
    auto p = detail::split_planes(s);
    NetPlanes out;
    out.size = size;
    out.rgb.resize(static_cast<size_t>(3) * size * size);
    for (int c = 0; c < 3; ++c) {
        auto r = detail::resize_plane_bilinear(p.rgb[c], p.h, p.w, size, size);
        std::copy(r.begin(), r.end(), out.rgb.begin() + static_cast<int64_t>(c) * size * size);
    }
    out.depth = detail::resize_plane_bilinear(p.depth, p.h, p.w, size, size);
    auto miss_r = detail::resize_plane_nearest(p.missing, p.h, p.w, size, size);
    auto mask_r = detail::resize_plane_nearest(p.mask, p.h, p.w, size, size);
    out.dm.assign(miss_r.begin(), miss_r.end());
    out.mask.assign(mask_r.begin(), mask_r.end());
    return out;
}

// ------------------------------------------------------------------- stats ---

inline constexpr int kStatsGrid = 256;

/// Pixelwise mean of all masks on a common 256x256 grid.
inline std::vector<double> location_distribution(const std::vector<ImageU8>& masks) {
    if (masks.empty()) throw ValueError("location_distribution: no masks");
    std::vector<double> acc(static_cast<size_t>(kStatsGrid) * kStatsGrid, 0.0);
    for (const ImageU8& m : masks) {
        const auto r = detail::resize_plane_nearest(m.pixels, m.height, m.width, kStatsGrid,
                                                    kStatsGrid);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += r[i];
    }
    for (double& v : acc) v /= static_cast<double>(masks.size());
    return acc;
}

/// Chi-squared distance between the glass and non-glass RGB histograms,
/// averaged over the three channels. Both regions must be non-empty.
inline double color_contrast_chi2(const ImageU8& rgb, const ImageU8& mask) {
    if (rgb.channels != 3) throw ValueError("color_contrast_chi2: rgb must have 3 channels");
    if (rgb.height != mask.height || rgb.width != mask.width)
        throw ShapeError("color_contrast_chi2: size mismatch");
    const int64_t n = rgb.plane_size();
    int64_t n_glass = 0;
    for (uint8_t v : mask.pixels) n_glass += v != 0;
    if (n_glass == 0 || n_glass == n)
        throw ValueError("color_contrast_chi2: both regions must be non-empty");
    constexpr double eps = 1e-12;
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        double ha[256] = {0}, hb[256] = {0};
        for (int64_t i = 0; i < n; ++i) {
            const uint8_t value = rgb.pixels[static_cast<size_t>(i) * 3 + c];
            (mask.pixels[static_cast<size_t>(i)] ? ha : hb)[value] += 1.0;
        }
        double chi = 0.0;
        for (int b = 0; b < 256; ++b) {
            const double a = ha[b] / static_cast<double>(n_glass);
            const double q = hb[b] / static_cast<double>(n - n_glass);
            chi += (a - q) * (a - q) / (a + q + eps);
        }
        total += 0.5 * chi;
    }
    return total / 3.0;
}

/// Glass area over image area.
inline double area_ratio(const ImageU8& mask) {
    if (mask.pixels.empty()) throw ValueError("area_ratio: empty mask");
    int64_t on = 0;
    for (uint8_t v : mask.pixels) on += v != 0;
    return static_cast<double>(on) / static_cast<double>(mask.pixels.size());
}

// --------------------------------------------------------------- synthetics ---

struct SynthConfig {
    int size = 96;
    int n_rects_min = 1;
    int n_rects_max = 3;
    double p_missing_in_glass = 0.4;
    double p_missing_outside = 0.02;
    double noise = 6.0;             // rgb noise amplitude, 8-bit units
    double glass_visibility = 1.0;  // 0 = glass is visually identical to background
    double depth_ramp = 1.0;        // 0 = depth carries no scene structure, only holes
    uint64_t seed = 0;

    void validate() const {
        if (size < 16) throw ConfigError("synth: size must be >= 16");
        if (n_rects_min < 1 || n_rects_max < n_rects_min)
            throw ConfigError("synth: invalid rectangle count range");
        if (!(p_missing_outside >= 0.0 && p_missing_outside < p_missing_in_glass &&
              p_missing_in_glass <= 1.0))
            throw ConfigError("synth: need 0 <= p_missing_outside < p_missing_in_glass <= 1");
        if (glass_visibility < 0.0 || glass_visibility > 1.0)
            throw ConfigError("synth: glass_visibility must be in [0,1]");
        if (depth_ramp < 0.0 || depth_ramp > 1.0)
            throw ConfigError("synth: depth_ramp must be in [0,1]");
    }
};

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::vector<double> box_blur3(const std::vector<double>& src, int h, int w) {
    std::vector<double> dst(src.size());
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double s = 0.0;
            int cnt = 0;
            for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                    const int y = i + di, x = j + dj;
                    if (y < 0 || y >= h || x < 0 || x >= w) continue;
                    s += src[static_cast<size_t>(y) * w + x];
                    ++cnt;
                }
            dst[static_cast<size_t>(i) * w + j] = s / cnt;
        }
    return dst;
}

// Smooth scalar field from a few random gaussian bumps plus a little jitter;
// thresholding it at a quantile yields spatially clustered hole blobs.
inline std::vector<double> blob_field(int size, std::mt19937_64& rng) {
    std::vector<double> f(static_cast<size_t>(size) * size, 0.0);
    std::uniform_real_distribution<double> pos(0.0, size);
    std::uniform_real_distribution<double> radius(size / 16.0, size / 5.0);
    std::uniform_real_distribution<double> amp(0.5, 1.5);
    const int bumps = 8;
    for (int b = 0; b < bumps; ++b) {
        const double cx = pos(rng), cy = pos(rng), r = radius(rng), a = amp(rng);
        const double inv = 1.0 / (2.0 * r * r);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                const double d2 = (i - cy) * (i - cy) + (j - cx) * (j - cx);
                f[static_cast<size_t>(i) * size + j] += a * std::exp(-d2 * inv);
            }
    }
    std::uniform_real_distribution<double> jitter(0.0, 1e-3);
    for (double& v : f) v += jitter(rng);  // break ties for exact quantiles
    return f;
}

// Marks round(p * |idx|) entries as holes, picking the largest field values
// so the holes cluster inside blob maxima.
inline void mark_holes(const std::vector<int64_t>& idx, const std::vector<double>& field, double p,
                       std::vector<uint8_t>& holes) {
    const int64_t want = std::llround(p * static_cast<double>(idx.size()));
    if (want <= 0) return;
    std::vector<int64_t> order = idx;
    std::nth_element(order.begin(), order.begin() + (want - 1), order.end(),
                     [&](int64_t a, int64_t b) { return field[static_cast<size_t>(a)] > field[static_cast<size_t>(b)]; });
    for (int64_t i = 0; i < want; ++i) holes[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
}

}  // namespace detail

/// Deterministic synthetic RGB-D glass scene. The rng stream is derived from
/// (cfg.seed, index), so samples are independent and reproducible.
inline Sample synth_scene(const SynthConfig& cfg, int64_t index) {
    cfg.validate();
    std::mt19937_64 rng(detail::splitmix64(cfg.seed ^ detail::splitmix64(static_cast<uint64_t>(index) + 1)));
    const int S = cfg.size;
    const int64_t n = static_cast<int64_t>(S) * S;

    // background: per-channel linear gradient plus iid noise
    std::uniform_real_distribution<double> base(60.0, 190.0);
    std::uniform_real_distribution<double> slope(-70.0, 70.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> bg[3];
    for (int c = 0; c < 3; ++c) {
        bg[c].resize(static_cast<size_t>(n));
        const double b0 = base(rng), gx = slope(rng), gy = slope(rng);
        for (int i = 0; i < S; ++i)
            for (int j = 0; j < S; ++j)
                bg[c][static_cast<size_t>(i) * S + j] =
                    b0 + gx * j / S + gy * i / S + cfg.noise * (unit(rng) - 0.5);
    }

    // glass rectangles
    std::uniform_int_distribution<int> n_rects(cfg.n_rects_min, cfg.n_rects_max);
    std::uniform_int_distribution<int> extent(S / 4, S / 2);
    ImageU8 mask{S, S, 1, std::vector<uint8_t>(static_cast<size_t>(n), 0)};
    const int rects = n_rects(rng);
    for (int r = 0; r < rects; ++r) {
        const int rw = extent(rng), rh = extent(rng);
        std::uniform_int_distribution<int> px(0, S - rw), py(0, S - rh);
        const int x0 = px(rng), y0 = py(rng);
        for (int i = y0; i < y0 + rh; ++i)
            for (int j = x0; j < x0 + rw; ++j) mask.pixels[static_cast<size_t>(i) * S + j] = 1;
    }

    // glass appearance: blend toward a blurred, slightly attenuated copy
    const double vis = cfg.glass_visibility;
    if (vis > 0.0) {
        for (int c = 0; c < 3; ++c) {
            const auto blurred = detail::box_blur3(bg[c], S, S);
            for (int64_t i = 0; i < n; ++i)
                if (mask.pixels[static_cast<size_t>(i)])
                    bg[c][static_cast<size_t>(i)] =
                        (1.0 - vis) * bg[c][static_cast<size_t>(i)] +
                        vis * 0.85 * blurred[static_cast<size_t>(i)];
        }
    }

    ImageU8 rgb{S, S, 3, std::vector<uint8_t>(static_cast<size_t>(n) * 3)};
    for (int64_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            rgb.pixels[static_cast<size_t>(i) * 3 + c] = static_cast<uint8_t>(
                std::clamp(std::llround(bg[c][static_cast<size_t>(i)]), 0ll, 255ll));

    // depth: planar ramp; the glass is transparent to the sensor, so the ramp
    // continues through it and only the holes betray the surface. With
    // depth_ramp = 0 the plane is sensor noise alone and min-max
    // normalization stretches it across the full range, leaving the missing
    // pixels as the only usable depth cue.
    std::uniform_real_distribution<double> dslope(-1.0, 1.0);
    const double dx = dslope(rng), dy = dslope(rng);
    std::vector<double> raw(static_cast<size_t>(n));
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j)
            raw[static_cast<size_t>(i) * S + j] =
                2000.0 + cfg.depth_ramp * 1500.0 * (dx * j / S + dy * i / S) + 40.0 * unit(rng);

    // clustered holes at the configured per-region rates
    std::vector<uint8_t> holes(static_cast<size_t>(n), 0);
    const auto field = detail::blob_field(S, rng);
    std::vector<int64_t> inside, outside;
    for (int64_t i = 0; i < n; ++i)
        (mask.pixels[static_cast<size_t>(i)] ? inside : outside).push_back(i);
    detail::mark_holes(inside, field, cfg.p_missing_in_glass, holes);
    detail::mark_holes(outside, field, cfg.p_missing_outside, holes);

    std::vector<uint8_t> valid(holes.size());
    for (size_t i = 0; i < holes.size(); ++i) valid[i] = holes[i] ? 0 : 1;

    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth_%08lld", static_cast<long long>(index));
    Sample s;
    s.id = idbuf;
    s.rgb = std::move(rgb);
    s.depth = normalize_depth(raw, valid, S, S);
    s.missing = missing_map(s.depth);
    s.mask = std::move(mask);
    s.validate();
    return s;
}

}  // namespace glassdet
