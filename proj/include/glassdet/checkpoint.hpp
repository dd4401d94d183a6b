#pragma once

#include "glassdet/nn.hpp"
#include "glassdet/optim.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

namespace glassdet {

// Checkpoint container: "GDCK" magic, u32 version, a JSON metadata blob, then
// named little-endian f64 tensors (parameters, buffers, optimizer moments).
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: unexpected end of file");
    return v;
}

inline void write_entry(std::ostream& os, const std::string& name, const Shape& shape,
                        const std::vector<double>& data) {
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint32_t>(shape.size()));
    for (int d : shape) write_pod(os, static_cast<int64_t>(d));
    write_pod(os, static_cast<uint64_t>(data.size()));
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
}

struct RawEntry {
    Shape shape;
    std::vector<double> data;
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const StateDict& sd,
                            const nlohmann::json& meta, const AdamOptimizer* opt = nullptr) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write("GDCK", 4);
    detail::write_pod(os, kCheckpointVersion);
    nlohmann::json full = meta;
    if (opt) {
        full["optimizer"] = {{"step_count", opt->step_count},
                             {"lr", opt->lr},
                             {"beta1", opt->beta1},
                             {"beta2", opt->beta2},
                             {"eps", opt->eps}};
    }
    const std::string js = full.dump();
    detail::write_pod(os, static_cast<uint64_t>(js.size()));
    os.write(js.data(), static_cast<std::streamsize>(js.size()));

    uint64_t count = sd.params.size() + sd.buffers.size();
    if (opt) count += 2 * opt->params.size();
    detail::write_pod(os, count);
    for (const auto& [name, t] : sd.params) detail::write_entry(os, name, t.shape(), t.data());
    for (const auto& [name, t] : sd.buffers) detail::write_entry(os, name, t.shape(), t.data());
    if (opt) {
        for (size_t i = 0; i < opt->params.size(); ++i) {
            const auto& name = sd.params[i].first;
            detail::write_entry(os, "opt.m:" + name, opt->params[i].shape(), opt->m[i]);
            detail::write_entry(os, "opt.v:" + name, opt->params[i].shape(), opt->v[i]);
        }
    }
    if (!os) throw IoError("failed while writing checkpoint " + path.string());
}

/// Reads the metadata blob without loading tensors.
inline nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read checkpoint " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GDCK", 4) != 0)
        throw IoError("not a checkpoint file: " + path.string());
    const auto version = detail::read_pod<uint32_t>(is);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto len = detail::read_pod<uint64_t>(is);
    std::string js(len, '\0');
    is.read(js.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("checkpoint: truncated metadata");
    return nlohmann::json::parse(js);
}

/// Loads parameters and buffers into an existing state dict (strict name and
/// shape matching) and, when given, the optimizer moments. Mismatches raise
/// with the full list of missing/extra names.
inline nlohmann::json load_checkpoint(const std::filesystem::path& path, StateDict& sd,
                                      AdamOptimizer* opt = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read checkpoint " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GDCK", 4) != 0)
        throw IoError("not a checkpoint file: " + path.string());
    const auto version = detail::read_pod<uint32_t>(is);
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto len = detail::read_pod<uint64_t>(is);
    std::string js(len, '\0');
    is.read(js.data(), static_cast<std::streamsize>(len));
    const nlohmann::json meta = nlohmann::json::parse(js);

    const auto count = detail::read_pod<uint64_t>(is);
    std::map<std::string, detail::RawEntry> entries;
    for (uint64_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_pod<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rank = detail::read_pod<uint32_t>(is);
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d)
            shape[d] = static_cast<int>(detail::read_pod<int64_t>(is));
        const auto n = detail::read_pod<uint64_t>(is);
        std::vector<double> data(n);
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) throw IoError("checkpoint: truncated tensor " + name);
        entries.emplace(std::move(name), detail::RawEntry{std::move(shape), std::move(data)});
    }

    std::string missing, extra;
    auto take = [&](const std::string& name, Tensor& t) {
        auto it = entries.find(name);
        if (it == entries.end()) {
            missing += " " + name;
            return;
        }
        if (it->second.shape != t.shape())
            throw IoError("checkpoint: shape mismatch for " + name + ": file " +
                          shape_str(it->second.shape) + " vs model " + shape_str(t.shape()));
        t.data() = std::move(it->second.data);
        entries.erase(it);
    };
    for (auto& [name, t] : sd.params) take(name, t);
    for (auto& [name, t] : sd.buffers) take(name, t);
    if (opt) {
        if (meta.contains("optimizer")) {
            opt->step_count = meta["optimizer"]["step_count"].get<int64_t>();
            opt->lr = meta["optimizer"]["lr"].get<double>();
        }
        for (size_t i = 0; i < opt->params.size(); ++i) {
            const auto& name = sd.params[i].first;
            for (auto* buf : {&opt->m[i], &opt->v[i]}) {
                const std::string key = (buf == &opt->m[i] ? "opt.m:" : "opt.v:") + name;
                auto it = entries.find(key);
                if (it != entries.end()) {
                    *buf = std::move(it->second.data);
                    entries.erase(it);
                }
            }
        }
    }
    for (const auto& [name, e] : entries)
        if (name.rfind("opt.", 0) != 0) extra += " " + name;
    if (!missing.empty() || !extra.empty())
        throw IoError("checkpoint/model mismatch:" +
                      (missing.empty() ? "" : " missing[" + missing + " ]") +
                      (extra.empty() ? "" : " extra[" + extra + " ]"));
    return meta;
}

}  // namespace glassdet
