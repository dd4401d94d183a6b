#pragma once

#include "glassdet/network.hpp"
#include "glassdet/train.hpp"

#include <fstream>
#include <map>
#include <string>

namespace glassdet {

/// Run settings shared by the CLI commands. Defaults echo the training recipe
/// (130 epochs, batch 14, lr 1e-4 dropped 10x after epoch 120, random crop
/// from a 16-pixel margin, horizontal flips).
struct RunConfig {
    std::string dataset_root;
    std::string split = "train";
    std::string profile = "toy";  // toy | paper
    uint64_t seed = 0;
    int epochs = 130;
    int batch_size = 14;
    double lr = 1e-4;
    std::string out_dir = "run";
    bool augment = true;
    bool hflip = true;
    int64_t max_steps = 0;
    int input_size = 0;  // 0 = the profile's native size

    NetworkConfig network() const {
        NetworkConfig cfg;
        if (profile == "toy") cfg = NetworkConfig::toy();
        else if (profile == "paper") cfg = NetworkConfig::paper();
        else throw ConfigError("unknown profile '" + profile + "' (expected toy or paper)");
        if (input_size > 0) cfg.backbone.input_size = input_size;
        return cfg;
    }

    TrainConfig train() const {
        TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.lr = lr;
        tc.seed = seed;
        tc.augment = augment;
        tc.hflip = hflip;
        tc.max_steps = max_steps;
        tc.out_dir = out_dir;
        return tc;
    }
};

namespace config_detail {

enum class KeyType { integer, real, text, boolean };

inline const std::map<std::string, KeyType>& schema() {
    static const std::map<std::string, KeyType> s{
        {"dataset_root", KeyType::text}, {"split", KeyType::text},
        {"profile", KeyType::text},      {"seed", KeyType::integer},
        {"epochs", KeyType::integer},    {"batch_size", KeyType::integer},
        {"lr", KeyType::real},           {"out_dir", KeyType::text},
        {"augment", KeyType::boolean},   {"hflip", KeyType::boolean},
        {"max_steps", KeyType::integer}, {"input_size", KeyType::integer},
    };
    return s;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

}  // namespace config_detail

/// Applies one `key = value` assignment after schema validation.
inline void apply_config_entry(RunConfig& rc, const std::string& key, const std::string& value) {
    using namespace config_detail;
    const auto it = schema().find(key);
    if (it == schema().end()) throw ConfigError("unknown config key '" + key + "'");
    try {
        switch (it->second) {
            case KeyType::integer:
                if (key == "seed") rc.seed = std::stoull(value);
                else if (key == "epochs") rc.epochs = std::stoi(value);
                else if (key == "batch_size") rc.batch_size = std::stoi(value);
                else if (key == "max_steps") rc.max_steps = std::stoll(value);
                else if (key == "input_size") rc.input_size = std::stoi(value);
                break;
            case KeyType::real:
                rc.lr = std::stod(value);
                break;
            case KeyType::boolean:
                if (key == "augment") rc.augment = parse_bool(value, key);
                else rc.hflip = parse_bool(value, key);
                break;
            case KeyType::text:
                if (key == "dataset_root") rc.dataset_root = value;
                else if (key == "split") rc.split = value;
                else if (key == "profile") rc.profile = value;
                else rc.out_dir = value;
                break;
        }
    } catch (const std::invalid_argument&) {
        throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("config key '" + key + "': value out of range '" + value + "'");
    }
    if (rc.epochs < 0 || rc.batch_size < 1)
        throw ConfigError("config: epochs must be >= 0 and batch_size >= 1");
    if (rc.lr <= 0.0) throw ConfigError("config: lr must be positive");
}

/// Flat `key = value` file with `#` comments.
inline RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = config_detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                              ": expected 'key = value'");
        apply_config_entry(base, config_detail::trim(t.substr(0, eq)),
                           config_detail::trim(t.substr(eq + 1)));
    }
    return base;
}

}  // namespace glassdet
