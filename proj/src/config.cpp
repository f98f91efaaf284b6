// SPDX-License-Identifier: Apache-2.0

#include "aliif/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace aliif {

namespace {

std::string trim(const std::string& s) {
    const size_t b = s.find_first_not_of(" \t\r");
    const size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& value) {
    int out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size())
        throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
    return out;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size())
        throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" +
                          value + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const double out = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

void validate(const TrainConfig& cfg) {
    if (cfg.dataset_dir.empty()) throw ConfigError("config is missing required key dataset_dir");
    if (cfg.k < 1) throw ConfigError("K must be ≥ 1");
    if (cfg.d < 1) throw ConfigError("d must be ≥ 1");
    if (cfg.b < 1) throw ConfigError("b must be ≥ 1");
    if (cfg.mlp_layers < 1 || cfg.expansion_layers < 1)
        throw ConfigError("layer counts must be ≥ 1");
    if (cfg.mlp_hidden < 1 || cfg.expansion_hidden < 1)
        throw ConfigError("hidden widths must be ≥ 1");
    if (cfg.patch_size < 8) throw ConfigError("patch_size must be ≥ 8");
    if (cfg.pixels_per_patch < 1) throw ConfigError("pixels_per_patch must be ≥ 1");
    if (cfg.pixels_per_patch > cfg.patch_size * cfg.patch_size)
        throw ConfigError("pixels_per_patch must not exceed patch_size^2");
    if (cfg.scale_min < 1.0 || cfg.scale_max > 8.0 || cfg.scale_min > cfg.scale_max)
        throw ConfigError("scale range must satisfy 1 ≤ scale_min ≤ scale_max ≤ 8");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be ≥ 1");
    if (cfg.epochs < 1) throw ConfigError("epochs must be ≥ 1");
    if (cfg.iters_per_epoch < 1) throw ConfigError("iters_per_epoch must be ≥ 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
    if (cfg.lr_decay_every < 1) throw ConfigError("lr_decay_every must be ≥ 1");
    if (cfg.checkpoint_out.empty()) throw ConfigError("checkpoint_out must not be empty");
}

}  // namespace

TrainConfig parse_train_config_text(const std::string& text, const std::string& origin) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");

        if (key == "dataset_dir") {
            cfg.dataset_dir = value;
        } else if (key == "mode") {
            if (value == "liif")
                cfg.mode = Mode::liif;
            else if (value == "aliif")
                cfg.mode = Mode::aliif;
            else
                throw ConfigError("config key 'mode': expected liif or aliif, got '" + value +
                                  "'");
        } else if (key == "k") {
            cfg.k = parse_int(key, value);
        } else if (key == "d") {
            cfg.d = parse_int(key, value);
        } else if (key == "b") {
            cfg.b = parse_int(key, value);
        } else if (key == "mlp_layers") {
            cfg.mlp_layers = parse_int(key, value);
        } else if (key == "mlp_hidden") {
            cfg.mlp_hidden = parse_int(key, value);
        } else if (key == "expansion_layers") {
            cfg.expansion_layers = parse_int(key, value);
        } else if (key == "expansion_hidden") {
            cfg.expansion_hidden = parse_int(key, value);
        } else if (key == "outer_relu") {
            cfg.outer_relu = parse_bool(key, value);
        } else if (key == "share_ensemble_weights") {
            cfg.share_ensemble_weights = parse_bool(key, value);
        } else if (key == "patch_size") {
            cfg.patch_size = parse_int(key, value);
        } else if (key == "pixels_per_patch") {
            cfg.pixels_per_patch = parse_int(key, value);
        } else if (key == "scale_min") {
            cfg.scale_min = parse_double(key, value);
        } else if (key == "scale_max") {
            cfg.scale_max = parse_double(key, value);
        } else if (key == "integer_scales") {
            cfg.integer_scales = parse_bool(key, value);
        } else if (key == "batch_size") {
            cfg.batch_size = parse_int(key, value);
        } else if (key == "epochs") {
            cfg.epochs = parse_int(key, value);
        } else if (key == "iters_per_epoch") {
            cfg.iters_per_epoch = parse_int(key, value);
        } else if (key == "lr") {
            cfg.lr = parse_double(key, value);
        } else if (key == "lr_decay_every") {
            cfg.lr_decay_every = parse_int(key, value);
        } else if (key == "seed") {
            cfg.seed = parse_u64(key, value);
        } else if (key == "checkpoint_out") {
            cfg.checkpoint_out = value;
        } else if (key == "loss_csv") {
            cfg.loss_csv = value;
        } else {
            throw ConfigError("unknown config key: " + key);
        }
    }
    validate(cfg);
    return cfg;
}

TrainConfig parse_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_train_config_text(text.str(), path);
}

}  // namespace aliif
