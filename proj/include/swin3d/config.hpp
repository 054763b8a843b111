#pragma once

// Flat `key = value` run configuration covering the model, training and data
// paths. Lines starting with `#` (and trailing `# ...`) are comments.

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "swin3d/model.hpp"
#include "swin3d/train.hpp"

namespace swin3d {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::vector<std::string> data;  // movie files
    std::string log;                // training log, appended
    std::string static_maps;        // one-frame movie holding the static channels
    std::string dtype = "float";    // float | double

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static std::vector<std::string> keys();
    /// Keys stored inside checkpoints: the model keys plus `normalize`.
    static std::vector<std::string> checkpoint_keys();

    /// Every key with its effective value, one `key = value` per line.
    std::string to_text() const;
    /// Only the checkpoint keys.
    std::string checkpoint_text() const;

    void validate() const {
        model.validate();
        train.validate();
        if (dtype != "float" && dtype != "double") throw ConfigError("dtype must be float or double, got '" + dtype + "'");
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    if (!s.empty() && s.back() == ',') out.push_back("");
    return out;
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(v)) out.push_back(parse_size(key, item));
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
    return out;
}

inline Extent3 parse_extent(const std::string& key, const std::string& v) {
    auto l = parse_sizes(key, v);
    if (l.size() != 3) throw ConfigError(key + ": expected three comma-separated extents (t,h,w), got '" + v + "'");
    return {l[0], l[1], l[2]};
}

inline std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}
inline std::string fmt(std::size_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(const Extent3& e) { return fmt(e[0]) + "," + fmt(e[1]) + "," + fmt(e[2]); }
inline std::string fmt(const std::vector<std::size_t>& l) {
    std::string out;
    for (auto v : l) out += (out.empty() ? "" : ",") + fmt(v);
    return out;
}

struct Field {
    const char* key;
    bool stored;  // written into checkpoints
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define SWIN3D_FIELD(KEY, STORED, MEMBER, PARSE)                                              \
    Field {                                                                                  \
        KEY, STORED, [](const RunConfig& c) { return fmt(c.MEMBER); },                         \
            [](RunConfig& c, const std::string& v) { c.MEMBER = PARSE(KEY, v); }              \
    }

inline const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        SWIN3D_FIELD("embed_dim", true, model.embed_dim, parse_size),
        SWIN3D_FIELD("heads", true, model.heads, parse_size),
        SWIN3D_FIELD("patch_size", true, model.patch_size, parse_extent),
        SWIN3D_FIELD("window", true, model.window, parse_extent),
        SWIN3D_FIELD("shift", true, model.shift, parse_extent),
        SWIN3D_FIELD("encoder_depths", true, model.encoder_depths, parse_sizes),
        SWIN3D_FIELD("neck_depth", true, model.neck_depth, parse_size),
        SWIN3D_FIELD("decoder_depths", true, model.decoder_depths, parse_sizes),
        SWIN3D_FIELD("mlp_ratio", true, model.mlp_ratio, parse_double),
        SWIN3D_FIELD("mlp_activation", true, model.mlp_activation, parse_bool),
        SWIN3D_FIELD("qkv_bias", true, model.qkv_bias, parse_bool),
        SWIN3D_FIELD("shifted_first", true, model.shifted_first, parse_bool),
        SWIN3D_FIELD("mix_features", true, model.mix_features, parse_bool),
        SWIN3D_FIELD("static_channels", true, model.static_channels, parse_size),
        Field{"merge_mode", true, [](const RunConfig& c) { return to_string(c.model.merge_mode); },
              [](RunConfig& c, const std::string& v) { c.model.merge_mode = parse_merge_mode(v); }},
        SWIN3D_FIELD("lr_init", false, train.lr_init, parse_double),
        SWIN3D_FIELD("lr_min", false, train.lr_min, parse_double),
        SWIN3D_FIELD("plateau_factor", false, train.plateau_factor, parse_double),
        SWIN3D_FIELD("plateau_patience", false, train.plateau_patience, parse_size),
        SWIN3D_FIELD("plateau_min_delta", false, train.plateau_min_delta, parse_double),
        SWIN3D_FIELD("batch_size", false, train.batch_size, parse_size),
        SWIN3D_FIELD("max_epochs", false, train.max_epochs, parse_size),
        SWIN3D_FIELD("val_fraction", false, train.val_fraction, parse_double),
        SWIN3D_FIELD("adam_beta1", false, train.beta1, parse_double),
        SWIN3D_FIELD("adam_beta2", false, train.beta2, parse_double),
        SWIN3D_FIELD("adam_eps", false, train.adam_eps, parse_double),
        SWIN3D_FIELD("grad_clip", false, train.grad_clip, parse_double),
        SWIN3D_FIELD("normalize", true, train.normalize, parse_bool),
        SWIN3D_FIELD("augment", false, train.augment, parse_bool),
        SWIN3D_FIELD("permute_channels", false, train.permute_channels, parse_bool),
        Field{"seed", false, [](const RunConfig& c) { return fmt(std::size_t(c.train.seed)); },
              [](RunConfig& c, const std::string& v) { c.train.seed = parse_size("seed", v); }},
        Field{"data", false,
              [](const RunConfig& c) {
                  std::string out;
                  for (const auto& p : c.data) out += (out.empty() ? "" : ",") + p;
                  return out;
              },
              [](RunConfig& c, const std::string& v) {
                  c.data.clear();
                  if (!v.empty())
                      for (auto& p : split_list(v)) c.data.push_back(p);
              }},
        Field{"static_maps", false, [](const RunConfig& c) { return c.static_maps; },
              [](RunConfig& c, const std::string& v) { c.static_maps = v; }},
        Field{"log", false, [](const RunConfig& c) { return c.log; }, [](RunConfig& c, const std::string& v) { c.log = v; }},
        Field{"dtype", false, [](const RunConfig& c) { return c.dtype; },
              [](RunConfig& c, const std::string& v) { c.dtype = v; }},
    };
    return all;
}

#undef SWIN3D_FIELD

inline const Field& field(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace config_detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
    config_detail::field(key).set(*this, config_detail::trim(value));
}

inline std::string RunConfig::get(const std::string& key) const { return config_detail::field(key).get(*this); }

inline std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& f : config_detail::fields()) out.push_back(f.key);
    return out;
}

inline std::vector<std::string> RunConfig::checkpoint_keys() {
    std::vector<std::string> out;
    for (const auto& f : config_detail::fields())
        if (f.stored) out.push_back(f.key);
    return out;
}

inline std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& f : config_detail::fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
    return out;
}

inline std::string RunConfig::checkpoint_text() const {
    std::string out;
    for (const auto& f : config_detail::fields())
        if (f.stored) out += std::string(f.key) + " = " + f.get(*this) + "\n";
    return out;
}

/// Applies `key = value` lines from `text` on top of `base`. Errors name the
/// source and line.
inline RunConfig parse_run_config(const std::string& text, const std::string& source = "config",
                                  RunConfig base = RunConfig{}) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        try {
            if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + line + "'");
            base.set(config_detail::trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = RunConfig{}) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str(), path, std::move(base));
}

/// Applies a `key=value` override such as a `--set` flag.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    cfg.set(config_detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// Configuration stored in a checkpoint; only checkpoint keys are accepted.
inline RunConfig run_config_from_checkpoint(const std::string& text) {
    const auto cfg = parse_run_config(text, "checkpoint config");
    const auto stored = RunConfig::checkpoint_keys();
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const auto key = config_detail::trim(line.substr(0, eq));
        if (std::find(stored.begin(), stored.end(), key) == stored.end()) {
            throw ConfigError("checkpoint config holds unexpected key '" + key + "'");
        }
    }
    cfg.model.validate();
    return cfg;
}

}  // namespace swin3d
