#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "dkmd/backbone.hpp"
#include "dkmd/error.hpp"

namespace dkmd {

// Everything a command needs, collected from a flat key=value config file
// with CLI flags as overrides. Relative paths in the file resolve against
// the file's directory, so a run is reproducible from the config alone.
struct RunConfig {
    // paths
    std::string corpus;
    std::string val_corpus;  // optional held-out dialogs
    std::string kb;
    std::string features;
    std::string vocab;
    std::string checkpoint;
    std::string out = "out";

    // model
    std::size_t dim = 32;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t ffn_dim = 0;       // 0: defaults to 4 * dim
    std::size_t max_positions = 64;
    std::size_t image_dim = 512;
    std::size_t k = 1;
    std::size_t fusion_layer = 0;  // 0: defaults to ceil(layers / 2)
    std::string variant = "full";

    // trainer / generation
    double lr = 1e-3;
    std::uint64_t epochs = 500;
    std::size_t batch_size = 1;
    std::uint64_t seed = 7;
    std::uint64_t checkpoint_every = 0;
    std::size_t window = 2;
    std::size_t min_freq = 1;
    std::size_t max_len = 16;

    std::size_t effective_ffn_dim() const { return ffn_dim == 0 ? 4 * dim : ffn_dim; }
    std::size_t effective_fusion_layer() const { return fusion_layer == 0 ? (layers + 1) / 2 : fusion_layer; }

    ModelConfig model_config(std::size_t vocab_size) const {
        ModelConfig c;
        c.dim = dim;
        c.layers = layers;
        c.heads = heads;
        c.ffn_dim = effective_ffn_dim();
        c.max_positions = max_positions;
        c.vocab_size = vocab_size;
        c.image_dim = image_dim;
        c.retrieval_k = k;
        c.fusion_layer = effective_fusion_layer();
        c.variant = parse_variant(variant);
        c.validate();
        return c;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& value) {
    try {
        return static_cast<std::size_t>(std::stoull(value));
    } catch (...) {
        throw Error(ErrorCategory::config, "config key '" + key + "': bad integer '" + value + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        return std::stod(value);
    } catch (...) {
        throw Error(ErrorCategory::config, "config key '" + key + "': bad number '" + value + "'");
    }
}

}  // namespace detail

inline void apply_config_entry(RunConfig& rc, const std::string& key, const std::string& value,
                               const std::filesystem::path& base) {
    auto path_of = [&](const std::string& v) {
        std::filesystem::path p(v);
        return p.is_absolute() || base.empty() ? p.string() : (base / p).string();
    };
    if (key == "corpus") rc.corpus = path_of(value);
    else if (key == "val_corpus") rc.val_corpus = path_of(value);
    else if (key == "kb") rc.kb = path_of(value);
    else if (key == "features") rc.features = path_of(value);
    else if (key == "vocab") rc.vocab = path_of(value);
    else if (key == "checkpoint") rc.checkpoint = path_of(value);
    else if (key == "out") rc.out = path_of(value);
    else if (key == "dim") rc.dim = detail::parse_size(key, value);
    else if (key == "layers") rc.layers = detail::parse_size(key, value);
    else if (key == "heads") rc.heads = detail::parse_size(key, value);
    else if (key == "ffn_dim") rc.ffn_dim = detail::parse_size(key, value);
    else if (key == "max_positions") rc.max_positions = detail::parse_size(key, value);
    else if (key == "image_dim") rc.image_dim = detail::parse_size(key, value);
    else if (key == "k") rc.k = detail::parse_size(key, value);
    else if (key == "fusion_layer") rc.fusion_layer = detail::parse_size(key, value);
    else if (key == "variant") rc.variant = value;
    else if (key == "lr") rc.lr = detail::parse_double(key, value);
    else if (key == "epochs") rc.epochs = detail::parse_size(key, value);
    else if (key == "batch_size") rc.batch_size = detail::parse_size(key, value);
    else if (key == "seed") rc.seed = detail::parse_size(key, value);
    else if (key == "checkpoint_every") rc.checkpoint_every = detail::parse_size(key, value);
    else if (key == "window") rc.window = detail::parse_size(key, value);
    else if (key == "min_freq") rc.min_freq = detail::parse_size(key, value);
    else if (key == "max_len") rc.max_len = detail::parse_size(key, value);
    else throw Error(ErrorCategory::config, "unknown config key '" + key + "'");
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCategory::io, "cannot open config " + path);
    RunConfig rc;
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCategory::config,
                        path + ":" + std::to_string(lineno) + ": expected 'key = value'");
        apply_config_entry(rc, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)), base);
    }
    return rc;
}

inline void require_readable(const std::string& path, const std::string& what) {
    if (path.empty()) throw Error(ErrorCategory::config, what + " path not set");
    if (!std::filesystem::exists(path)) throw Error(ErrorCategory::io, what + " not found: " + path);
}

// Effective-config echo, embedded in every JSON artifact a command writes.
inline nlohmann::ordered_json config_json(const RunConfig& rc) {
    nlohmann::ordered_json j;
    j["corpus"] = rc.corpus;
    j["val_corpus"] = rc.val_corpus;
    j["kb"] = rc.kb;
    j["features"] = rc.features;
    j["vocab"] = rc.vocab;
    j["checkpoint"] = rc.checkpoint;
    j["out"] = rc.out;
    j["dim"] = rc.dim;
    j["layers"] = rc.layers;
    j["heads"] = rc.heads;
    j["ffn_dim"] = rc.effective_ffn_dim();
    j["max_positions"] = rc.max_positions;
    j["image_dim"] = rc.image_dim;
    j["k"] = rc.k;
    j["fusion_layer"] = rc.effective_fusion_layer();
    j["variant"] = rc.variant;
    j["lr"] = rc.lr;
    j["epochs"] = rc.epochs;
    j["batch_size"] = rc.batch_size;
    j["seed"] = rc.seed;
    j["checkpoint_every"] = rc.checkpoint_every;
    j["window"] = rc.window;
    j["min_freq"] = rc.min_freq;
    j["max_len"] = rc.max_len;
    return j;
}

}  // namespace dkmd
