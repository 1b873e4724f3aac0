#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cdnm/cdn_gm.hpp"
#include "cdnm/common.hpp"
#include "cdnm/medal_net.hpp"
#include "cdnm/pipeline.hpp"

namespace cdnm {

// Flat key=value run configuration covering every tunable default. Unknown
// keys are rejected; the full effective configuration is echoed into run
// logs.
struct RunConfig {
    std::uint64_t seed = 1;
    int threads = 1;

    int history_len = 96;  // T
    int hop = 96;
    int mixture_components = 3;  // K
    int channels = 3;
    double sigma_min = 16.0;
    double sigma_max = 32.0;

    double lr_bg = 5e-3, lr_fg = 5e-3;
    int epochs_bg = 1000, epochs_fg = 1000;
    int batch_bg = 256, batch_fg = 8;

    double epsilon = 0.5;
    double tau = 20.0;
    double clamp_delta = 1e-7;

    int labeled_pairs = 200;
    int bins = 32;
    int max_histories = 16384;  // cap on histories sampled for training

    std::string layout = "flat";
    std::string data;
    std::string out;
    std::string weights_bg, weights_fg;
    std::string gt_background;

    CdnGmConfig cdn_config() const {
        CdnGmConfig c;
        c.mixture_components = mixture_components;
        c.channels = channels;
        c.history_len = history_len;
        c.sigma_min_gray = sigma_min;
        c.sigma_max_gray = sigma_max;
        c.learning_rate = lr_bg;
        c.batch_size = batch_bg;
        return c;
    }

    MedalConfig medal_config(int h, int w) const {
        MedalConfig m;
        m.height = h;
        m.width = w;
        m.channels = channels;
        m.epsilon = epsilon;
        m.clamp_delta = clamp_delta;
        m.learning_rate = lr_fg;
        m.epochs = epochs_fg;
        m.batch_size = batch_fg;
        return m;
    }

    PipelineConfig pipeline_config() const {
        PipelineConfig p;
        p.hop = hop;
        p.epsilon = epsilon;
        p.threads = threads;
        return p;
    }
};

namespace detail {

inline std::int64_t parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        std::int64_t v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw UsageError("config key '" + key + "': '" + value + "' is not an integer");
    }
}

inline double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw UsageError("config key '" + key + "': '" + value + "' is not a number");
    }
}

}  // namespace detail

inline void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_int;
    using detail::parse_real;
    if (key == "seed")
        cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "threads")
        cfg.threads = static_cast<int>(parse_int(key, value));
    else if (key == "T")
        cfg.history_len = static_cast<int>(parse_int(key, value));
    else if (key == "hop")
        cfg.hop = static_cast<int>(parse_int(key, value));
    else if (key == "K")
        cfg.mixture_components = static_cast<int>(parse_int(key, value));
    else if (key == "channels")
        cfg.channels = static_cast<int>(parse_int(key, value));
    else if (key == "sigma_min")
        cfg.sigma_min = parse_real(key, value);
    else if (key == "sigma_max")
        cfg.sigma_max = parse_real(key, value);
    else if (key == "lr_bg")
        cfg.lr_bg = parse_real(key, value);
    else if (key == "lr_fg")
        cfg.lr_fg = parse_real(key, value);
    else if (key == "epochs_bg")
        cfg.epochs_bg = static_cast<int>(parse_int(key, value));
    else if (key == "epochs_fg")
        cfg.epochs_fg = static_cast<int>(parse_int(key, value));
    else if (key == "batch_bg")
        cfg.batch_bg = static_cast<int>(parse_int(key, value));
    else if (key == "batch_fg")
        cfg.batch_fg = static_cast<int>(parse_int(key, value));
    else if (key == "epsilon")
        cfg.epsilon = parse_real(key, value);
    else if (key == "tau")
        cfg.tau = parse_real(key, value);
    else if (key == "clamp_delta")
        cfg.clamp_delta = parse_real(key, value);
    else if (key == "labeled_pairs")
        cfg.labeled_pairs = static_cast<int>(parse_int(key, value));
    else if (key == "bins")
        cfg.bins = static_cast<int>(parse_int(key, value));
    else if (key == "max_histories")
        cfg.max_histories = static_cast<int>(parse_int(key, value));
    else if (key == "layout")
        cfg.layout = value;
    else if (key == "data")
        cfg.data = value;
    else if (key == "out")
        cfg.out = value;
    else if (key == "weights_bg")
        cfg.weights_bg = value;
    else if (key == "weights_fg")
        cfg.weights_fg = value;
    else if (key == "gt_background")
        cfg.gt_background = value;
    else
        throw UsageError("unknown config key '" + key + "'");
}

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// key=value lines; '#' starts a comment; blank lines ignored.
inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        set_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

// Effective configuration in a fixed order, for run logs.
inline std::vector<std::pair<std::string, std::string>> echo_config(const RunConfig& c) {
    auto num = [](double v) {
        std::ostringstream os;
        os << v;
        return os.str();
    };
    return {
        {"seed", std::to_string(c.seed)},
        {"threads", std::to_string(c.threads)},
        {"T", std::to_string(c.history_len)},
        {"hop", std::to_string(c.hop)},
        {"K", std::to_string(c.mixture_components)},
        {"channels", std::to_string(c.channels)},
        {"sigma_min", num(c.sigma_min)},
        {"sigma_max", num(c.sigma_max)},
        {"lr_bg", num(c.lr_bg)},
        {"lr_fg", num(c.lr_fg)},
        {"epochs_bg", std::to_string(c.epochs_bg)},
        {"epochs_fg", std::to_string(c.epochs_fg)},
        {"batch_bg", std::to_string(c.batch_bg)},
        {"batch_fg", std::to_string(c.batch_fg)},
        {"epsilon", num(c.epsilon)},
        {"tau", num(c.tau)},
        {"clamp_delta", num(c.clamp_delta)},
        {"labeled_pairs", std::to_string(c.labeled_pairs)},
        {"bins", std::to_string(c.bins)},
        {"max_histories", std::to_string(c.max_histories)},
        {"layout", c.layout},
        {"data", c.data},
        {"out", c.out},
        {"weights_bg", c.weights_bg},
        {"weights_fg", c.weights_fg},
        {"gt_background", c.gt_background},
    };
}

}  // namespace cdnm
