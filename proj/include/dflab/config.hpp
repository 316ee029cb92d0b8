#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dflab/common.hpp"

namespace dflab::config {

// Flat key-value experiment configuration with include support. Later keys
// override earlier ones, so presets compose: `include = process2` followed
// by `runs = 3`.

inline const std::map<std::string, std::string>& presets() {
    static const std::map<std::string, std::string> table = {
        {"base",
         "mode = simulate\n"
         "runs = 10\n"
         "jobs = 1\n"
         "lags = 9\n"
         "d_model = 32\n"
         "heads = 4\n"
         "d_head = 8\n"
         "d_ff = 64\n"
         "depth = 1\n"
         "enc_scale = 0.5\n"
         "sinusoidal_pos = false\n"
         "factor_init = mean\n"
         "batch = 32\n"
         "lr = 1e-4\n"
         "t0 = 100\n"
         "warmup = 10\n"
         "max_epochs = 1000\n"
         "patience = 100\n"
         "dropout = 0.15\n"
         "weight_decay = 0.015\n"
         "lambda = 0.6\n"
         "record_test_fit = false\n"
         "n_obs = 1800\n"
         "train_total = 800\n"
         "test = 1000\n"
         "val_frac = 0.2\n"
         "np = 10000\n"
         "ess_threshold = 0.5\n"
         "roughening = 0.05\n"
         "mle_max_evals = 2000\n"
         "snapshot_t = -1\n"
         "tentacle_steps = 20\n"
         "tentacle_stride = 25\n"
         "seeds = 1\n"},
        {"process1", "include = base\nprocess = 1\n"},
        {"process2", "include = base\nprocess = 2\n"},
        {"process3", "include = base\nprocess = 3\n"},
        {"process4", "include = base\nprocess = 4\n"},
        {"process5", "include = base\nprocess = 5\n"},
        {"process6", "include = base\nprocess = 6\n"},
        {"lambda0", "lambda = 0\n"},
        {"lambda06", "lambda = 0.6\n"},
        {"lambda1", "lambda = 1\n"},
        {"lambda_ablation", "lambda_set = 0,0.6,1\n"},
        {"empirical",
         "include = base\n"
         "mode = empirical\n"
         "runs = 20\n"
         "lambda = 0.2\n"
         "dropout = 0.1\n"
         "weight_decay = 0.01\n"
         "tentacle_steps = 6\n"
         "tentacle_stride = 12\n"
         "data_production = production.csv\n"
         "data_sales = sales.csv\n"
         "data_income = income.csv\n"
         "data_hours = hours.csv\n"
         "split_file = split.csv\n"
         "recessions_file = recessions.csv\n"},
    };
    return table;
}

class Config {
public:
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
        return it->second;
    }

    std::string get_or(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key) const {
        try {
            std::size_t pos = 0;
            const double v = std::stod(get(key), &pos);
            if (pos != get(key).size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' is not a number: '" + get(key) + "'");
        }
    }

    long get_int(const std::string& key) const {
        const double v = get_double(key);
        const long i = static_cast<long>(v);
        if (static_cast<double>(i) != v) throw ConfigError("config key '" + key + "' is not an integer");
        return i;
    }

    bool get_bool(const std::string& key) const {
        const std::string& v = get(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
    }

    std::vector<double> get_list(const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(get(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            try {
                out.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw ConfigError("config key '" + key + "' has a bad list entry: '" + item + "'");
            }
        }
        if (out.empty()) throw ConfigError("config key '" + key + "' is an empty list");
        return out;
    }

    std::vector<std::uint64_t> get_seed_list(const std::string& key) const {
        std::vector<std::uint64_t> out;
        for (double v : get_list(key)) out.push_back(static_cast<std::uint64_t>(v));
        return out;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    /// FNV-1a over the sorted key=value pairs; manifests record it so an
    /// output directory can be traced back to its exact configuration.
    std::string hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 1099511628211ULL;
            }
        };
        for (const auto& [k, v] : values_) {
            mix(k);
            mix("=");
            mix(v);
            mix("\n");
        }
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

private:
    std::map<std::string, std::string> values_;
};

namespace detail {

inline void parse_into(Config& cfg, const std::string& text, const std::filesystem::path& base_dir,
                       int depth) {
    if (depth > 8) throw ConfigError("config includes nested too deeply");
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("bad config line: '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("bad config line: '" + line + "'");
        if (key == "include") {
            auto it = presets().find(value);
            if (it != presets().end()) {
                parse_into(cfg, it->second, base_dir, depth + 1);
            } else {
                const std::filesystem::path inc = base_dir / value;
                std::ifstream f(inc);
                if (!f) throw ConfigError("include '" + value + "' is neither a preset nor a file");
                std::stringstream buf;
                buf << f.rdbuf();
                parse_into(cfg, buf.str(), inc.parent_path(), depth + 1);
            }
        } else {
            cfg.set(key, value);
        }
    }
}

} // namespace detail

inline Config parse(const std::string& text, const std::filesystem::path& base_dir = ".") {
    Config cfg;
    detail::parse_into(cfg, text, base_dir, 0);
    return cfg;
}

inline Config load_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buf;
    buf << f.rdbuf();
    return parse(buf.str(), path.parent_path());
}

inline Config load_preset(const std::string& name) {
    auto it = presets().find(name);
    if (it == presets().end()) throw ConfigError("unknown preset '" + name + "'");
    return parse(it->second);
}

} // namespace dflab::config
