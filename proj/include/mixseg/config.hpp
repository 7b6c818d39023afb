#pragma once

#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mixseg/dataset_io.hpp"
#include "mixseg/trainer.hpp"

namespace mixseg {

// Flat key=value schema mirroring TrainConfig; unknown keys are errors so
// typos never pass silently. The same serialization backs config.resolved.
namespace config_detail {

struct Field {
    std::string key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline const std::vector<Field>& fields() {
    static const std::vector<Field> f = [] {
        std::vector<Field> v;
        auto str = [&](std::string key, std::string TrainConfig::* m) {
            v.push_back({key, [m](const TrainConfig& c) { return c.*m; },
                         [m](TrainConfig& c, const std::string& s) { c.*m = s; }});
        };
        auto u64 = [&](std::string key, auto TrainConfig::* m) {
            v.push_back({key,
                         [m](const TrainConfig& c) { return std::to_string(c.*m); },
                         [key, m](TrainConfig& c, const std::string& s) {
                             c.*m = static_cast<std::remove_reference_t<decltype(c.*m)>>(
                                 parse_u64(key, s));
                         }});
        };
        auto dbl = [&](std::string key, double TrainConfig::* m) {
            v.push_back({key, [m](const TrainConfig& c) { return fmt_double(c.*m); },
                         [key, m](TrainConfig& c, const std::string& s) {
                             c.*m = parse_double(key, s);
                         }});
        };
        auto boolean = [&](std::string key, bool TrainConfig::* m) {
            v.push_back({key, [m](const TrainConfig& c) { return c.*m ? "true" : "false"; },
                         [key, m](TrainConfig& c, const std::string& s) {
                             c.*m = parse_bool(key, s);
                         }});
        };
        str("dataset", &TrainConfig::dataset_dir);
        u64("seed", &TrainConfig::seed);
        u64("iters", &TrainConfig::iters);
        u64("batch_source", &TrainConfig::batch_source);
        u64("batch_target", &TrainConfig::batch_target);
        u64("batch_unlabeled", &TrainConfig::batch_unlabeled);
        dbl("lr_encoder", &TrainConfig::lr_encoder);
        dbl("lr_head", &TrainConfig::lr_head);
        u64("warmup_iters", &TrainConfig::warmup_iters);
        dbl("beta1", &TrainConfig::beta1);
        dbl("beta2", &TrainConfig::beta2);
        dbl("weight_decay", &TrainConfig::weight_decay);
        dbl("adam_eps", &TrainConfig::adam_eps);
        dbl("alpha", &TrainConfig::alpha);
        dbl("tau", &TrainConfig::tau);
        dbl("lambda", &TrainConfig::lambda);
        dbl("mu", &TrainConfig::mu);
        v.push_back({"strategy",
                     [](const TrainConfig& c) { return std::string(strategy_name(c.strategy)); },
                     [](TrainConfig& c, const std::string& s) { c.strategy = strategy_from_name(s); }});
        boolean("use_ls", &TrainConfig::use_ls);
        boolean("use_lt", &TrainConfig::use_lt);
        boolean("use_inter", &TrainConfig::use_inter);
        boolean("use_intra", &TrainConfig::use_intra);
        boolean("balanced_sampling", &TrainConfig::balanced_sampling);
        u64("eval_every", &TrainConfig::eval_every);
        str("dump_mixed", &TrainConfig::dump_mixed);
        return v;
    }();
    return f;
}

}  // namespace config_detail

inline void apply_config_pairs(TrainConfig& cfg,
                               const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        bool found = false;
        for (const auto& f : config_detail::fields()) {
            if (f.key == key) {
                f.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found) throw ConfigError("unknown config key '" + key + "'");
    }
}

inline TrainConfig load_config(const std::filesystem::path& path) {
    TrainConfig cfg;
    apply_config_pairs(cfg, read_key_value_file(path));
    return cfg;
}

inline std::string serialize_config(const TrainConfig& cfg) {
    std::ostringstream os;
    for (const auto& f : config_detail::fields()) os << f.key << " = " << f.get(cfg) << "\n";
    return os.str();
}

inline void write_resolved_config(const TrainConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / "config.resolved");
    if (!os) throw RuntimeAbort("cannot write config.resolved in " + dir.string());
    os << serialize_config(cfg);
}

}  // namespace mixseg
