#pragma once

// Plain-text run configuration: `key = value` lines, optional [section]
// headers that prefix keys as "section.key", '#' comments. Unknown keys are
// rejected so typos don't silently fall back to defaults.

#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "msgblocks/harness.hpp"

namespace msgblocks {

namespace detail {

inline std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace detail

inline std::map<std::string, std::string> parse_config_text(std::istream& in,
                                                            const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::strip(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = detail::strip(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                     ": expected 'key = value'");
        }
        std::string key = detail::strip(line.substr(0, eq));
        const std::string value = detail::strip(line.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        if (!section.empty()) key = section + "." + key;
        kv[key] = value;
    }
    return kv;
}

// Applies a config file over the given defaults. Recognized keys:
//   model.d_model model.n_heads model.n_layers model.d_ff model.t_max
//   model.vocab_size model.combine_hidden
//   featurizer.top_senders featurizer.top_affiliations featurizer.rush_bins
//   featurizer.work_start_hour featurizer.work_end_hour
//   featurizer.work_weekdays_only
//   train.epochs train.batch train.lr train.optimizer train.clip_norm
//   forest.n_trees forest.max_depth forest.min_samples_leaf forest.bootstrap
//   forest.features_per_split
//   split.train split.val split.test
//   prepare.per_class_cap prepare.keep_n_longest
inline RunConfig load_run_config(const std::string& path, RunConfig cfg = {}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    auto kv = parse_config_text(in, path);

    const auto take = [&kv](const std::string& key) -> const std::string* {
        const auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    const auto as_size = [](const std::string& v, const std::string& key) -> std::size_t {
        try {
            return std::stoull(v);
        } catch (...) {
            throw std::runtime_error("config key '" + key + "': expected integer, got '" + v + "'");
        }
    };
    const auto as_double = [](const std::string& v, const std::string& key) -> double {
        try {
            return std::stod(v);
        } catch (...) {
            throw std::runtime_error("config key '" + key + "': expected number, got '" + v + "'");
        }
    };
    const auto as_bool = [](const std::string& v, const std::string& key) -> bool {
        if (v == "true" || v == "1" || v == "on") return true;
        if (v == "false" || v == "0" || v == "off") return false;
        throw std::runtime_error("config key '" + key + "': expected boolean, got '" + v + "'");
    };

    std::set<std::string> known;
    const auto size_key = [&](const std::string& key, std::size_t& target) {
        known.insert(key);
        if (const auto* v = take(key)) target = as_size(*v, key);
    };
    const auto double_key = [&](const std::string& key, double& target) {
        known.insert(key);
        if (const auto* v = take(key)) target = as_double(*v, key);
    };
    const auto bool_key = [&](const std::string& key, bool& target) {
        known.insert(key);
        if (const auto* v = take(key)) target = as_bool(*v, key);
    };
    const auto int_key = [&](const std::string& key, int& target) {
        known.insert(key);
        if (const auto* v = take(key)) target = static_cast<int>(as_size(*v, key));
    };

    size_key("model.d_model", cfg.text.d_model);
    size_key("model.n_heads", cfg.text.n_heads);
    size_key("model.n_layers", cfg.text.n_layers);
    size_key("model.d_ff", cfg.text.d_ff);
    size_key("model.t_max", cfg.text.t_max);
    size_key("model.vocab_size", cfg.vocab_size);
    size_key("model.combine_hidden", cfg.combine_hidden);

    size_key("featurizer.top_senders", cfg.featurizer.top_senders);
    size_key("featurizer.top_affiliations", cfg.featurizer.top_affiliations);
    size_key("featurizer.rush_bins", cfg.featurizer.rush_bins);
    int_key("featurizer.work_start_hour", cfg.featurizer.work_start_hour);
    int_key("featurizer.work_end_hour", cfg.featurizer.work_end_hour);
    bool_key("featurizer.work_weekdays_only", cfg.featurizer.work_weekdays_only);

    size_key("train.epochs", cfg.train.epochs);
    size_key("train.batch", cfg.train.batch);
    double_key("train.lr", cfg.train.lr);
    double_key("train.clip_norm", cfg.train.clip_norm);
    known.insert("train.optimizer");
    if (const auto* v = take("train.optimizer")) {
        if (*v == "adam") cfg.train.optimizer = OptimizerKind::adam;
        else if (*v == "sgd") cfg.train.optimizer = OptimizerKind::sgd;
        else throw std::runtime_error("config key 'train.optimizer': expected adam or sgd");
    }

    size_key("forest.n_trees", cfg.forest.n_trees);
    size_key("forest.max_depth", cfg.forest.max_depth);
    size_key("forest.min_samples_leaf", cfg.forest.min_samples_leaf);
    bool_key("forest.bootstrap", cfg.forest.bootstrap);
    known.insert("forest.features_per_split");
    if (const auto* v = take("forest.features_per_split")) {
        if (*v == "sqrt") cfg.forest.features_per_split = ForestParams::FeatureRule::sqrt_rule;
        else if (*v == "all") cfg.forest.features_per_split = ForestParams::FeatureRule::all;
        else throw std::runtime_error("config key 'forest.features_per_split': expected sqrt or all");
    }

    double_key("split.train", cfg.data.train_fraction);
    double_key("split.val", cfg.data.val_fraction);
    double_key("split.test", cfg.data.test_fraction);
    size_key("prepare.per_class_cap", cfg.data.per_class_cap);
    size_key("prepare.keep_n_longest", cfg.data.keep_n_longest);

    for (const auto& [key, value] : kv) {
        (void)value;
        if (!known.count(key)) throw std::runtime_error("unknown config key: " + key);
    }
    return cfg;
}

} // namespace msgblocks
