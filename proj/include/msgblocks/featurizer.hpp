#pragma once

// Meta-data feature extraction: fit per-field state on a training split,
// then transform any message into a fixed-size dense vector.
//
// Vector layout, in order:
//   top senders (one-hot, K_s slots)
//   top affiliations (one-hot, K_a slots)
//   sender frequency (1 slot, training frequency of this sender)
//   day of week (one-hot, 7 slots, Monday first, UTC)
//   working hours (1 slot)
//   rush hour (one-hot over equal-width seconds-of-day bins, B slots)
//   enumerated fields (one one-hot group per field, fields sorted by name,
//                      options sorted lexicographically)
//   numeric fields (1 slot each, z-scored with training mean/std, fields
//                   sorted by name)
//
// Absent fields leave their slices all-zero; unseen senders, affiliations
// and enum options map to all-zero slices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "msgblocks/corpus.hpp"
#include "msgblocks/time.hpp"

namespace msgblocks {

struct FeaturizerConfig {
    std::size_t top_senders = 120;
    std::size_t top_affiliations = 120;
    std::size_t rush_bins = 50;
    int work_start_hour = 9;   // inclusive, UTC
    int work_end_hour = 18;    // exclusive, UTC
    bool work_weekdays_only = true;
};

struct FeatureVector {
    std::vector<double> values;
};

// Affiliation rule: dedicated field when present, else the domain of an
// email-shaped sender (exactly one '@' with nonempty sides).
inline std::optional<std::string> affiliation_of(const Message& m) {
    if (m.affiliation) return m.affiliation;
    if (m.sender) {
        const std::string& s = *m.sender;
        const std::size_t at = s.find('@');
        if (at != std::string::npos && at > 0 && at + 1 < s.size() &&
            s.find('@', at + 1) == std::string::npos) {
            return s.substr(at + 1);
        }
    }
    return std::nullopt;
}

struct FeatureLayout {
    std::size_t senders_off = 0, senders_len = 0;
    std::size_t affiliations_off = 0, affiliations_len = 0;
    std::size_t sender_freq_off = 0;
    std::size_t day_off = 0;
    std::size_t working_off = 0;
    std::size_t rush_off = 0, rush_len = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> enum_slices;  // field -> (off, len)
    std::map<std::string, std::size_t> numeric_slots;                        // field -> off
    std::size_t total = 0;
};

class FeaturizerModel {
public:
    FeaturizerConfig config;
    std::vector<std::string> top_senders;       // count desc, id asc
    std::vector<std::string> top_affiliations;
    std::map<std::string, double> sender_freq;  // all senders seen at fit
    std::vector<double> rush_bin_edges;         // B left edges over [0, 86400)
    std::map<std::string, std::vector<std::string>> enum_vocabs;
    std::map<std::string, std::pair<double, double>> numeric_stats;  // mean, std

    static FeaturizerModel fit(const Dataset& train, const FeaturizerConfig& cfg = {}) {
        if (train.messages.empty()) throw std::invalid_argument("featurizer: empty training set");
        FeaturizerModel model;
        model.config = cfg;

        std::map<std::string, std::size_t> sender_counts, affil_counts;
        std::map<std::string, std::set<std::string>> enum_options;
        std::map<std::string, std::vector<double>> numeric_values;
        for (const auto& m : train.messages) {
            if (m.sender) ++sender_counts[*m.sender];
            if (auto a = affiliation_of(m)) ++affil_counts[*a];
            for (const auto& [k, v] : m.enums) enum_options[k].insert(v);
            for (const auto& [k, v] : m.numerics) numeric_values[k].push_back(v);
        }

        const double n = static_cast<double>(train.messages.size());
        for (const auto& [s, c] : sender_counts) model.sender_freq[s] = static_cast<double>(c) / n;
        model.top_senders = top_k(sender_counts, cfg.top_senders);
        model.top_affiliations = top_k(affil_counts, cfg.top_affiliations);

        model.rush_bin_edges.resize(cfg.rush_bins);
        for (std::size_t b = 0; b < cfg.rush_bins; ++b) {
            model.rush_bin_edges[b] = 86400.0 * static_cast<double>(b) /
                                      static_cast<double>(cfg.rush_bins);
        }

        for (const auto& [field, opts] : enum_options) {
            model.enum_vocabs[field] = std::vector<std::string>(opts.begin(), opts.end());
        }
        for (const auto& [field, vals] : numeric_values) {
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            double var = 0.0;
            for (double v : vals) var += (v - mean) * (v - mean);
            var /= static_cast<double>(vals.size());
            double std = std::sqrt(var);
            if (std == 0.0) std = 1.0;  // constant fields pass through centered
            model.numeric_stats[field] = {mean, std};
        }

        model.rebuild_index();
        return model;
    }

    FeatureLayout layout() const {
        FeatureLayout ly;
        std::size_t off = 0;
        ly.senders_off = off;
        ly.senders_len = config.top_senders;
        off += ly.senders_len;
        ly.affiliations_off = off;
        ly.affiliations_len = config.top_affiliations;
        off += ly.affiliations_len;
        ly.sender_freq_off = off++;
        ly.day_off = off;
        off += 7;
        ly.working_off = off++;
        ly.rush_off = off;
        ly.rush_len = config.rush_bins;
        off += ly.rush_len;
        for (const auto& [field, opts] : enum_vocabs) {
            ly.enum_slices[field] = {off, opts.size()};
            off += opts.size();
        }
        for (const auto& [field, stats] : numeric_stats) {
            (void)stats;
            ly.numeric_slots[field] = off++;
        }
        ly.total = off;
        return ly;
    }

    std::size_t feature_dim() const { return layout().total; }

    FeatureVector transform(const Message& m) const {
        const FeatureLayout ly = layout();
        FeatureVector fv;
        fv.values.assign(ly.total, 0.0);

        if (m.sender) {
            if (auto it = sender_index_.find(*m.sender); it != sender_index_.end()) {
                fv.values[ly.senders_off + it->second] = 1.0;
            }
            if (auto it = sender_freq.find(*m.sender); it != sender_freq.end()) {
                fv.values[ly.sender_freq_off] = it->second;
            }
        }
        if (auto a = affiliation_of(m)) {
            if (auto it = affil_index_.find(*a); it != affil_index_.end()) {
                fv.values[ly.affiliations_off + it->second] = 1.0;
            }
        }
        if (m.timestamp) {
            const std::int64_t t = *m.timestamp;
            const int dow = weekday_utc(t);
            fv.values[ly.day_off + dow] = 1.0;
            const int hour = hour_of_day_utc(t);
            const bool workday = !config.work_weekdays_only || dow < 5;
            if (workday && hour >= config.work_start_hour && hour < config.work_end_hour) {
                fv.values[ly.working_off] = 1.0;
            }
            const std::size_t sod = static_cast<std::size_t>(seconds_of_day_utc(t));
            const std::size_t bin = sod * config.rush_bins / 86400;
            fv.values[ly.rush_off + std::min(bin, config.rush_bins - 1)] = 1.0;
        }
        for (const auto& [field, value] : m.enums) {
            const auto slice = ly.enum_slices.find(field);
            if (slice == ly.enum_slices.end()) continue;
            const auto& idx = enum_index_.at(field);
            if (auto it = idx.find(value); it != idx.end()) {
                fv.values[slice->second.first + it->second] = 1.0;
            }
        }
        for (const auto& [field, value] : m.numerics) {
            const auto slot = ly.numeric_slots.find(field);
            if (slot == ly.numeric_slots.end()) continue;
            const auto& [mean, std] = numeric_stats.at(field);
            fv.values[slot->second] = (value - mean) / std;
        }
        return fv;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["config"] = {{"top_senders", config.top_senders},
                       {"top_affiliations", config.top_affiliations},
                       {"rush_bins", config.rush_bins},
                       {"work_start_hour", config.work_start_hour},
                       {"work_end_hour", config.work_end_hour},
                       {"work_weekdays_only", config.work_weekdays_only}};
        j["top_senders"] = top_senders;
        j["top_affiliations"] = top_affiliations;
        j["sender_freq"] = sender_freq;
        j["rush_bin_edges"] = rush_bin_edges;
        j["enum_vocabs"] = enum_vocabs;
        nlohmann::json stats = nlohmann::json::object();
        for (const auto& [field, ms] : numeric_stats) {
            stats[field] = {{"mean", ms.first}, {"std", ms.second}};
        }
        j["numeric_stats"] = stats;
        return j;
    }

    static FeaturizerModel from_json(const nlohmann::json& j) {
        FeaturizerModel model;
        const auto& c = j.at("config");
        model.config.top_senders = c.at("top_senders").get<std::size_t>();
        model.config.top_affiliations = c.at("top_affiliations").get<std::size_t>();
        model.config.rush_bins = c.at("rush_bins").get<std::size_t>();
        model.config.work_start_hour = c.at("work_start_hour").get<int>();
        model.config.work_end_hour = c.at("work_end_hour").get<int>();
        model.config.work_weekdays_only = c.at("work_weekdays_only").get<bool>();
        model.top_senders = j.at("top_senders").get<std::vector<std::string>>();
        model.top_affiliations = j.at("top_affiliations").get<std::vector<std::string>>();
        model.sender_freq = j.at("sender_freq").get<std::map<std::string, double>>();
        model.rush_bin_edges = j.at("rush_bin_edges").get<std::vector<double>>();
        model.enum_vocabs =
            j.at("enum_vocabs").get<std::map<std::string, std::vector<std::string>>>();
        for (const auto& [field, ms] : j.at("numeric_stats").items()) {
            model.numeric_stats[field] = {ms.at("mean").get<double>(), ms.at("std").get<double>()};
        }
        model.rebuild_index();
        return model;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write featurizer file: " + path);
        out << to_json().dump(2) << "\n";
    }

    static FeaturizerModel load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open featurizer file: " + path);
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }

private:
    std::unordered_map<std::string, std::size_t> sender_index_, affil_index_;
    std::map<std::string, std::unordered_map<std::string, std::size_t>> enum_index_;

    void rebuild_index() {
        sender_index_.clear();
        affil_index_.clear();
        enum_index_.clear();
        for (std::size_t i = 0; i < top_senders.size(); ++i) sender_index_[top_senders[i]] = i;
        for (std::size_t i = 0; i < top_affiliations.size(); ++i)
            affil_index_[top_affiliations[i]] = i;
        for (const auto& [field, opts] : enum_vocabs) {
            auto& idx = enum_index_[field];
            for (std::size_t i = 0; i < opts.size(); ++i) idx[opts[i]] = i;
        }
    }

    // count desc, id asc
    static std::vector<std::string> top_k(const std::map<std::string, std::size_t>& counts,
                                          std::size_t k) {
        std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
        std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        std::vector<std::string> out;
        for (std::size_t i = 0; i < items.size() && i < k; ++i) out.push_back(items[i].first);
        return out;
    }
};

// free-function forms
inline FeaturizerModel fit_featurizer(const Dataset& train, const FeaturizerConfig& cfg = {}) {
    return FeaturizerModel::fit(train, cfg);
}

inline FeatureVector transform(const FeaturizerModel& model, const Message& m) {
    return model.transform(m);
}

inline std::size_t feature_dim(const FeaturizerModel& model) { return model.feature_dim(); }

} // namespace msgblocks
