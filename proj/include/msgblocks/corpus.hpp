#pragma once

// Message data model, JSONL ingestion and the corpus preparation pipeline:
// per-class capping, longest-text selection, deterministic splits, and the
// synthetic corpus generator used by the acceptance harness.
//
// Corpus files are JSONL, one UTF-8 object per line. Keys:
//   text (string, required), label (string, required, nonempty),
//   id (string, optional), sender (string), affiliation (string),
//   timestamp (ISO-8601 string), enums (object of string -> string),
//   numerics (object of string -> number).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "msgblocks/rng.hpp"
#include "msgblocks/time.hpp"

namespace msgblocks {

struct Message {
    std::string id;
    std::string text;
    std::optional<std::string> sender;
    std::optional<std::string> affiliation;
    std::optional<std::int64_t> timestamp;  // epoch seconds, UTC
    std::map<std::string, std::string> enums;
    std::map<std::string, double> numerics;
    std::string label;
};

struct Dataset {
    std::vector<Message> messages;
    std::vector<std::string> label_set;  // distinct labels, lexicographic
    std::string provenance;

    std::size_t size() const { return messages.size(); }

    void rebuild_label_set() {
        std::set<std::string> s;
        for (const auto& m : messages) s.insert(m.label);
        label_set.assign(s.begin(), s.end());
    }

    std::size_t label_index(const std::string& label) const {
        const auto it = std::lower_bound(label_set.begin(), label_set.end(), label);
        if (it == label_set.end() || *it != label) {
            throw std::invalid_argument("label '" + label + "' not in label set");
        }
        return static_cast<std::size_t>(it - label_set.begin());
    }
};

struct SplitSpec {
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;

    void validate() const {
        if (train_fraction <= 0 || val_fraction <= 0 || test_fraction <= 0) {
            throw std::invalid_argument("split fractions must be positive");
        }
        if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
            throw std::invalid_argument("split fractions must sum to 1");
        }
    }
};

struct Splits {
    Dataset train, val, test;
};

// number of unicode code points (UTF-8 continuation bytes don't count)
inline std::size_t text_length(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) {
        if ((c & 0xC0) != 0x80) ++n;
    }
    return n;
}

// ------------------------------------------------------------------ parsing

struct ParseStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t timestamp_warnings = 0;
    std::size_t field_warnings = 0;
    std::vector<std::string> errors;  // one entry per rejected record
};

// Throws std::invalid_argument for records that must be rejected; soft
// problems (bad timestamp, mistyped optional field) are counted in stats
// and the field left absent.
inline Message parse_message(const nlohmann::json& record, std::size_t line_no,
                             ParseStats* stats = nullptr) {
    auto fail = [&](const std::string& why) {
        throw std::invalid_argument("line " + std::to_string(line_no) + ": " + why);
    };
    auto warn_field = [&] {
        if (stats) ++stats->field_warnings;
    };

    if (!record.is_object()) fail("record is not an object");
    if (!record.contains("label")) fail("missing 'label'");
    if (!record["label"].is_string() || record["label"].get<std::string>().empty())
        fail("'label' must be a nonempty string");
    if (!record.contains("text")) fail("missing 'text'");
    if (!record["text"].is_string()) fail("'text' must be a string");

    Message m;
    m.label = record["label"].get<std::string>();
    m.text = record["text"].get<std::string>();
    m.id = "line-" + std::to_string(line_no);
    if (record.contains("id") && record["id"].is_string()) m.id = record["id"].get<std::string>();

    if (record.contains("sender")) {
        if (record["sender"].is_string()) m.sender = record["sender"].get<std::string>();
        else warn_field();
    }
    if (record.contains("affiliation")) {
        if (record["affiliation"].is_string())
            m.affiliation = record["affiliation"].get<std::string>();
        else warn_field();
    }
    if (record.contains("timestamp")) {
        bool ok = false;
        if (record["timestamp"].is_string()) {
            if (auto t = parse_iso8601_utc(record["timestamp"].get<std::string>())) {
                m.timestamp = *t;
                ok = true;
            }
        }
        if (!ok && stats) ++stats->timestamp_warnings;
    }
    if (record.contains("enums")) {
        if (record["enums"].is_object()) {
            for (const auto& [k, v] : record["enums"].items()) {
                if (v.is_string()) m.enums[k] = v.get<std::string>();
                else warn_field();
            }
        } else {
            warn_field();
        }
    }
    if (record.contains("numerics")) {
        if (record["numerics"].is_object()) {
            for (const auto& [k, v] : record["numerics"].items()) {
                if (v.is_number()) m.numerics[k] = v.get<double>();
                else warn_field();
            }
        } else {
            warn_field();
        }
    }
    return m;
}

inline nlohmann::json message_to_json(const Message& m) {
    nlohmann::json j;
    j["id"] = m.id;
    j["text"] = m.text;
    j["label"] = m.label;
    if (m.sender) j["sender"] = *m.sender;
    if (m.affiliation) j["affiliation"] = *m.affiliation;
    if (m.timestamp) j["timestamp"] = format_iso8601_utc(*m.timestamp);
    if (!m.enums.empty()) j["enums"] = m.enums;
    if (!m.numerics.empty()) j["numerics"] = m.numerics;
    return j;
}

inline Dataset load_corpus(const std::string& path, ParseStats* stats_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);

    ParseStats stats;
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const nlohmann::json rec = nlohmann::json::parse(line);
            ds.messages.push_back(parse_message(rec, line_no, &stats));
            ++stats.accepted;
        } catch (const std::exception& e) {
            ++stats.rejected;
            stats.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (ds.messages.empty()) throw std::runtime_error("no valid records in " + path);
    ds.rebuild_label_set();
    ds.provenance = path;
    if (stats_out) *stats_out = stats;
    return ds;
}

inline void save_corpus(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    for (const auto& m : ds.messages) out << message_to_json(m).dump() << "\n";
}

// -------------------------------------------------------------- preparation

struct PrepareStats {
    std::vector<std::string> dropped_classes;  // classes with no nonempty-text message
    std::size_t removed_empty_text = 0;
};

// Per class: take the first per_class_cap messages in corpus order, drop
// empty texts, keep the keep_n_longest by character length (ties broken by
// original order). Output preserves the original interleaving.
inline Dataset prepare_subset(const Dataset& ds, std::size_t per_class_cap,
                              std::size_t keep_n_longest, PrepareStats* stats_out = nullptr) {
    if (per_class_cap < keep_n_longest) {
        throw std::invalid_argument("prepare_subset: per_class_cap < keep_n_longest");
    }
    PrepareStats stats;
    std::map<std::string, std::vector<std::size_t>> candidates;  // class -> message indices
    std::map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < ds.messages.size(); ++i) {
        const Message& m = ds.messages[i];
        if (seen[m.label] >= per_class_cap) continue;
        ++seen[m.label];
        if (m.text.empty()) {
            ++stats.removed_empty_text;
            continue;
        }
        candidates[m.label].push_back(i);
    }

    std::vector<bool> keep(ds.messages.size(), false);
    for (const auto& label : ds.label_set) {
        auto it = candidates.find(label);
        if (it == candidates.end() || it->second.empty()) {
            stats.dropped_classes.push_back(label);
            continue;
        }
        std::vector<std::size_t> idx = it->second;
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return text_length(ds.messages[a].text) > text_length(ds.messages[b].text);
        });
        const std::size_t take = std::min(keep_n_longest, idx.size());
        for (std::size_t i = 0; i < take; ++i) keep[idx[i]] = true;
    }

    Dataset out;
    for (std::size_t i = 0; i < ds.messages.size(); ++i) {
        if (keep[i]) out.messages.push_back(ds.messages[i]);
    }
    out.rebuild_label_set();
    out.provenance = ds.provenance + " | prepared cap=" + std::to_string(per_class_cap) +
                     " keep=" + std::to_string(keep_n_longest);
    if (stats_out) *stats_out = stats;
    return out;
}

// Deterministic seeded shuffle, then contiguous slices. Sizes are
// floor(fraction * n) for train and val; test takes the remainder.
inline Splits split(const Dataset& ds, const SplitSpec& spec) {
    spec.validate();
    if (ds.messages.empty()) throw std::invalid_argument("split: empty dataset");
    const std::size_t n = ds.messages.size();

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(spec.seed);
    rng.shuffle(order);

    const auto part = [n](double f) {
        return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
    };
    const std::size_t n_train = part(spec.train_fraction);
    const std::size_t n_val = part(spec.val_fraction);
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
        throw std::invalid_argument("split: a split would be empty (n=" + std::to_string(n) + ")");
    }

    Splits out;
    const auto fill = [&](Dataset& d, std::size_t begin, std::size_t end, const char* name) {
        for (std::size_t i = begin; i < end; ++i) d.messages.push_back(ds.messages[order[i]]);
        d.label_set = ds.label_set;
        d.provenance = ds.provenance + " | split=" + name + " seed=" + std::to_string(spec.seed);
    };
    fill(out.train, 0, n_train, "train");
    fill(out.val, n_train, n_train + n_val, "val");
    fill(out.test, n_train + n_val, n, "test");
    return out;
}

// ---------------------------------------------------------------- synthetic

enum class SynthMode { metadata_only, conflict };

struct SynthSpec {
    std::uint64_t seed = 0;
    std::size_t n_per_class = 500;
    std::size_t n_classes = 4;
    SynthMode mode = SynthMode::metadata_only;
    double conflict_fraction = 0.3;  // conflict mode only
};

namespace detail {

inline std::string class_label(std::size_t c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "class_%02zu", c);
    return buf;
}

inline std::string synth_text(Rng& rng, const std::string& keyword,
                              const std::vector<std::string>& fillers) {
    const std::size_t n_fill = 6 + rng.below(7);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < n_fill; ++i) words.push_back(fillers[rng.below(fillers.size())]);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), keyword);
    std::string text;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) text += ' ';
        text += words[i];
    }
    return text;
}

inline std::int64_t synth_timestamp(Rng& rng, int hour_lo, int hour_hi) {
    // a day in March-April 2021 with an hour drawn from [hour_lo, hour_hi)
    const std::int64_t day = days_from_civil(2021, 3, 1) + static_cast<std::int64_t>(rng.below(60));
    const int hour = hour_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hour_hi - hour_lo)));
    return day * 86400 + hour * 3600 + static_cast<std::int64_t>(rng.below(60)) * 60 +
           static_cast<std::int64_t>(rng.below(60));
}

} // namespace detail

// Deterministic labeled corpus for harness experiments.
//
// metadata_only: the first half of the classes can only be told apart by
// sender/timestamp — their texts carry one keyword drawn uniformly from the
// pool of text-class keywords, so text alone is uninformative for them and
// actively ambiguous against the text classes (Bayes-optimal text-only
// accuracy is 0.5 for balanced halves). The remaining classes carry their
// own keyword deterministically but share a sender pool and uniform hours.
//
// conflict: every class has a keyword and a metadata signature; classes are
// paired and each pair's signature is an XOR of (sender group, hour band),
// so metadata fully determines the class but no additive scorer over the
// one-hot features can separate a pair. A conflict_fraction of each class's
// messages carries another class's keyword while keeping its own metadata;
// labels always follow the metadata.
inline Dataset generate_synthetic(const SynthSpec& spec) {
    if (spec.n_classes < 2) throw std::invalid_argument("generate_synthetic: need >= 2 classes");
    if (spec.conflict_fraction < 0.0 || spec.conflict_fraction > 1.0) {
        throw std::invalid_argument("generate_synthetic: conflict_fraction outside [0,1]");
    }
    Rng rng(spec.seed);

    std::vector<std::string> fillers;
    for (int i = 0; i < 30; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "filler%02d", i);
        fillers.push_back(buf);
    }

    const std::size_t c_total = spec.n_classes;
    Dataset ds;

    if (spec.mode == SynthMode::metadata_only) {
        const std::size_t n_meta = c_total / 2;
        const std::size_t n_text = c_total - n_meta;
        std::vector<std::string> keywords;
        for (std::size_t c = n_meta; c < c_total; ++c) keywords.push_back("topic" + std::to_string(c));

        // class-specific senders for the metadata classes, one shared pool
        // for text classes
        std::vector<std::vector<std::string>> meta_senders(n_meta);
        for (std::size_t c = 0; c < n_meta; ++c)
            for (int j = 0; j < 5; ++j)
                meta_senders[c].push_back("m" + std::to_string(c) + "s" + std::to_string(j) +
                                          "@meta.example");
        std::vector<std::string> shared_senders;
        for (int j = 0; j < 10; ++j)
            shared_senders.push_back("shared" + std::to_string(j) + "@pool.example");

        for (std::size_t i = 0; i < spec.n_per_class * c_total; ++i) {
            const std::size_t c = i % c_total;
            Message m;
            m.id = "synth-" + std::to_string(i);
            m.label = detail::class_label(c);
            if (c < n_meta) {
                m.text = detail::synth_text(rng, keywords[rng.below(n_text)], fillers);
                m.sender = meta_senders[c][rng.below(meta_senders[c].size())];
                const int band_start = static_cast<int>((3 + 4 * c) % 21);
                m.timestamp = detail::synth_timestamp(rng, band_start, band_start + 4);
            } else {
                m.text = detail::synth_text(rng, keywords[c - n_meta], fillers);
                m.sender = shared_senders[rng.below(shared_senders.size())];
                m.timestamp = detail::synth_timestamp(rng, 0, 24);
            }
            m.enums["channel"] = std::string(1, static_cast<char>('a' + rng.below(3)));
            m.numerics["attachments"] = static_cast<double>(rng.below(4));
            ds.messages.push_back(std::move(m));
        }
    } else {
        std::vector<std::string> keywords;
        for (std::size_t c = 0; c < c_total; ++c) keywords.push_back("topic" + std::to_string(c));

        // sender groups come in pairs; pair p owns groups 2p and 2p+1
        const std::size_t n_groups = 2 * ((c_total + 1) / 2);
        std::vector<std::vector<std::string>> groups(n_groups);
        for (std::size_t g = 0; g < n_groups; ++g)
            for (int j = 0; j < 6; ++j)
                groups[g].push_back("g" + std::to_string(g) + "s" + std::to_string(j) +
                                    "@conf.example");

        const std::size_t n_conflict =
            static_cast<std::size_t>(std::floor(spec.conflict_fraction *
                                                static_cast<double>(spec.n_per_class) + 0.5));
        std::vector<std::size_t> emitted(c_total, 0);

        for (std::size_t i = 0; i < spec.n_per_class * c_total; ++i) {
            const std::size_t c = i % c_total;
            Message m;
            m.id = "synth-" + std::to_string(i);
            m.label = detail::class_label(c);

            // metadata signature: within pair {2p, 2p+1}, class 2p is
            // (group 2p, early) or (group 2p+1, late); class 2p+1 crosses
            const std::size_t pair = c / 2;
            const bool second_in_pair = (c % 2 == 1);
            const bool branch = rng.below(2) == 1;
            const std::size_t group = 2 * pair + (branch ? 1 : 0);
            const bool late = second_in_pair != branch;  // XOR pairing
            m.sender = groups[group][rng.below(groups[group].size())];
            m.timestamp = detail::synth_timestamp(rng, late ? 12 : 0, late ? 24 : 12);

            const bool conflicted = emitted[c] < n_conflict;
            ++emitted[c];
            std::size_t kw_class = c;
            if (conflicted && c_total > 1) {
                kw_class = rng.below(c_total - 1);
                if (kw_class >= c) ++kw_class;
            }
            m.text = detail::synth_text(rng, keywords[kw_class], fillers);
            m.enums["channel"] = std::string(1, static_cast<char>('a' + rng.below(3)));
            m.numerics["attachments"] = static_cast<double>(rng.below(4));
            ds.messages.push_back(std::move(m));
        }
    }

    ds.rebuild_label_set();
    ds.provenance = "synthetic mode=" +
                    std::string(spec.mode == SynthMode::metadata_only ? "metadata_only" : "conflict") +
                    " seed=" + std::to_string(spec.seed) +
                    " classes=" + std::to_string(spec.n_classes) +
                    " per_class=" + std::to_string(spec.n_per_class);
    return ds;
}

} // namespace msgblocks
