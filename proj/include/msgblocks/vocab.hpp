#pragma once

// Word-level vocabulary and tokenizer for the text block. Tokens are
// lowercased ASCII-alphanumeric runs; everything else separates.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "msgblocks/corpus.hpp"

namespace msgblocks {

struct Vocab {
    static constexpr int PAD = 0;
    static constexpr int UNK = 1;
    static constexpr int CLS = 2;

    std::vector<std::string> tokens;  // index -> token, specials first
    std::unordered_map<std::string, int> index;

    std::size_t size() const { return tokens.size(); }

    int lookup(const std::string& tok) const {
        const auto it = index.find(tok);
        return it == index.end() ? UNK : it->second;
    }
};

inline std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c) && c < 0x80) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

// Keeps the max_size-3 most frequent tokens (ties broken lexicographically)
// behind the three specials.
inline Vocab build_vocab(const Dataset& train, std::size_t max_size) {
    if (train.messages.empty()) throw std::invalid_argument("build_vocab: empty training set");
    if (max_size < 4) throw std::invalid_argument("build_vocab: max_size must be at least 4");

    std::map<std::string, std::size_t> counts;
    for (const auto& m : train.messages) {
        for (auto& tok : split_tokens(m.text)) ++counts[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab v;
    v.tokens = {"<pad>", "<unk>", "<cls>"};
    for (std::size_t i = 0; i < items.size() && v.tokens.size() < max_size; ++i) {
        v.tokens.push_back(items[i].first);
    }
    for (std::size_t i = 0; i < v.tokens.size(); ++i) v.index[v.tokens[i]] = static_cast<int>(i);
    return v;
}

struct TokenizedText {
    std::vector<int> ids;       // length t_max, CLS first
    std::vector<bool> pad;      // true at PAD positions
};

inline TokenizedText tokenize(const Vocab& vocab, const std::string& text, std::size_t t_max) {
    if (t_max < 1) throw std::invalid_argument("tokenize: t_max must be at least 1");
    TokenizedText out;
    out.ids.assign(t_max, Vocab::PAD);
    out.ids[0] = Vocab::CLS;
    std::size_t pos = 1;
    for (const auto& tok : split_tokens(text)) {
        if (pos >= t_max) break;
        out.ids[pos++] = vocab.lookup(tok);
    }
    out.pad.assign(t_max, false);
    for (std::size_t i = pos; i < t_max; ++i) out.pad[i] = true;
    return out;
}

} // namespace msgblocks
