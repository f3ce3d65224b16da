// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/text.hpp"

#include "lumbar_align/errors.hpp"
#include "lumbar_align/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace lumbar_align {

namespace {

constexpr const char* kBuiltinSynonyms = R"(# word groups; every word in a line may replace any other
disc disk
bulging bulge protruding
protrusion herniation extrusion
narrowing narrowed reduced
narrowing stenosis
height space
normal unremarkable preserved
significant notable marked
mild slight minimal
moderate intermediate
severe advanced
spine column
lumbar lower
shows demonstrates
seen observed noted
evidence signs
findings observations
degenerative degenerated
)";

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) {
        words.push_back(w);
    }
    return words;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) {
            out.push_back(' ');
        }
        out += words[i];
    }
    return out;
}

// Splits a word into leading punctuation, alphanumeric core, trailing punctuation.
struct WordParts {
    std::string lead;
    std::string core;
    std::string trail;
};

WordParts split_word(const std::string& word) {
    std::size_t begin = 0;
    while (begin < word.size() && !std::isalnum(static_cast<unsigned char>(word[begin]))) {
        ++begin;
    }
    std::size_t end = word.size();
    while (end > begin && !std::isalnum(static_cast<unsigned char>(word[end - 1]))) {
        --end;
    }
    return {word.substr(0, begin), word.substr(begin, end - begin), word.substr(end)};
}

} // namespace

std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
            continue;
        }
        if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
        if (!std::isspace(c)) {
            tokens.emplace_back(1, raw);
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

Vocabulary::Vocabulary() { assign({"<pad>", "<unk>", "<bos>"}); }

void Vocabulary::assign(std::vector<std::string> tokens) {
    tokens_ = std::move(tokens);
    ids_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (!ids_.emplace(tokens_[i], static_cast<std::int64_t>(i)).second) {
            throw InputError("vocabulary: duplicate token '" + tokens_[i] + "'");
        }
    }
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 3 || tokens[0] != "<pad>" || tokens[1] != "<unk>" || tokens[2] != "<bos>") {
        throw InputError("vocabulary: reserved tokens missing or out of order");
    }
    Vocabulary v;
    v.assign(std::move(tokens));
    return v;
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t min_count) {
    std::map<std::string, std::size_t> counts;
    for (const auto& text : texts) {
        for (auto& tok : split_tokens(text)) {
            ++counts[tok];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> tokens{"<pad>", "<unk>", "<bos>"};
    for (const auto& [tok, count] : ranked) {
        if (count >= min_count) {
            tokens.push_back(tok);
        }
    }
    Vocabulary v;
    v.assign(std::move(tokens));
    return v;
}

std::int64_t Vocabulary::id(const std::string& token) const {
    const auto it = ids_.find(token);
    return it == ids_.end() ? kUnknown : it->second;
}

std::vector<std::int64_t> tokenize(const Vocabulary& vocab, const std::string& text, std::size_t max_tokens) {
    std::vector<std::int64_t> ids;
    ids.reserve(max_tokens);
    if (max_tokens == 0) {
        return ids;
    }
    ids.push_back(Vocabulary::kBegin);
    for (const auto& tok : split_tokens(text)) {
        if (ids.size() == max_tokens) {
            break;
        }
        ids.push_back(vocab.id(tok));
    }
    ids.resize(max_tokens, Vocabulary::kPad);
    return ids;
}

SynonymTable SynonymTable::parse(const std::string& text) {
    SynonymTable table;
    std::map<std::string, std::set<std::string>> merged;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::vector<std::string> group;
        for (auto& w : split_words(line)) {
            group.push_back(lowercase(w));
        }
        for (const auto& a : group) {
            for (const auto& b : group) {
                if (a != b) {
                    merged[a].insert(b);
                }
            }
        }
    }
    for (auto& [word, syns] : merged) {
        table.groups_[word] = std::vector<std::string>(syns.begin(), syns.end());
    }
    return table;
}

SynonymTable SynonymTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open synonym table " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

SynonymTable SynonymTable::builtin() { return parse(kBuiltinSynonyms); }

std::vector<std::string> SynonymTable::synonyms(const std::string& word) const {
    const auto it = groups_.find(word);
    return it == groups_.end() ? std::vector<std::string>{} : it->second;
}

std::string eda_augment(const std::string& text, std::uint64_t seed, const SynonymTable& synonyms,
                        const EdaConfig& config) {
    std::vector<std::string> words = split_words(text);
    if (words.empty()) {
        return text;
    }
    Rng rng(seed);
    const std::size_t n = words.size();
    bool changed = false;
    switch (rng.index(3)) {
    case 0: {
        const auto budget = static_cast<std::size_t>(std::ceil(config.synonym_rate * static_cast<double>(n)));
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < n; ++i) {
            if (synonyms.contains(lowercase(split_word(words[i]).core))) {
                candidates.push_back(i);
            }
        }
        rng.shuffle(candidates);
        for (std::size_t k = 0; k < std::min(budget, candidates.size()); ++k) {
            WordParts parts = split_word(words[candidates[k]]);
            const auto options = synonyms.synonyms(lowercase(parts.core));
            words[candidates[k]] = parts.lead + options[rng.index(options.size())] + parts.trail;
            changed = true;
        }
        break;
    }
    case 1: {
        if (n < 2) {
            break;
        }
        for (std::size_t k = 0; k < config.swap_count; ++k) {
            const std::size_t i = rng.index(n);
            std::size_t j = rng.index(n - 1);
            if (j >= i) {
                ++j;
            }
            std::swap(words[i], words[j]);
            changed = true;
        }
        break;
    }
    default: {
        std::vector<std::string> kept;
        for (const auto& w : words) {
            if (!rng.bernoulli(config.deletion_prob)) {
                kept.push_back(w);
            }
        }
        if (kept.empty()) {
            kept.push_back(words[rng.index(n)]);
        }
        changed = kept.size() != n;
        words = std::move(kept);
        break;
    }
    }
    return changed ? join_words(words) : text;
}

} // namespace lumbar_align
