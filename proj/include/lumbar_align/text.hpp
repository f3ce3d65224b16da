// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace lumbar_align {

/// Lowercases ASCII and splits into alphanumeric runs; every other
/// non-space character becomes its own token.
std::vector<std::string> split_tokens(const std::string& text);

/// Token to id map with reserved ids pad = 0, unknown = 1, begin = 2.
class Vocabulary {
public:
    static constexpr std::int64_t kPad = 0;
    static constexpr std::int64_t kUnknown = 1;
    static constexpr std::int64_t kBegin = 2;

    Vocabulary();

    /// Builds from a corpus; ids after the reserved ones are assigned by
    /// descending frequency, ties broken lexicographically.
    static Vocabulary build(std::span<const std::string> texts, std::size_t min_count = 1);
    /// Restores from tokens listed in id order (reserved entries included).
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    std::int64_t id(const std::string& token) const;
    const std::string& token(std::int64_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    void assign(std::vector<std::string> tokens);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int64_t> ids_;
};

/// begin id, then vocabulary ids of the text tokens (unknown for unseen),
/// truncated or padded with the pad id to exactly max_tokens.
std::vector<std::int64_t> tokenize(const Vocabulary& vocab, const std::string& text, std::size_t max_tokens);

/// Groups of interchangeable words. Each line of the text format lists one
/// group separated by whitespace; '#' starts a comment.
class SynonymTable {
public:
    SynonymTable() = default;
    static SynonymTable parse(const std::string& text);
    static SynonymTable load(const std::filesystem::path& path);
    /// Small lumbar-radiology lexicon compiled into the library.
    static SynonymTable builtin();

    /// Synonyms of a lowercase word, excluding the word itself; sorted.
    std::vector<std::string> synonyms(const std::string& word) const;
    bool contains(const std::string& word) const { return groups_.contains(word); }

private:
    std::map<std::string, std::vector<std::string>> groups_;
};

struct EdaConfig {
    /// Fraction of tokens replaced by synonyms, rounded up.
    double synonym_rate = 0.1;
    /// Number of position pairs exchanged by random swap.
    std::size_t swap_count = 1;
    /// Per-token drop probability of random deletion.
    double deletion_prob = 0.1;
};

/// Easy Data Augmentation on whitespace-separated words. Exactly one of
/// synonym replacement, random swap or random deletion is chosen uniformly.
/// Deletion always keeps at least one word. Deterministic in `seed`.
std::string eda_augment(const std::string& text, std::uint64_t seed, const SynonymTable& synonyms,
                        const EdaConfig& config = {});

} // namespace lumbar_align
