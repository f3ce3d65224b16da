// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/data.hpp"

#include "lumbar_align/errors.hpp"
#include "lumbar_align/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

namespace lumbar_align {

namespace {

Sample parse_sample(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    if (!j.is_object()) {
        throw InputError("expected a JSON object");
    }
    for (const char* field : {"id", "image_ref", "caption", "aug_captions", "label"}) {
        if (!j.contains(field)) {
            throw InputError(std::string("missing field '") + field + "'");
        }
    }
    Sample s;
    s.id = j.at("id").get<std::string>();
    s.image_ref = j.at("image_ref").get<std::string>();
    s.caption = j.at("caption").get<std::string>();
    const auto& aug = j.at("aug_captions");
    if (!aug.is_array() || aug.size() > kAugmentedCaptions) {
        throw InputError("aug_captions must be an array of at most 4 strings");
    }
    s.aug_captions = aug.get<std::vector<std::string>>();
    const auto& label = j.at("label");
    if (!label.is_array() || label.size() != 2 || !label[0].is_number_integer() ||
        !label[1].is_number_integer()) {
        throw InputError("label must be an array of two integers");
    }
    s.label = {label[0].get<int>(), label[1].get<int>()};
    validate_label(s.label);
    return s;
}

} // namespace

const char* class_name(std::size_t cls) { return cls == kClassLbp ? "LBP" : "No Finding"; }

void validate_label(const LabelVector& label) {
    for (int v : label) {
        if (v != 0 && v != 1) {
            throw InputError("label entries must be 0 or 1, got [" + std::to_string(label[0]) + ", " +
                             std::to_string(label[1]) + "]");
        }
    }
    if (label[0] == 0 && label[1] == 0) {
        throw InputError("label must have at least one positive entry");
    }
}

std::vector<Sample> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("manifest not found: " + path.string());
    }
    std::vector<Sample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
            continue;
        }
        try {
            samples.push_back(parse_sample(line));
        } catch (const std::exception& e) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return samples;
}

void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write manifest " + path.string());
    }
    for (const auto& s : samples) {
        nlohmann::ordered_json j;
        j["id"] = s.id;
        j["image_ref"] = s.image_ref;
        j["caption"] = s.caption;
        j["aug_captions"] = s.aug_captions;
        j["label"] = s.label;
        out << j.dump() << '\n';
    }
}

std::array<std::size_t, kNumClasses> class_counts(const std::vector<Sample>& samples) {
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& s : samples) {
        ++counts[s.class_index()];
    }
    return counts;
}

void SplitSpec::validate() const {
    if (train_frac < 0.0 || val_frac < 0.0 || test_frac < 0.0 ||
        std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-12) {
        throw InputError("split fractions must be non-negative and sum to 1");
    }
}

DatasetSplits stratified_split(const std::vector<Sample>& samples, const SplitSpec& spec) {
    spec.validate();
    if (samples.empty()) {
        throw InputError("stratified_split: no samples");
    }
    // Groups of indices; one group per class when stratifying.
    std::vector<std::vector<std::size_t>> groups(spec.stratify ? kNumClasses : 1);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        groups[spec.stratify ? samples[i].class_index() : 0].push_back(i);
    }
    std::vector<int> assignment(samples.size(), 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        auto& members = groups[g];
        Rng rng(derive_seed(spec.seed, {g, 0x5917ULL}));
        rng.shuffle(members);
        const double n = static_cast<double>(members.size());
        const auto n_train = std::min(members.size(), static_cast<std::size_t>(std::llround(n * spec.train_frac)));
        const auto n_val = std::min(members.size() - n_train, static_cast<std::size_t>(std::llround(n * spec.val_frac)));
        for (std::size_t k = 0; k < members.size(); ++k) {
            assignment[members[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
        }
    }
    DatasetSplits out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        (assignment[i] == 0 ? out.train : assignment[i] == 1 ? out.val : out.test).push_back(samples[i]);
    }
    return out;
}

std::vector<Sample> upsample_minority(const std::vector<Sample>& train, std::uint64_t seed) {
    std::array<std::vector<std::size_t>, kNumClasses> members;
    for (std::size_t i = 0; i < train.size(); ++i) {
        members[train[i].class_index()].push_back(i);
    }
    std::size_t present = 0;
    std::size_t largest = 0;
    for (const auto& m : members) {
        present += m.empty() ? 0 : 1;
        largest = std::max(largest, m.size());
    }
    if (present < 2) {
        throw InputError("upsample_minority: need at least two classes in the training split");
    }
    std::vector<Sample> out = train;
    for (std::size_t cls = 0; cls < kNumClasses; ++cls) {
        Rng rng(derive_seed(seed, {cls, 0x75ULL}));
        for (std::size_t k = members[cls].size(); k < largest; ++k) {
            out.push_back(train[members[cls][rng.index(members[cls].size())]]);
        }
    }
    return out;
}

void fill_augmented_captions(std::vector<Sample>& samples, const SynonymTable& synonyms,
                             const EdaConfig& eda, std::uint64_t seed) {
    for (auto& s : samples) {
        for (std::size_t slot = s.aug_captions.size(); slot < kAugmentedCaptions; ++slot) {
            const std::uint64_t slot_seed = derive_seed(derive_seed(seed, s.id), {slot});
            s.aug_captions.push_back(eda_augment(s.caption, slot_seed, synonyms, eda));
        }
    }
}

DatasetSplits prepare_splits(const std::vector<Sample>& samples, const PrepareOptions& options,
                             const SynonymTable& synonyms) {
    DatasetSplits splits = stratified_split(samples, options.split);
    const std::uint64_t fill_seed = derive_seed(options.seed, "eda");
    fill_augmented_captions(splits.train, synonyms, options.eda, fill_seed);
    fill_augmented_captions(splits.val, synonyms, options.eda, fill_seed);
    fill_augmented_captions(splits.test, synonyms, options.eda, fill_seed);
    if (options.upsample && !splits.train.empty()) {
        splits.train = upsample_minority(splits.train, derive_seed(options.seed, "upsample"));
    }
    return splits;
}

} // namespace lumbar_align
