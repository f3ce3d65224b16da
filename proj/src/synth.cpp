// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/synth.hpp"

#include "lumbar_align/errors.hpp"
#include "lumbar_align/rng.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace lumbar_align {

namespace {

constexpr std::size_t kLevels = 5;

const std::vector<std::string> kLbpTemplates{
    "Disc bulging at {level} with narrowing of the intervertebral space.",
    "{Severity} disc herniation at {level} compressing the {side} neural foramen.",
    "Narrowed disc height and posterior bulge at {level}.",
    "Degenerative disc disease at {level} with {side} sided protrusion.",
    "The {level} disc shows {severity} bulging and reduced height.",
    "Findings at {level} include disc narrowing and a {side} bulge.",
};

const std::vector<std::string> kNoFindingTemplates{
    "No significant abnormality of the lumbar spine.",
    "Normal disc height and alignment at all lumbar levels.",
    "Lumbar vertebrae and intervertebral discs appear unremarkable.",
    "Preserved disc spaces without evidence of herniation.",
    "The lumbar spine is within normal limits.",
    "Intervertebral discs show normal signal and height.",
};

std::string fill_template(std::string text, const std::map<std::string, std::string>& slots) {
    for (const auto& [key, value] : slots) {
        const std::string marker = "{" + key + "}";
        for (auto pos = text.find(marker); pos != std::string::npos; pos = text.find(marker, pos)) {
            text.replace(pos, marker.size(), value);
            pos += value.size();
        }
    }
    return text;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) {
            throw std::invalid_argument(value);
        }
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw InputError("synthetic spec: invalid value '" + value + "' for " + key);
    }
}

} // namespace

std::string format_synthetic_spec(const SyntheticImageSpec& spec) {
    std::ostringstream out;
    out << "class=" << (spec.cls == kClassLbp ? "lbp" : "normal") << ",seed=" << spec.seed
        << ",res=" << spec.resolution << ",level=" << spec.level << ",side=" << (spec.side == 0 ? "left" : "right");
    return out.str();
}

SyntheticImageSpec parse_synthetic_spec(const std::string& text) {
    SyntheticImageSpec spec;
    bool has_class = false;
    bool has_seed = false;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw InputError("synthetic spec: expected key=value, got '" + item + "'");
        }
        const std::string key = item.substr(0, eq);
        const std::string value = item.substr(eq + 1);
        if (key == "class") {
            if (value != "lbp" && value != "normal") {
                throw InputError("synthetic spec: class must be lbp or normal");
            }
            spec.cls = value == "lbp" ? kClassLbp : kClassNoFinding;
            has_class = true;
        } else if (key == "seed") {
            spec.seed = parse_size(key, value);
            has_seed = true;
        } else if (key == "res") {
            spec.resolution = parse_size(key, value);
        } else if (key == "level") {
            spec.level = parse_size(key, value);
        } else if (key == "side") {
            if (value != "left" && value != "right") {
                throw InputError("synthetic spec: side must be left or right");
            }
            spec.side = value == "left" ? 0 : 1;
        } else {
            throw InputError("synthetic spec: unknown key '" + key + "'");
        }
    }
    if (!has_class || !has_seed) {
        throw InputError("synthetic spec: 'class' and 'seed' are required");
    }
    if (spec.resolution < 8 || spec.level >= kLevels) {
        throw InputError("synthetic spec: res must be >= 8 and level in 0..4");
    }
    return spec;
}

RawImage render_synthetic(const SyntheticImageSpec& spec) {
    Rng rng(spec.seed);
    const double r = static_cast<double>(spec.resolution);
    const double background = rng.uniform(0.10, 0.30);
    const double column_center = r * rng.uniform(0.44, 0.56);
    const double column_half = r * rng.uniform(0.11, 0.14);
    const double vertebra = rng.uniform(0.55, 0.80);
    const double disc = vertebra * rng.uniform(0.45, 0.60);

    std::array<double, kLevels> disc_row{};
    std::array<double, kLevels> disc_half{};
    for (std::size_t k = 0; k < kLevels; ++k) {
        disc_row[k] = r * (0.14 + 0.18 * static_cast<double>(k)) + rng.uniform(-1.0, 1.0);
        disc_half[k] = 0.5 * rng.uniform(2.5, 3.5) * r / 64.0;
    }
    const bool lbp = spec.cls == kClassLbp;
    const double bulge_radius = r * rng.uniform(0.10, 0.13);
    const double bulge_value = rng.uniform(0.80, 0.95);
    if (lbp) {
        disc_half[spec.level] *= 0.3;
    }
    const double bulge_x = spec.side == 0 ? column_center - column_half : column_center + column_half;
    const double bulge_y = disc_row[spec.level];

    RawImage img;
    img.channels = 1;
    img.height = spec.resolution;
    img.width = spec.resolution;
    img.max_value = 1.0;
    img.pixels.resize(spec.resolution * spec.resolution);
    for (std::size_t y = 0; y < spec.resolution; ++y) {
        const double py = static_cast<double>(y) + 0.5;
        for (std::size_t x = 0; x < spec.resolution; ++x) {
            const double px = static_cast<double>(x) + 0.5;
            const bool in_column = std::abs(px - column_center) < column_half;
            double v = background;
            if (in_column) {
                v = vertebra;
                for (std::size_t k = 0; k < kLevels; ++k) {
                    if (std::abs(py - disc_row[k]) < disc_half[k]) {
                        v = disc;
                    }
                }
            } else if (lbp) {
                const double dx = px - bulge_x;
                const double dy = py - bulge_y;
                if (dx * dx + dy * dy < bulge_radius * bulge_radius) {
                    v = bulge_value;
                }
            }
            v += 0.04 * rng.normal();
            img.pixels[y * spec.resolution + x] = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

void SynthConfig::validate() const {
    if (n_pairs < 2) {
        throw InputError("synth: need at least 2 pairs");
    }
    if (!(class_ratio > 0.0 && class_ratio < 1.0)) {
        throw InputError("synth: class ratio must lie strictly between 0 and 1");
    }
    if (resolution < 8) {
        throw InputError("synth: resolution must be at least 8");
    }
    if (vocab_spec.levels.size() != kLevels || vocab_spec.severities.empty() || vocab_spec.sides.size() != 2) {
        throw InputError("synth: lexicon needs 5 levels, 2 sides and at least one severity");
    }
}

std::vector<Sample> synth_samples(const SynthConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, "synth"));
    const auto n_lbp = static_cast<std::size_t>(
        std::llround(static_cast<double>(config.n_pairs) * config.class_ratio));
    std::vector<std::size_t> classes(config.n_pairs, kClassNoFinding);
    std::fill_n(classes.begin(), n_lbp, kClassLbp);
    rng.shuffle(classes);

    std::vector<Sample> samples;
    samples.reserve(config.n_pairs);
    for (std::size_t i = 0; i < config.n_pairs; ++i) {
        SyntheticImageSpec image;
        image.cls = classes[i];
        image.seed = derive_seed(config.seed, {i, 0x1A6EULL}) >> 11;
        image.resolution = config.resolution;
        image.level = rng.index(kLevels);
        image.side = rng.index(2);

        std::string severity = config.vocab_spec.severities[rng.index(config.vocab_spec.severities.size())];
        std::string capitalised = severity;
        capitalised[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(capitalised[0])));
        const std::map<std::string, std::string> slots{{"level", config.vocab_spec.levels[image.level]},
                                                       {"side", config.vocab_spec.sides[image.side]},
                                                       {"severity", severity},
                                                       {"Severity", capitalised}};
        const auto& templates = image.cls == kClassLbp ? kLbpTemplates : kNoFindingTemplates;
        std::vector<std::size_t> order(templates.size());
        for (std::size_t t = 0; t < order.size(); ++t) {
            order[t] = t;
        }
        rng.shuffle(order);

        Sample s;
        char id[32];
        std::snprintf(id, sizeof(id), "synth-%05zu", i);
        s.id = id;
        s.image_ref = "synthetic:" + format_synthetic_spec(image);
        s.caption = fill_template(templates[order[0]], slots);
        for (std::size_t a = 1; a <= kAugmentedCaptions; ++a) {
            s.aug_captions.push_back(fill_template(templates[order[a]], slots));
        }
        s.label = image.cls == kClassLbp ? LabelVector{1, 0} : LabelVector{0, 1};
        samples.push_back(std::move(s));
    }
    return samples;
}

std::filesystem::path synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir) {
    std::vector<Sample> samples = synth_samples(config);
    std::filesystem::create_directories(out_dir);
    if (config.write_image_files) {
        std::filesystem::create_directories(out_dir / "images");
        for (auto& s : samples) {
            const auto spec = parse_synthetic_spec(s.image_ref.substr(std::string("synthetic:").size()));
            const std::string rel = "images/" + s.id + ".pgm";
            save_pgm(out_dir / rel, render_synthetic(spec));
            s.image_ref = rel;
        }
    }
    const auto manifest = out_dir / "manifest.jsonl";
    write_manifest(manifest, samples);
    return manifest;
}

} // namespace lumbar_align
