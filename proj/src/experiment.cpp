// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/experiment.hpp"

#include "lumbar_align/errors.hpp"
#include "lumbar_align/rng.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace lumbar_align {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            items.push_back(item);
        }
    }
    return items;
}

template <typename T>
T parse_value(const std::string& text);

template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& text) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        throw InputError("expected a non-negative integer, got '" + text + "'");
    }
    return v;
}

template <>
double parse_value<double>(const std::string& text) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        throw InputError("expected a number, got '" + text + "'");
    }
    return v;
}

template <>
bool parse_value<bool>(const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") {
        return true;
    }
    if (text == "false" || text == "0" || text == "no") {
        return false;
    }
    throw InputError("expected true or false, got '" + text + "'");
}

template <>
std::string parse_value<std::string>(const std::string& text) {
    return text;
}

template <>
ImageStyle parse_value<ImageStyle>(const std::string& text) {
    try {
        return parse_image_style(text);
    } catch (const std::exception&) {
        throw InputError("expected conv or patch, got '" + text + "'");
    }
}

template <>
HeadMode parse_value<HeadMode>(const std::string& text) {
    try {
        return parse_head_mode(text);
    } catch (const std::exception&) {
        throw InputError("expected none, linear or nonlinear, got '" + text + "'");
    }
}

std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(ImageStyle v) { return to_string(v); }
std::string format_value(HeadMode v) { return to_string(v); }
std::string format_value(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

template <typename T>
std::string format_value(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out += (i ? "," : "") + format_value(values[i]);
    }
    return out;
}

struct KeySpec {
    std::string name;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T, typename Access>
KeySpec scalar_key(std::string name, Access access) {
    return {std::move(name),
            [access](const ExperimentConfig& c) {
                using Stored = std::remove_cvref_t<decltype(access(const_cast<ExperimentConfig&>(c)))>;
                if constexpr (std::is_same_v<Stored, std::size_t> || std::is_same_v<Stored, std::uint64_t>) {
                    return format_value(static_cast<std::uint64_t>(access(const_cast<ExperimentConfig&>(c))));
                } else {
                    return format_value(access(const_cast<ExperimentConfig&>(c)));
                }
            },
            [access](ExperimentConfig& c, const std::string& v) { access(c) = parse_value<T>(v); }};
}

template <typename T, typename Access>
KeySpec list_key(std::string name, Access access) {
    return {std::move(name),
            [access](const ExperimentConfig& c) {
                const auto& values = access(const_cast<ExperimentConfig&>(c));
                if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
                    std::vector<std::uint64_t> wide(values.begin(), values.end());
                    return format_value(wide);
                } else {
                    return format_value(values);
                }
            },
            [access](ExperimentConfig& c, const std::string& v) {
                std::vector<T> parsed;
                for (const auto& item : split_list(v)) {
                    parsed.push_back(parse_value<T>(item));
                }
                if (parsed.empty()) {
                    throw InputError("expected a non-empty comma-separated list");
                }
                access(c) = std::move(parsed);
            }};
}

#define LA_FIELD(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> specs{
        scalar_key<std::string>("manifest", LA_FIELD(manifest)),
        scalar_key<std::uint64_t>("seed", LA_FIELD(seed)),
        scalar_key<std::size_t>("data.resolution", LA_FIELD(resolution)),
        scalar_key<double>("data.train_frac", LA_FIELD(split.train_frac)),
        scalar_key<double>("data.val_frac", LA_FIELD(split.val_frac)),
        scalar_key<double>("data.test_frac", LA_FIELD(split.test_frac)),
        scalar_key<bool>("data.stratify", LA_FIELD(split.stratify)),
        scalar_key<bool>("data.upsample", LA_FIELD(upsample)),
        scalar_key<std::string>("data.synonyms", LA_FIELD(synonyms)),
        scalar_key<double>("eda.synonym_rate", LA_FIELD(eda.synonym_rate)),
        scalar_key<std::size_t>("eda.swap_count", LA_FIELD(eda.swap_count)),
        scalar_key<double>("eda.deletion_prob", LA_FIELD(eda.deletion_prob)),
        scalar_key<ImageStyle>("image.style", LA_FIELD(image.style)),
        scalar_key<std::size_t>("image.width", LA_FIELD(image.width)),
        scalar_key<std::size_t>("image.depth", LA_FIELD(image.depth)),
        scalar_key<std::size_t>("image.patch_size", LA_FIELD(image.patch_size)),
        scalar_key<std::size_t>("image.output_dim", LA_FIELD(image.output_dim)),
        scalar_key<std::size_t>("text.embed_dim", LA_FIELD(text.embed_dim)),
        scalar_key<std::size_t>("text.output_dim", LA_FIELD(text.output_dim)),
        scalar_key<std::size_t>("text.max_tokens", LA_FIELD(text.max_tokens)),
        scalar_key<std::size_t>("text.depth", LA_FIELD(text.depth)),
        scalar_key<HeadMode>("proj.mode", LA_FIELD(head_mode)),
        scalar_key<std::size_t>("proj.dim", LA_FIELD(head_dim)),
        scalar_key<std::size_t>("proj.hidden_dim", LA_FIELD(head_hidden_dim)),
        scalar_key<std::size_t>("train.epochs", LA_FIELD(train.epochs)),
        scalar_key<std::size_t>("train.batch_size", LA_FIELD(train.batch_size)),
        scalar_key<double>("train.lr", LA_FIELD(train.learning_rate)),
        scalar_key<double>("train.weight_decay", LA_FIELD(train.weight_decay)),
        scalar_key<double>("train.warmup_fraction", LA_FIELD(train.warmup_fraction)),
        scalar_key<double>("train.alpha", LA_FIELD(train.alpha)),
        scalar_key<double>("train.tau", LA_FIELD(train.tau)),
        scalar_key<std::size_t>("probe.epochs", LA_FIELD(probe.epochs)),
        scalar_key<double>("probe.lr", LA_FIELD(probe.learning_rate)),
        scalar_key<std::size_t>("probe.batch_size", LA_FIELD(probe.batch_size)),
        scalar_key<double>("probe.weight_decay", LA_FIELD(probe.weight_decay)),
        list_key<ImageStyle>("ablate.styles", LA_FIELD(ablate_styles)),
        list_key<HeadMode>("ablate.modes", LA_FIELD(ablate_modes)),
        list_key<std::size_t>("ablate.dims", LA_FIELD(ablate_dims)),
        list_key<std::uint64_t>("ablate.seeds", LA_FIELD(ablate_seeds)),
    };
    return specs;
}

#undef LA_FIELD

const KeySpec& find_key(const std::string& key) {
    for (const auto& spec : key_specs()) {
        if (spec.name == key) {
            return spec;
        }
    }
    throw InputError("unknown configuration key '" + key + "'");
}

} // namespace

ExperimentConfig::ExperimentConfig() {
    train.epochs = 30;
    train.batch_size = 32;
    train.learning_rate = 1e-3;
    probe.learning_rate = 1e-3;
    if (const auto s = env_seed()) {
        seed = *s;
        ablate_seeds = {*s};
    }
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& spec : key_specs()) {
            out.push_back(spec.name);
        }
        return out;
    }();
    return keys;
}

std::optional<std::uint64_t> env_seed() {
    const char* raw = std::getenv("LUMBAR_ALIGN_SEED");
    if (raw == nullptr || *raw == '\0') {
        return std::nullopt;
    }
    try {
        return parse_value<std::uint64_t>(raw);
    } catch (const InputError&) {
        return std::nullopt;
    }
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    const auto& spec = find_key(key);
    try {
        spec.set(*this, trim(value));
    } catch (const InputError& e) {
        throw InputError("configuration key '" + key + "': " + e.what());
    }
}

std::string ExperimentConfig::get(const std::string& key) const { return find_key(key).get(*this); }

void ExperimentConfig::apply_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw InputError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        try {
            set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const InputError& e) {
            throw InputError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void ExperimentConfig::apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("config file not found: " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string manifest_before = manifest;
    const std::string synonyms_before = synonyms;
    apply_text(buffer.str(), path.string());
    auto rebase = [&](std::string& value, const std::string& before) {
        if (value != before && !value.empty() && std::filesystem::path(value).is_relative()) {
            value = (path.parent_path() / value).lexically_normal().string();
        }
    };
    rebase(manifest, manifest_before);
    rebase(synonyms, synonyms_before);
}

std::string ExperimentConfig::to_text() const {
    std::string out;
    for (const auto& spec : key_specs()) {
        out += spec.name + " = " + spec.get(*this) + "\n";
    }
    return out;
}

ModelConfig ExperimentConfig::model_config(std::size_t vocab_size) const {
    ModelConfig m;
    m.image = image;
    m.image.input_resolution = resolution;
    m.image.input_channels = 3;
    m.image.seed = derive_seed(seed, "image-encoder");
    m.text = text;
    m.text.vocab_size = vocab_size;
    m.text.pad_id = Vocabulary::kPad;
    m.text.seed = derive_seed(seed, "text-encoder");
    for (auto* head : {&m.image_head, &m.text_head}) {
        head->mode = head_mode;
        head->out_dim = head_dim;
        head->hidden_dim = head_hidden_dim == 0 ? std::nullopt : std::optional<std::size_t>(head_hidden_dim);
    }
    m.image_head.in_dim = image.output_dim;
    m.text_head.in_dim = text.output_dim;
    m.image_head.seed = derive_seed(seed, "image-head");
    m.text_head.seed = derive_seed(seed, "text-head");
    return m;
}

PrepareOptions ExperimentConfig::prepare_options() const {
    PrepareOptions p;
    p.split = split;
    p.split.seed = derive_seed(seed, "split");
    p.upsample = upsample;
    p.eda = eda;
    p.seed = seed;
    return p;
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig t = train;
    t.seed = derive_seed(seed, "train");
    return t;
}

ProbeConfig ExperimentConfig::probe_config() const {
    ProbeConfig p = probe;
    p.seed = derive_seed(seed, "probe");
    return p;
}

SynonymTable ExperimentConfig::synonym_table() const {
    return synonyms.empty() ? SynonymTable::builtin() : SynonymTable::load(synonyms);
}

void ExperimentConfig::validate() const {
    if (manifest.empty()) {
        throw InputError("no manifest given (set 'manifest' or pass --manifest)");
    }
    split.validate();
    train.validate();
    probe.validate();
    if (resolution < 8) {
        throw InputError("data.resolution must be at least 8");
    }
    if (ablate_styles.empty() || ablate_modes.empty() || ablate_dims.empty() || ablate_seeds.empty()) {
        throw InputError("ablation lists must be non-empty");
    }
    try {
        model_config(8).validate();
    } catch (const InputError&) {
        throw;
    } catch (const std::exception& e) {
        throw InputError(std::string("invalid model configuration: ") + e.what());
    }
}

} // namespace lumbar_align
