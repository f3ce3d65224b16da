// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/training.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace lumbar_align {

namespace {

constexpr char kMagic[] = "LUMBAR-ALIGN-CHECKPOINT\n";
constexpr std::size_t kMagicLength = sizeof(kMagic) - 1;

void put_u64(std::string& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
        out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
    }
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int b = 7; b >= 0; --b) {
        v = (v << 8) | p[b];
    }
    return v;
}

nlohmann::json head_json(const ProjectionConfig& c) {
    nlohmann::json j{{"mode", to_string(c.mode)}, {"in_dim", c.in_dim}, {"out_dim", c.out_dim}, {"seed", c.seed}};
    j["hidden_dim"] = c.hidden_dim ? nlohmann::json(*c.hidden_dim) : nlohmann::json(nullptr);
    return j;
}

ProjectionConfig head_from_json(const nlohmann::json& j) {
    ProjectionConfig c;
    c.mode = parse_head_mode(j.at("mode").get<std::string>());
    c.in_dim = j.at("in_dim").get<std::size_t>();
    c.out_dim = j.at("out_dim").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("hidden_dim").is_null()) {
        c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    }
    return c;
}

} // namespace

nlohmann::json to_json(const ModelConfig& config) {
    const auto& im = config.image;
    const auto& tx = config.text;
    return {
        {"image",
         {{"style", to_string(im.style)},
          {"input_resolution", im.input_resolution},
          {"input_channels", im.input_channels},
          {"output_dim", im.output_dim},
          {"width", im.width},
          {"depth", im.depth},
          {"patch_size", im.patch_size},
          {"seed", im.seed}}},
        {"text",
         {{"vocab_size", tx.vocab_size},
          {"max_tokens", tx.max_tokens},
          {"embed_dim", tx.embed_dim},
          {"output_dim", tx.output_dim},
          {"depth", tx.depth},
          {"seed", tx.seed},
          {"pad_id", tx.pad_id}}},
        {"image_head", head_json(config.image_head)},
        {"text_head", head_json(config.text_head)},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    const auto& im = j.at("image");
    c.image.style = parse_image_style(im.at("style").get<std::string>());
    c.image.input_resolution = im.at("input_resolution").get<std::size_t>();
    c.image.input_channels = im.at("input_channels").get<std::size_t>();
    c.image.output_dim = im.at("output_dim").get<std::size_t>();
    c.image.width = im.at("width").get<std::size_t>();
    c.image.depth = im.at("depth").get<std::size_t>();
    c.image.patch_size = im.at("patch_size").get<std::size_t>();
    c.image.seed = im.at("seed").get<std::uint64_t>();
    const auto& tx = j.at("text");
    c.text.vocab_size = tx.at("vocab_size").get<std::size_t>();
    c.text.max_tokens = tx.at("max_tokens").get<std::size_t>();
    c.text.embed_dim = tx.at("embed_dim").get<std::size_t>();
    c.text.output_dim = tx.at("output_dim").get<std::size_t>();
    c.text.depth = tx.at("depth").get<std::size_t>();
    c.text.seed = tx.at("seed").get<std::uint64_t>();
    c.text.pad_id = tx.at("pad_id").get<std::int64_t>();
    c.image_head = head_from_json(j.at("image_head"));
    c.text_head = head_from_json(j.at("text_head"));
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra) {
    const ParameterList params = model.parameters();
    nlohmann::ordered_json header;
    header["format_version"] = kCheckpointFormatVersion;
    header["model"] = to_json(model.config());
    header["vocab"] = model.vocab().tokens();
    header["norm_stats"] = {{"mean", model.norm_stats().mean}, {"std", model.norm_stats().std}};
    header["experiment"] = extra;
    auto directory = nlohmann::ordered_json::array();
    std::size_t offset = 0;
    for (const auto& p : params) {
        directory.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
        offset += p.tensor.numel();
    }
    header["parameters"] = directory;
    header["blob_values"] = offset;

    const std::string header_text = header.dump();
    std::string bytes(kMagic, kMagicLength);
    put_u64(bytes, header_text.size());
    bytes += header_text;
    bytes.reserve(bytes.size() + 8 * offset);
    for (const auto& p : params) {
        for (double v : p.tensor.data()) {
            put_u64(bytes, std::bit_cast<std::uint64_t>(v));
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write checkpoint " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw InputError("failed writing checkpoint " + path.string());
    }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("checkpoint not found: " + path.string());
    }
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = "checkpoint " + path.string() + ": ";
    if (bytes.size() < kMagicLength + 8 || bytes.compare(0, kMagicLength, kMagic) != 0) {
        throw InputError(where + "not a checkpoint file (bad magic)");
    }
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t header_length = get_u64(raw + kMagicLength);
    const std::size_t header_start = kMagicLength + 8;
    if (header_length > bytes.size() - header_start) {
        throw InputError(where + "truncated header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(header_start, header_length));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(where + "corrupt header: " + e.what());
    }
    if (!header.is_object() || !header.contains("format_version") || !header["format_version"].is_number_integer()) {
        throw InputError(where + "missing format version");
    }
    if (header["format_version"].get<int>() != kCheckpointFormatVersion) {
        throw InputError(where + "unsupported format version " + header["format_version"].dump() + " (expected " +
                         std::to_string(kCheckpointFormatVersion) + ")");
    }
    try {
        NormStats stats;
        stats.mean = header.at("norm_stats").at("mean").get<std::array<double, 3>>();
        stats.std = header.at("norm_stats").at("std").get<std::array<double, 3>>();
        Model model(model_config_from_json(header.at("model")),
                    Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>()), stats);

        const ParameterList params = model.parameters();
        const auto& directory = header.at("parameters");
        if (directory.size() != params.size()) {
            throw InputError("parameter count mismatch");
        }
        const std::size_t blob_start = header_start + header_length;
        const std::size_t blob_values = header.at("blob_values").get<std::size_t>();
        if (bytes.size() - blob_start != 8 * blob_values) {
            throw InputError("truncated parameter blob");
        }
        for (std::size_t k = 0; k < params.size(); ++k) {
            const auto& entry = directory[k];
            if (entry.at("name").get<std::string>() != params[k].name ||
                entry.at("shape").get<Shape>() != params[k].tensor.shape()) {
                throw InputError("parameter directory mismatch at " + params[k].name);
            }
            const std::size_t offset = entry.at("offset").get<std::size_t>();
            Tensor t = params[k].tensor;
            auto dst = t.mutable_data();
            if (offset + dst.size() > blob_values) {
                throw InputError("parameter " + params[k].name + " out of range");
            }
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] = std::bit_cast<double>(get_u64(raw + blob_start + 8 * (offset + i)));
            }
        }
        nlohmann::json experiment = header.value("experiment", nlohmann::json::object());
        return {std::move(model), std::move(experiment)};
    } catch (const InputError& e) {
        throw InputError(where + e.what());
    } catch (const std::exception& e) {
        throw InputError(where + "corrupt header: " + e.what());
    }
}

} // namespace lumbar_align
