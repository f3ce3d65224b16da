// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/image.hpp"

#include "lumbar_align/errors.hpp"
#include "lumbar_align/synth.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lumbar_align {

namespace {

std::string read_pgm_token(std::istream& in) {
    std::string token;
    char c = 0;
    while (in.get(c)) {
        if (c == '#') {
            std::string ignored;
            std::getline(in, ignored);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!token.empty()) {
                break;
            }
            continue;
        }
        token.push_back(c);
    }
    return token;
}

std::size_t parse_pgm_number(std::istream& in, const std::filesystem::path& path) {
    const std::string token = read_pgm_token(in);
    try {
        std::size_t used = 0;
        const unsigned long value = std::stoul(token, &used);
        if (used != token.size()) {
            throw std::invalid_argument(token);
        }
        return value;
    } catch (const std::exception&) {
        throw InputError("PGM " + path.string() + ": malformed header field '" + token + "'");
    }
}

} // namespace

RawImage load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open image " + path.string());
    }
    const std::string magic = read_pgm_token(in);
    if (magic != "P2" && magic != "P5") {
        throw InputError("PGM " + path.string() + ": unsupported magic '" + magic + "'");
    }
    RawImage img;
    img.width = parse_pgm_number(in, path);
    img.height = parse_pgm_number(in, path);
    const std::size_t maxval = parse_pgm_number(in, path);
    if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535) {
        throw InputError("PGM " + path.string() + ": invalid dimensions or maxval");
    }
    img.max_value = static_cast<double>(maxval);
    img.channels = 1;
    const std::size_t count = img.width * img.height;
    img.pixels.resize(count);
    if (magic == "P2") {
        for (std::size_t i = 0; i < count; ++i) {
            img.pixels[i] = static_cast<double>(parse_pgm_number(in, path));
        }
    } else {
        const std::size_t bytes = maxval > 255 ? 2 : 1;
        std::vector<unsigned char> buffer(count * bytes);
        in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
        if (static_cast<std::size_t>(in.gcount()) != buffer.size()) {
            throw InputError("PGM " + path.string() + ": truncated pixel data");
        }
        for (std::size_t i = 0; i < count; ++i) {
            img.pixels[i] = bytes == 1 ? buffer[i] : static_cast<double>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
        }
    }
    return img;
}

void save_pgm(const std::filesystem::path& path, const RawImage& image) {
    if (image.channels != 1) {
        throw InputError("save_pgm: only single-channel images are supported");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write image " + path.string());
    }
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<unsigned char> buffer(image.pixels.size());
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        const double scaled = std::clamp(image.pixels[i] / image.max_value, 0.0, 1.0) * 255.0;
        buffer[i] = static_cast<unsigned char>(std::lround(scaled));
    }
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
}

RawImage load_png(const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&png, path.string().c_str()) == 0) {
        throw InputError("PNG " + path.string() + ": " + png.message);
    }
    const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
    png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
    if (png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr) == 0) {
        const std::string message = png.message;
        png_image_free(&png);
        throw InputError("PNG " + path.string() + ": " + message);
    }
    RawImage img;
    img.channels = gray ? 1 : 3;
    img.height = png.height;
    img.width = png.width;
    img.max_value = 255.0;
    img.pixels.resize(img.channels * img.height * img.width);
    // Interleaved HWC -> planar CHW.
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) {
                img.pixels[(c * img.height + y) * img.width + x] =
                    buffer[(y * img.width + x) * img.channels + c];
            }
        }
    }
    return img;
}

RawImage load_image(const std::string& image_ref, const std::filesystem::path& base_dir) {
    constexpr std::string_view kSynthetic = "synthetic:";
    if (image_ref.rfind(kSynthetic, 0) == 0) {
        return render_synthetic(parse_synthetic_spec(image_ref.substr(kSynthetic.size())));
    }
    std::filesystem::path path(image_ref);
    if (path.is_relative()) {
        path = base_dir / path;
    }
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") {
        return load_png(path);
    }
    if (ext == ".pgm") {
        return load_pgm(path);
    }
    throw InputError("unsupported image format for '" + image_ref + "' (expected .pgm, .png or synthetic:)");
}

Tensor resize_to_square(const RawImage& raw, std::size_t resolution) {
    if (raw.height == 0 || raw.width == 0 || raw.pixels.empty()) {
        throw InputError("preprocess_image: empty image");
    }
    if (raw.channels != 1 && raw.channels != 3) {
        throw InputError("preprocess_image: expected 1 or 3 channels, got " + std::to_string(raw.channels));
    }
    if (raw.pixels.size() != raw.channels * raw.height * raw.width) {
        throw InputError("preprocess_image: pixel buffer does not match the declared size");
    }
    if (resolution == 0) {
        throw InputError("preprocess_image: resolution must be positive");
    }
    const std::size_t side = std::max(raw.height, raw.width);
    const std::size_t top = (side - raw.height) / 2;
    const std::size_t left = (side - raw.width) / 2;
    const double inv_max = 1.0 / raw.max_value;

    // Padded canvas sample; zero outside the source image.
    auto padded = [&](std::size_t c, std::ptrdiff_t y, std::ptrdiff_t x) {
        const std::ptrdiff_t sy = y - static_cast<std::ptrdiff_t>(top);
        const std::ptrdiff_t sx = x - static_cast<std::ptrdiff_t>(left);
        if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(raw.height) ||
            sx >= static_cast<std::ptrdiff_t>(raw.width)) {
            return 0.0;
        }
        return raw.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) * inv_max;
    };

    const std::size_t r = resolution;
    const double ratio = static_cast<double>(side) / static_cast<double>(r);
    const auto last = static_cast<std::ptrdiff_t>(side) - 1;
    std::vector<double> out(3 * r * r);
    for (std::size_t c = 0; c < raw.channels; ++c) {
        for (std::size_t y = 0; y < r; ++y) {
            const double fy = std::clamp((static_cast<double>(y) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(last));
            const auto y0 = static_cast<std::ptrdiff_t>(std::floor(fy));
            const std::ptrdiff_t y1 = std::min(y0 + 1, last);
            const double wy = fy - static_cast<double>(y0);
            for (std::size_t x = 0; x < r; ++x) {
                const double fx =
                    std::clamp((static_cast<double>(x) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(last));
                const auto x0 = static_cast<std::ptrdiff_t>(std::floor(fx));
                const std::ptrdiff_t x1 = std::min(x0 + 1, last);
                const double wx = fx - static_cast<double>(x0);
                const double top_row = padded(c, y0, x0) * (1.0 - wx) + padded(c, y0, x1) * wx;
                const double bottom_row = padded(c, y1, x0) * (1.0 - wx) + padded(c, y1, x1) * wx;
                out[(c * r + y) * r + x] = top_row * (1.0 - wy) + bottom_row * wy;
            }
        }
    }
    if (raw.channels == 1) {
        std::copy_n(out.begin(), r * r, out.begin() + static_cast<std::ptrdiff_t>(r * r));
        std::copy_n(out.begin(), r * r, out.begin() + static_cast<std::ptrdiff_t>(2 * r * r));
    }
    return Tensor({3, r, r}, std::move(out));
}

Tensor standardize(const Tensor& image, const NormStats& stats) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("standardize: expected (3 x H x W), got " + shape_to_string(image.shape()));
    }
    const std::size_t plane = image.dim(1) * image.dim(2);
    std::vector<double> out(image.data().begin(), image.data().end());
    for (std::size_t c = 0; c < 3; ++c) {
        const double inv = 1.0 / std::max(stats.std[c], 1e-8);
        for (std::size_t i = 0; i < plane; ++i) {
            double& v = out[c * plane + i];
            v = (v - stats.mean[c]) * inv;
        }
    }
    return Tensor(image.shape(), std::move(out));
}

Tensor preprocess_image(const RawImage& raw, std::size_t resolution, const NormStats& stats) {
    return standardize(resize_to_square(raw, resolution), stats);
}

NormStats compute_norm_stats(std::span<const Tensor> images) {
    if (images.empty()) {
        throw InputError("compute_norm_stats: no images");
    }
    NormStats stats;
    for (std::size_t c = 0; c < 3; ++c) {
        double sum = 0.0;
        double count = 0.0;
        for (const Tensor& img : images) {
            const std::size_t plane = img.dim(1) * img.dim(2);
            for (std::size_t i = 0; i < plane; ++i) {
                sum += img[c * plane + i];
            }
            count += static_cast<double>(plane);
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (const Tensor& img : images) {
            const std::size_t plane = img.dim(1) * img.dim(2);
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = img[c * plane + i] - mean;
                sq += d * d;
            }
        }
        stats.mean[c] = mean;
        stats.std[c] = std::sqrt(sq / count);
    }
    return stats;
}

void save_norm_stats(const std::filesystem::path& path, const NormStats& stats) {
    nlohmann::ordered_json j;
    j["mean"] = stats.mean;
    j["std"] = stats.std;
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write normalization stats to " + path.string());
    }
    out << j.dump(2) << '\n';
}

NormStats load_norm_stats(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open normalization stats " + path.string());
    }
    try {
        const auto j = nlohmann::json::parse(in);
        NormStats stats;
        stats.mean = j.at("mean").get<std::array<double, 3>>();
        stats.std = j.at("std").get<std::array<double, 3>>();
        return stats;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("normalization stats " + path.string() + ": " + e.what());
    }
}

} // namespace lumbar_align
