// File I/O: PFM depth maps, 8/16-bit PNG images and depth maps, JSON stack
// manifests. Every writer goes through write_atomically (temp file + rename).
#pragma once

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dff/core.hpp"

namespace dff {

namespace fs = std::filesystem;

/// Writes via `<path>.tmp` and renames into place.
inline void write_atomically(const fs::path& path, const std::function<void(std::ostream&)>& body) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open output path: " + path.string());
        body(out);
        out.flush();
        if (!out) throw Error("write failed: " + path.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error("cannot move output into place: " + path.string());
    }
}

inline void write_text_file(const fs::path& path, const std::string& text) {
    write_atomically(path, [&](std::ostream& os) { os << text; });
}

inline std::vector<unsigned char> read_binary_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("missing file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// PFM

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

struct PfmHeader {
    int width = 0;
    int height = 0;
    bool little_endian = true;
    std::size_t data_offset = 0;
};

inline PfmHeader parse_pfm_header(const std::vector<unsigned char>& bytes) {
    std::size_t pos = 0;
    auto next_token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
        return tok;
    };
    const std::string magic = next_token();
    if (magic == "PF") throw Error("malformed header: colour PFM not supported for depth");
    if (magic != "Pf") throw Error("malformed header: not a PFM file");
    PfmHeader h;
    try {
        h.width = std::stoi(next_token());
        h.height = std::stoi(next_token());
        const double scale = std::stod(next_token());
        if (scale == 0.0 || !std::isfinite(scale)) throw Error("bad scale");
        h.little_endian = scale < 0.0;
    } catch (const std::exception&) {
        throw Error("malformed header: bad PFM dimensions or scale");
    }
    if (h.width <= 0 || h.height <= 0) throw Error("malformed header: non-positive PFM dimensions");
    if (pos >= bytes.size()) throw Error("malformed header: truncated PFM");
    h.data_offset = pos + 1;  // exactly one whitespace byte after the scale
    const std::size_t need = static_cast<std::size_t>(h.width) * h.height * 4;
    if (bytes.size() - h.data_offset < need) throw Error("malformed header: truncated PFM payload");
    return h;
}

}  // namespace detail

/// Reads a single-channel PFM into a grid (top row first).
inline Grid read_pfm(const fs::path& path) {
    const auto bytes = read_binary_file(path);
    const auto h = detail::parse_pfm_header(bytes);
    Grid g(h.height, h.width);
    const bool swap = h.little_endian != (std::endian::native == std::endian::little);
    const unsigned char* p = bytes.data() + h.data_offset;
    for (int row = 0; row < h.height; ++row) {
        const int y = h.height - 1 - row;  // PFM scanlines run bottom-to-top
        for (int x = 0; x < h.width; ++x) {
            std::uint32_t bits;
            std::memcpy(&bits, p, 4);
            p += 4;
            if (swap) bits = detail::byteswap32(bits);
            g(y, x) = static_cast<double>(std::bit_cast<float>(bits));
        }
    }
    return g;
}

/// Writes a little-endian single-channel PFM ("Pf", scale -1.0).
inline void write_pfm(const fs::path& path, const Grid& g) {
    write_atomically(path, [&](std::ostream& os) {
        os << "Pf\n" << g.width << ' ' << g.height << "\n-1.0\n";
        std::vector<unsigned char> buf(static_cast<std::size_t>(g.width) * 4);
        for (int row = 0; row < g.height; ++row) {
            const int y = g.height - 1 - row;
            for (int x = 0; x < g.width; ++x) {
                std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(g(y, x)));
                if constexpr (std::endian::native != std::endian::little) bits = detail::byteswap32(bits);
                std::memcpy(buf.data() + 4 * x, &bits, 4);
            }
            os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        }
    });
}

// ---------------------------------------------------------------------------
// PNG

/// Decoded PNG samples, un-normalized.
struct PngRaster {
    int width = 0;
    int height = 0;
    int channels = 0;   // 1 or 3 after alpha stripping / palette expansion
    int bit_depth = 0;  // 8 or 16
    std::vector<std::uint16_t> samples;  // interleaved
};

inline PngRaster read_png(const fs::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!file) throw Error("missing file: " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw Error("malformed header: not a PNG file: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("libpng initialisation failed");
    }
    PngRaster r;
    std::vector<unsigned char> rows_data;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("malformed PNG: " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
        depth = 8;
    }
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        depth = 8;
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if ((color & PNG_COLOR_MASK_ALPHA) || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
    png_read_update_info(png, info);

    r.width = static_cast<int>(png_get_image_width(png, info));
    r.height = static_cast<int>(png_get_image_height(png, info));
    r.channels = png_get_channels(png, info);
    r.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    rows_data.resize(rowbytes * r.height);
    rows.resize(r.height);
    for (int y = 0; y < r.height; ++y) rows[y] = rows_data.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (r.channels != 1 && r.channels != 3) throw Error("unsupported PNG channel layout: " + path.string());
    if (r.bit_depth != 8 && r.bit_depth != 16) throw Error("unsupported bit depth: " + path.string());
    const std::size_t n = static_cast<std::size_t>(r.width) * r.height * r.channels;
    r.samples.resize(n);
    if (r.bit_depth == 8) {
        for (std::size_t i = 0; i < n; ++i) r.samples[i] = rows_data[i];
    } else {
        std::memcpy(r.samples.data(), rows_data.data(), n * 2);
    }
    return r;
}

inline void write_png(const fs::path& path, const PngRaster& r) {
    if (r.bit_depth != 8 && r.bit_depth != 16) throw Error("unsupported bit depth");
    if (r.channels != 1 && r.channels != 3) throw Error("unsupported channel count");
    write_atomically(path, [&](std::ostream& os) {
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        png_infop info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            png_destroy_write_struct(&png, &info);
            throw Error("libpng initialisation failed");
        }
        std::vector<unsigned char> row(static_cast<std::size_t>(r.width) * r.channels * (r.bit_depth / 8));
        if (setjmp(png_jmpbuf(png))) {
            png_destroy_write_struct(&png, &info);
            throw Error("PNG encoding failed: " + path.string());
        }
        png_set_write_fn(
            png, &os,
            [](png_structp p, png_bytep data, png_size_t len) {
                static_cast<std::ostream*>(png_get_io_ptr(p))->write(reinterpret_cast<const char*>(data),
                                                                     static_cast<std::streamsize>(len));
            },
            [](png_structp p) { static_cast<std::ostream*>(png_get_io_ptr(p))->flush(); });
        png_set_IHDR(png, info, r.width, r.height, r.bit_depth,
                     r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const std::size_t per_row = static_cast<std::size_t>(r.width) * r.channels;
        for (int y = 0; y < r.height; ++y) {
            const std::uint16_t* src = r.samples.data() + y * per_row;
            for (std::size_t i = 0; i < per_row; ++i) {
                if (r.bit_depth == 8) {
                    row[i] = static_cast<unsigned char>(src[i]);
                } else {
                    row[2 * i] = static_cast<unsigned char>(src[i] >> 8);  // PNG is big-endian
                    row[2 * i + 1] = static_cast<unsigned char>(src[i] & 0xff);
                }
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    });
}

/// Loads a PNG as an image normalised to [0,1] regardless of bit depth.
inline Image load_image(const fs::path& path) {
    const PngRaster r = read_png(path);
    const double scale = r.bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<Grid> ch(r.channels, Grid(r.height, r.width));
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x)
            for (int c = 0; c < r.channels; ++c)
                ch[c](y, x) = r.samples[(static_cast<std::size_t>(y) * r.width + x) * r.channels + c] / scale;
    return Image(std::move(ch));
}

/// Saves an image as a PNG; values are clamped to [0,1] and quantised.
inline void save_image(const fs::path& path, const Image& img, int bit_depth = 16) {
    PngRaster r;
    r.width = img.width();
    r.height = img.height();
    r.channels = img.channel_count();
    r.bit_depth = bit_depth;
    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    r.samples.resize(static_cast<std::size_t>(r.width) * r.height * r.channels);
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x)
            for (int c = 0; c < r.channels; ++c)
                r.samples[(static_cast<std::size_t>(y) * r.width + x) * r.channels + c] =
                    static_cast<std::uint16_t>(std::lround(std::clamp(img.channels[c](y, x), 0.0, 1.0) * scale));
    write_png(path, r);
}

// ---------------------------------------------------------------------------
// Depth maps

/// Meters per PNG count for 16-bit depth PNGs (millimetres by default).
inline constexpr double kDefaultDepthPngScale = 1e-3;

inline DepthMap load_depth(const fs::path& path, double png_scale = kDefaultDepthPngScale) {
    const std::string ext = path.extension().string();
    if (ext == ".png" || ext == ".PNG") {
        const PngRaster r = read_png(path);
        if (r.bit_depth != 16) throw Error("unsupported bit depth for depth PNG (need 16-bit): " + path.string());
        if (r.channels != 1) throw Error("depth PNG must be single channel: " + path.string());
        Grid g(r.height, r.width);
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = r.samples[i] * png_scale;
        return DepthMap::from_values(std::move(g));
    }
    return DepthMap::from_values(read_pfm(path));
}

/// PFM keeps raw values; PNG writes round(v / scale) with invalid pixels as 0.
inline void save_depth(const DepthMap& map, const fs::path& path, double png_scale = kDefaultDepthPngScale) {
    const std::string ext = path.extension().string();
    if (ext == ".png" || ext == ".PNG") {
        PngRaster r;
        r.width = map.width();
        r.height = map.height();
        r.channels = 1;
        r.bit_depth = 16;
        r.samples.resize(map.size());
        for (std::size_t i = 0; i < map.size(); ++i) {
            double counts = map.valid(i) ? std::round(map.values().data[i] / png_scale) : 0.0;
            r.samples[i] = static_cast<std::uint16_t>(std::clamp(counts, 0.0, 65535.0));
        }
        write_png(path, r);
        return;
    }
    write_pfm(path, map.values());
}

// ---------------------------------------------------------------------------
// Manifests

/// Parses a manifest; relative paths are resolved against the manifest's directory.
inline StackManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("missing file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed manifest: ") + e.what());
    }
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        fs::path fp(p);
        return (fp.is_absolute() ? fp : base / fp).lexically_normal().string();
    };
    StackManifest m;
    try {
        for (const auto& p : j.at("images")) m.image_paths.push_back(resolve(p.get<std::string>()));
        m.focal_distances = j.at("focal_distances_m").get<std::vector<double>>();
        if (j.contains("depth") && !j["depth"].is_null()) m.depth_path = resolve(j["depth"].get<std::string>());
        m.scene_id = j.value("scene_id", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed manifest: ") + e.what());
    }
    m.validate();
    return m;
}

inline nlohmann::json manifest_to_json(const StackManifest& m) {
    nlohmann::json j;
    j["images"] = m.image_paths;
    j["focal_distances_m"] = m.focal_distances;
    j["depth"] = m.depth_path ? nlohmann::json(*m.depth_path) : nlohmann::json(nullptr);
    j["scene_id"] = m.scene_id;
    return j;
}

inline void write_manifest(const fs::path& path, const StackManifest& m) {
    write_text_file(path, manifest_to_json(m).dump(2) + "\n");
}

/// Decodes and validates every image a manifest references.
inline FocalStack load_stack(const StackManifest& manifest) {
    manifest.validate();
    std::vector<Image> planes;
    planes.reserve(manifest.image_paths.size());
    for (const auto& p : manifest.image_paths) {
        if (!fs::exists(p)) throw Error("missing file: " + p);
        planes.push_back(load_image(p));
        if (planes.back().height() != planes.front().height() || planes.back().width() != planes.front().width() ||
            planes.back().channel_count() != planes.front().channel_count())
            throw Error("dimension mismatch: " + p);
    }
    return FocalStack(std::move(planes), manifest.focal_distances);
}

// ---------------------------------------------------------------------------
// Probability maps: {"height", "width", "planes", "probs"} with probs pixel-major.

inline void save_probabilities(const FocusProbabilityMap& p, const fs::path& path) {
    nlohmann::json j;
    j["height"] = p.height();
    j["width"] = p.width();
    j["planes"] = p.planes();
    j["probs"] = p.data();
    write_text_file(path, j.dump() + "\n");
}

inline FocusProbabilityMap load_probabilities(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("missing file: " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return FocusProbabilityMap(j.at("height").get<int>(), j.at("width").get<int>(), j.at("planes").get<int>(),
                                   j.at("probs").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed probability map: ") + e.what());
    }
}

}  // namespace dff
