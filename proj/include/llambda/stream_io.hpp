#pragma once

// Frame container: <dir>/manifest.json plus <dir>/frames/NNNNNN.pgm (binary
// P5, 8- or 16-bit). The manifest is
//   {"source_id": str, "modality": str, "frames": [{"file": str, "timestamp_ms": int}]}
// and its order defines iteration order.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/error.hpp"
#include "llambda/frame.hpp"

namespace llambda {

namespace fs = std::filesystem;

namespace detail {

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

inline nlohmann::json read_json(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    write_file(path, j.dump(2) + "\n");
}

} // namespace detail

// --- PGM -------------------------------------------------------------------

struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::uint32_t maxval = 0;
    std::vector<std::uint16_t> values;
};

inline PgmImage decode_pgm(std::string_view bytes) {
    std::size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&]() -> std::uint64_t {
        skip_ws();
        std::uint64_t v = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + static_cast<std::uint64_t>(bytes[pos] - '0');
            ++pos;
            if (++digits > 9) throw IoError("PGM header value too large");
        }
        if (digits == 0) throw IoError("malformed PGM header");
        return v;
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw IoError("not a binary PGM (P5)");
    pos = 2;
    PgmImage img;
    img.width = read_uint();
    img.height = read_uint();
    const auto maxval = read_uint();
    if (img.width == 0 || img.height == 0) throw IoError("PGM with zero dimension");
    if (maxval == 0 || maxval > 65535) throw IoError("PGM maxval out of range");
    img.maxval = static_cast<std::uint32_t>(maxval);
    // exactly one whitespace byte separates the header from the raster
    if (pos >= bytes.size()) throw IoError("truncated PGM");
    ++pos;

    const std::size_t count = img.width * img.height;
    const std::size_t bpp = img.maxval < 256 ? 1 : 2;
    if (bytes.size() - pos < count * bpp) throw IoError("truncated PGM raster");
    img.values.resize(count);
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint16_t v = bpp == 1 ? raw[i]
                                         : static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
        if (v > img.maxval) throw IoError("PGM sample exceeds maxval");
        img.values[i] = v;
    }
    return img;
}

inline std::string encode_pgm(const PgmImage& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                      std::to_string(img.maxval) + "\n";
    const bool wide = img.maxval >= 256;
    out.reserve(out.size() + img.values.size() * (wide ? 2 : 1));
    for (std::uint16_t v : img.values) {
        if (wide) {
            out.push_back(static_cast<char>(v >> 8));
            out.push_back(static_cast<char>(v & 0xFF));
        } else {
            out.push_back(static_cast<char>(v));
        }
    }
    return out;
}

inline Image pgm_to_image(const PgmImage& pgm) {
    std::vector<double> px(pgm.values.size());
    const double scale = static_cast<double>(pgm.maxval);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(pgm.values[i]) / scale;
    return Image(pgm.width, pgm.height, std::move(px));
}

inline PgmImage image_to_pgm(const Image& img, std::uint32_t maxval) {
    PgmImage pgm{img.width(), img.height(), maxval, {}};
    pgm.values.resize(img.size());
    const auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double v = std::clamp(px[i], 0.0, 1.0) * maxval;
        pgm.values[i] = static_cast<std::uint16_t>(std::lround(v));
    }
    return pgm;
}

/// Rounds every pixel to the frame's stored bit depth, so that a saved and
/// reloaded frame compares equal.
inline void quantize(Frame& f) {
    const double m = static_cast<double>(f.maxval);
    for (double& v : f.image.pixels()) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * m)) / m;
}

// --- container -------------------------------------------------------------

inline std::string frame_file_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frames/%06zu.pgm", index);
    return buf;
}

inline FrameStream load_stream(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw IoError("missing manifest: " + manifest_path.string());
    const nlohmann::json manifest = detail::read_json(manifest_path);

    FrameStream stream;
    Modality modality;
    try {
        stream.source_id = manifest.at("source_id").get<std::string>();
        modality = parse_modality(manifest.at("modality").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError("invalid manifest " + manifest_path.string() + ": " + e.what());
    }
    const auto& entries = manifest.at("frames");
    stream.frames.reserve(entries.size());
    for (const auto& entry : entries) {
        const fs::path file = dir / entry.at("file").get<std::string>();
        if (!fs::exists(file)) throw IoError("missing frame: " + file.string());
        const PgmImage pgm = decode_pgm(detail::read_file(file));
        Frame f;
        f.image = pgm_to_image(pgm);
        f.timestamp_ms = entry.at("timestamp_ms").get<std::uint64_t>();
        f.modality = modality;
        f.maxval = pgm.maxval;
        if (!stream.frames.empty()) {
            const Frame& prev = stream.frames.back();
            if (!f.image.same_shape(prev.image)) throw IoError("frame dimension mismatch: " + file.string());
            if (f.timestamp_ms <= prev.timestamp_ms) throw IoError("non-monotone timestamps at " + file.string());
        }
        stream.frames.push_back(std::move(f));
    }
    validate_stream(stream);
    return stream;
}

inline void save_stream(const FrameStream& stream, const fs::path& dir) {
    validate_stream(stream);
    fs::create_directories(dir / "frames");
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t i = 0; i < stream.frames.size(); ++i) {
        const Frame& f = stream.frames[i];
        const std::string name = frame_file_name(i);
        detail::write_file(dir / name, encode_pgm(image_to_pgm(f.image, f.maxval)));
        frames.push_back({{"file", name}, {"timestamp_ms", f.timestamp_ms}});
    }
    const Modality modality = stream.empty() ? Modality::synthetic : stream.frames.front().modality;
    nlohmann::json manifest = {
        {"source_id", stream.source_id},
        {"modality", std::string(to_string(modality))},
        {"frames", std::move(frames)},
    };
    detail::write_json(dir / "manifest.json", manifest);
}

} // namespace llambda
